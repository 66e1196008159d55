#include "lasp/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lasp/dataset.hpp"
#include "lasp/experiments.hpp"

namespace lasp {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string full(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

TrainConfig run_train_config(const Config& c, const World& w) {
    auto t = train_config(c);
    t.virtual_names = virtual_names(w, c.get("train.virtual"));
    return t;
}

void cmd_train(const Config& c, const fs::path& dir) {
    auto w = world_from_config(c);
    auto cfg = run_train_config(c, w);
    auto train = sample_few_shot(w.data.base_train, w.data.base_names.size(), cfg.shots, cfg.seed);
    std::ofstream log(dir / "train.log");
    log << "# epoch, step, lr, L_VL, L_TT, total\n";
    auto res = fit(w.enc, train, w.data.base_names, w.bank, cfg, [&](const LogLine& l) {
        log << format_log_line(l) << '\n';
        log.flush();
    });
    save_checkpoint((dir / "checkpoint.bin").string(), res.state, w.enc, c.echo());
}

void write_matrix(const fs::path& p, const Tensor& m) {
    std::ostringstream os;
    os.precision(10);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m.at(i, j);
        os << '\n';
    }
    write_file(p, os.str());
}

void cmd_eval(const Config& c, const fs::path& dir) {
    auto w = world_from_config(c);
    auto cfg = run_train_config(c, w);
    const auto& mode_s = c.get("eval.mode");
    if (mode_s != "learned" && mode_s != "hand") throw ConfigError("eval.mode must be learned or hand");
    const Mode mode = mode_s == "hand" ? Mode::HandCrafted : Mode::Learned;
    const auto& ckpt = c.get("eval.checkpoint");
    auto state = ckpt.empty() ? init_state(w.enc, w.bank, cfg) : load_checkpoint(ckpt, w.enc, w.bank, cfg);
    const TrainState* sp = mode == Mode::Learned ? &state : nullptr;
    const auto& d = w.data;

    auto rep = evaluate_base_new(w.enc, sp, d.base_test, d.new_test, d.base_names, d.new_names, mode, w.bank);
    const auto all = w.all_names();
    auto emb = mode == Mode::Learned ? final_class_embeddings(Classifier::learned(w.enc, state, all).weights())
                                     : ensemble_class_embeddings(compute_anchors(w.enc, w.bank, all));
    rep.distances = centroid_distance_matrix(emb);
    rep.distractors = evaluate_generalized(w.enc, sp, w.generalized_test(), all, d.distractors, mode, w.bank);

    std::ostringstream txt, kv;
    kv.precision(17);
    txt << "mode " << mode_s << ", " << (ckpt.empty() ? "untrained prompts" : "checkpoint " + ckpt) << "\n\n";
    txt << "split     accuracy\n";
    txt << "base      " << fixed(rep.base) << "\nnew       " << fixed(rep.novel) << "\nH         " << fixed(rep.H)
        << "\n\nper-class accuracy\n";
    kv << "accuracy base " << rep.base << "\naccuracy new " << rep.novel << "\nharmonic_mean all " << rep.H << '\n';
    for (std::size_t i = 0; i < d.base_names.size(); ++i) {
        txt << "  base " << d.base_names[i] << "  " << fixed(rep.per_class_base[i]) << '\n';
        kv << "class_accuracy base/" << d.base_names[i] << ' ' << rep.per_class_base[i] << '\n';
    }
    for (std::size_t i = 0; i < d.new_names.size(); ++i) {
        txt << "  new  " << d.new_names[i] << "  " << fixed(rep.per_class_new[i]) << '\n';
        kv << "class_accuracy new/" << d.new_names[i] << ' ' << rep.per_class_new[i] << '\n';
    }
    txt << "\nmean centroid distance " << fixed(rep.distances->mean_off_diagonal, 4) << '\n';
    txt << "generalized accuracy " << fixed(rep.distractors->without) << ", with " << d.distractors.size()
        << " distractors " << fixed(rep.distractors->with) << '\n';
    kv << "centroid_distance mean " << rep.distances->mean_off_diagonal << '\n';
    kv << "generalized without " << rep.distractors->without << '\n';
    kv << "generalized with_distractors " << rep.distractors->with << '\n';
    write_file(dir / "report.txt", txt.str());
    write_file(dir / "report.kv", kv.str());
    fs::create_directories(dir / "matrices");
    write_matrix(dir / "matrices" / "centroid_distance.txt", rep.distances->matrix);
    std::string names;
    for (auto& n : all) names += n + '\n';
    write_file(dir / "matrices" / "classes.txt", names);
}

void write_tables(const fs::path& dir, const std::vector<Table>& tables, const std::vector<std::string>& prefixes) {
    std::string txt, kv;
    for (std::size_t i = 0; i < tables.size(); ++i) {
        txt += (i ? "\n" : "") + tables[i].text();
        kv += tables[i].kv(prefixes[i]);
    }
    write_file(dir / "report.txt", txt);
    write_file(dir / "report.kv", kv);
}

void cmd_report(const Config& c, const fs::path& dir) {
    auto inputs = c.list("report.inputs");
    if (inputs.empty()) throw ConfigError("report needs report.inputs=<run dir>[,<run dir>...]");
    std::string txt, kv;
    for (auto& in : inputs) {
        std::ifstream f(fs::path(in) / "report.kv");
        if (!f) throw DataError("no report.kv in " + in);
        txt += "== " + in + '\n';
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::istringstream is(line);
            std::string name, split;
            double v = 0.0;
            if (!(is >> name >> split >> v)) throw DataError(in + "/report.kv: malformed line: " + line);
            char buf[256];
            std::snprintf(buf, sizeof buf, "%-24s %-32s %10.4f\n", name.c_str(), split.c_str(), v);
            txt += buf;
            kv += fs::path(in).filename().string() + "." + name + ' ' + split + ' ' + full(v) + '\n';
        }
    }
    write_file(dir / "report.txt", txt);
    write_file(dir / "report.kv", kv);
}

}  // namespace

const std::vector<std::string>& commands() {
    static const std::vector<std::string> c = {"train",           "eval",     "ablate-templates", "ablate-loss",
                                               "ablate-components", "distract", "report"};
    return c;
}

std::string resolve_run_dir(const std::string& out, const std::string& command) {
    const char* env = std::getenv("LASP_OUT_ROOT");
    const fs::path root = env && *env ? fs::path(env) : fs::current_path();
    return (root / (out.empty() ? fs::path("runs") / command : fs::path(out))).string();
}

void run_command(const std::string& command, const Config& c, const std::string& run_dir) {
    const fs::path dir(run_dir);
    fs::create_directories(dir);
    write_file(dir / "config.echo", c.echo());
    const auto seeds = c.count("seeds");
    if (command == "train") {
        cmd_train(c, dir);
    } else if (command == "eval") {
        cmd_eval(c, dir);
    } else if (command == "ablate-templates") {
        auto w = world_from_config(c);
        write_tables(dir, {ablate_templates(w, run_train_config(c, w), seeds, c.seed("seed"))}, {"template_new_accuracy"});
    } else if (command == "ablate-loss") {
        auto w = world_from_config(c);
        write_tables(dir, {ablate_loss(w, run_train_config(c, w), seeds)}, {"loss_ablation"});
    } else if (command == "ablate-components") {
        auto w = world_from_config(c);
        write_tables(dir, {ablate_components(w, run_train_config(c, w), seeds)}, {"components"});
    } else if (command == "distract") {
        auto w = world_from_config(c);
        if (w.data.distractors.empty()) throw DataError("distract needs a synthetic dataset (no data.manifest)");
        auto cfg = run_train_config(c, w);
        write_tables(dir,
                     {distractor_protocol(w, cfg, seeds, w.data.distractors, "in-domain distractors"),
                      distractor_protocol(w, cfg, seeds, w.data.outside_names, "out-of-domain distractors")},
                     {"in_domain", "out_of_domain"});
    } else if (command == "report") {
        cmd_report(c, dir);
    } else {
        throw ConfigError("unknown command " + command);
    }
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"language-aware soft prompting on a miniature dual encoder"};
    std::string command, config_path, out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    app.add_option("command", command, "train | eval | ablate-templates | ablate-loss | ablate-components | distract | report")
        ->required()
        ->check(CLI::IsMember(commands()));
    app.add_option("--config", config_path, "flat key=value config file");
    app.add_option("--seed", seed, "training seed");
    app.add_option("--out", out, "run directory, relative to $LASP_OUT_ROOT when set");
    app.add_option("--set", sets, "key=value override (repeatable)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }
    try {
        auto cfg = config_path.empty() ? Config() : Config::load(config_path);
        for (auto& s : sets) cfg.apply_override(s);
        if (seed) cfg.set("seed", std::to_string(*seed));
        const auto dir = resolve_run_dir(out, command);
        run_command(command, cfg, dir);
        std::cout << dir << '\n';
        return exit_ok;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const TemplateError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const ProtocolError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const InputError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return exit_divergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace lasp
