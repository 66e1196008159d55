#include "lasp/experiments.hpp"

#include <cstdio>
#include <sstream>

#include "lasp/dataset.hpp"
#include "lasp/lexicon.hpp"

namespace lasp {

std::vector<std::string> World::all_names() const {
    auto all = data.base_names;
    all.insert(all.end(), data.new_names.begin(), data.new_names.end());
    return all;
}

FewShotDataset World::generalized_test() const {
    FewShotDataset g;
    g.split = "generalized-test";
    g.examples = data.base_test.examples;
    for (auto& e : data.new_test.examples) g.examples.push_back({e.image, e.label + data.base_names.size()});
    return g;
}

World make_world(const EncoderConfig& ec, const SyntheticDatasetSpec& spec, TemplateBank bank) {
    World w{DualEncoder(ec), std::move(bank), {}};
    w.data = make_synthetic_dataset(spec, w.enc, w.bank);
    return w;
}

TemplateBank template_bank(const std::string& kind, std::size_t n, std::uint64_t seed) {
    if (kind.rfind("file:", 0) == 0) return load_templates(kind.substr(5));
    if (n == 0) throw ConfigError("template count must be positive");
    if (kind == "hand") {
        if (n == 1) return make_bank({lexicon::single_template()});
        return make_bank(lexicon::hand_style_templates(n));
    }
    if (kind == "random") return generate_random_templates(n, 2, 6, seed);
    throw ConfigError("unknown template kind " + kind + " (hand, random, file:<path>)");
}

World world_from_config(const Config& c) {
    auto bank = template_bank(c.get("templates"), c.count("templates.count"), c.seed("seed"));
    const auto& manifest = c.get("data.manifest");
    if (manifest.empty()) return make_world(encoder_config(c), synthetic_spec(c), std::move(bank));
    World w{DualEncoder(encoder_config(c)), std::move(bank), {}};
    auto d = load_dataset(read_manifest(manifest));
    w.data.base_names = d.base_names;
    w.data.new_names = d.new_names;
    w.data.base_train = d.base_train;
    w.data.base_test = d.base_test;
    w.data.new_test = d.new_test;
    return w;
}

std::vector<std::string> virtual_names(const World& w, const std::string& kind) {
    if (kind == "none") return {};
    if (kind == "new") return w.data.new_names;
    if (kind == "distractors") return w.data.distractors;
    if (kind == "outside") return w.data.outside_names;
    if (kind == "new+distractors") {
        auto v = w.data.new_names;
        v.insert(v.end(), w.data.distractors.begin(), w.data.distractors.end());
        return v;
    }
    throw ConfigError("unknown virtual class set " + kind);
}

RunMetrics evaluate_state(const World& w, const TrainState& state, const RunOptions& opt) {
    const auto& d = w.data;
    RunMetrics m;
    auto rep = evaluate_base_new(w.enc, &state, d.base_test, d.new_test, d.base_names, d.new_names, Mode::Learned,
                                 w.bank);
    m.base = rep.base;
    m.novel = rep.novel;
    m.H = rep.H;
    const auto all = w.all_names();
    if (opt.distances)
        m.distance = centroid_distance_matrix(final_class_embeddings(Classifier::learned(w.enc, state, all).weights()))
                         .mean_off_diagonal;
    if (opt.distractors) {
        auto gen = w.generalized_test();
        auto r = evaluate_generalized(w.enc, &state, gen, all, *opt.distractors, Mode::Learned, w.bank);
        m.gen = r.without;
        m.gen_with = r.with;
        FewShotDataset b{{gen.examples.begin(), gen.examples.begin() + static_cast<long>(d.base_test.examples.size())},
                         "base-test"};
        FewShotDataset n{{gen.examples.begin() + static_cast<long>(d.base_test.examples.size()), gen.examples.end()},
                         "new-test"};
        auto rb = evaluate_generalized(w.enc, &state, b, all, *opt.distractors, Mode::Learned, w.bank);
        auto rn = evaluate_generalized(w.enc, &state, n, all, *opt.distractors, Mode::Learned, w.bank);
        m.gen_base = rb.without;
        m.gen_with_base = rb.with;
        m.gen_new = rn.without;
        m.gen_with_new = rn.with;
    }
    return m;
}

RunMetrics train_and_evaluate(const World& w, const TrainConfig& cfg, const RunOptions& opt, FitResult* fit_out) {
    auto train = sample_few_shot(w.data.base_train, w.data.base_names.size(), cfg.shots, cfg.seed);
    auto res = fit(w.enc, train, w.data.base_names, w.bank, cfg);
    auto m = evaluate_state(w, res.state, opt);
    if (fit_out) *fit_out = std::move(res);
    return m;
}

RunMetrics mean_over_seeds(const World& w, TrainConfig cfg, std::size_t seeds, const RunOptions& opt) {
    if (seeds == 0) throw ConfigError("need at least one seed");
    RunMetrics acc;
    for (std::size_t s = 1; s <= seeds; ++s) {
        cfg.seed = s;
        auto m = train_and_evaluate(w, cfg, opt);
        const double k = 1.0 / static_cast<double>(seeds);
        acc.base += k * m.base;
        acc.novel += k * m.novel;
        acc.distance += k * m.distance;
        acc.gen += k * m.gen;
        acc.gen_with += k * m.gen_with;
        acc.gen_base += k * m.gen_base;
        acc.gen_new += k * m.gen_new;
        acc.gen_with_base += k * m.gen_with_base;
        acc.gen_with_new += k * m.gen_with_new;
    }
    acc.H = harmonic_mean(acc.base, acc.novel);
    return acc;
}

std::string Table::text() const {
    std::ostringstream os;
    os << title << '\n';
    std::size_t w0 = 8;
    for (auto& [name, v] : rows) w0 = std::max(w0, name.size() + 2);
    std::vector<std::size_t> widths;
    for (auto& c : columns) widths.push_back(std::max<std::size_t>(9, c.size() + 2));
    os << std::string(w0, ' ');
    for (std::size_t j = 0; j < columns.size(); ++j) os << std::string(widths[j] - columns[j].size(), ' ') << columns[j];
    os << '\n';
    for (auto& [name, v] : rows) {
        os << name << std::string(w0 - name.size(), ' ');
        for (std::size_t j = 0; j < v.size(); ++j) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", v[j]);
            os << std::string(widths[j] - std::string(buf).size(), ' ') << buf;
        }
        os << '\n';
    }
    return os.str();
}

std::string Table::kv(const std::string& prefix) const {
    std::ostringstream os;
    os.precision(17);
    for (auto& [name, v] : rows)
        for (std::size_t j = 0; j < v.size(); ++j) os << prefix << ' ' << name << '/' << columns[j] << ' ' << v[j] << '\n';
    return os.str();
}

Table ablate_templates(const World& w, const TrainConfig& cfg, std::size_t seeds, std::uint64_t bank_seed) {
    Table t{"new-class accuracy by template count and content", {"1", "34", "100"}, {}};
    for (const std::string kind : {"hand", "random"}) {
        std::vector<double> row;
        for (std::size_t n : {1, 34, 100}) {
            World v{w.enc, template_bank(kind, n, bank_seed), w.data};
            auto c = cfg;
            c.G = std::min(cfg.G, n);
            row.push_back(mean_over_seeds(v, c, seeds, {nullptr, false}).novel);
        }
        t.rows.emplace_back(kind, row);
    }
    return t;
}

Table ablate_loss(const World& w, const TrainConfig& cfg, std::size_t seeds) {
    Table t{"text-to-text loss type", {"ce", "l1", "l2"}, {{"base", {}}, {"new", {}}, {"H", {}}}};
    for (auto kind : {TTLossKind::CE, TTLossKind::L1, TTLossKind::L2}) {
        auto c = cfg;
        c.loss = kind;
        auto m = mean_over_seeds(w, c, seeds, {nullptr, false});
        t.rows[0].second.push_back(m.base);
        t.rows[1].second.push_back(m.novel);
        t.rows[2].second.push_back(m.H);
    }
    return t;
}

Table ablate_components(const World& w, const TrainConfig& cfg, std::size_t seeds) {
    Table t{"effect of components",
            {"baseline", "+text-to-text", "+grouped", "+align", "+virtual"},
            {{"base", {}}, {"new", {}}, {"H", {}}}};
    std::vector<TrainConfig> ladder;
    auto c = cfg;
    c.alpha_tt = 0.0;
    c.G = 1;
    c.ln = false;
    c.virtual_names.clear();
    ladder.push_back(c);
    c.alpha_tt = cfg.alpha_tt == 0.0 ? 20.0 : cfg.alpha_tt;
    ladder.push_back(c);
    c.G = std::max<std::size_t>(cfg.G, 2);
    ladder.push_back(c);
    c.ln = true;
    ladder.push_back(c);
    c.virtual_names = w.data.new_names;
    ladder.push_back(c);
    for (auto& l : ladder) {
        auto m = mean_over_seeds(w, l, seeds, {nullptr, false});
        t.rows[0].second.push_back(m.base);
        t.rows[1].second.push_back(m.novel);
        t.rows[2].second.push_back(m.H);
    }
    return t;
}

Table distractor_protocol(const World& w, const TrainConfig& cfg, std::size_t seeds,
                          const std::vector<std::string>& distractors, const std::string& title) {
    Table t{title, {"base", "new", "H", "all", "base+d", "new+d", "H+d", "all+d"}, {}};
    auto c = cfg;
    c.virtual_names.clear();
    for (const std::string name : {"lasp", "lasp-v"}) {
        if (name == "lasp-v") c.virtual_names = distractors;
        auto m = mean_over_seeds(w, c, seeds, {&distractors, false});
        t.rows.emplace_back(name, std::vector<double>{m.gen_base, m.gen_new, harmonic_mean(m.gen_base, m.gen_new), m.gen,
                                                      m.gen_with_base, m.gen_with_new,
                                                      harmonic_mean(m.gen_with_base, m.gen_with_new), m.gen_with});
    }
    return t;
}

}  // namespace lasp
