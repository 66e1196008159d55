#include "lasp/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lasp/rng.hpp"

namespace lasp {

namespace {

Tensor flipped(const Tensor& im) {
    const std::size_t h = im.dim(0), w = im.dim(1), c = im.dim(2);
    std::vector<double> out(im.numel());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = im.values()[(y * w + (w - 1 - x)) * c + k];
    return Tensor::from(im.shape(), std::move(out));
}

constexpr std::uint64_t split_salt = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t order_salt = 0xbf58476d1ce4e5b9ull;

}  // namespace

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (shots == 0) throw ConfigError("shots must be at least 1");
    if (M == 0 || G == 0) throw ConfigError("M and G must be positive");
    if (!std::isfinite(alpha_vl) || !std::isfinite(alpha_tt)) throw ConfigError("loss weights must be finite");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

Schedule make_schedule(std::size_t n_examples, const TrainConfig& cfg) {
    Schedule s;
    s.steps_per_epoch = std::max<std::size_t>(1, n_examples / cfg.batch_size);
    s.total_steps = cfg.epochs * s.steps_per_epoch;
    return s;
}

double learning_rate_at(std::size_t step, const Schedule& s, const TrainConfig& cfg) {
    const std::size_t warm = std::min(cfg.warmup_epochs * s.steps_per_epoch, s.total_steps);
    if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
    if (s.total_steps <= warm) return 0.0;
    double t = static_cast<double>(step + 1 - warm) / static_cast<double>(s.total_steps - warm);
    t = std::min(t, 1.0);
    return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * t));
}

FewShotDataset sample_few_shot(const FewShotDataset& full, std::size_t num_classes, std::size_t shots,
                               std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < full.examples.size(); ++i) {
        auto y = full.examples[i].label;
        if (y >= num_classes) throw DataError("few-shot: label " + std::to_string(y) + " out of range");
        by_class[y].push_back(i);
    }
    Rng rng(seed);
    FewShotDataset out;
    out.split = "base-train";
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (by_class[c].size() < shots)
            throw DataError("few-shot: class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                            " examples, need " + std::to_string(shots));
        rng.shuffle(by_class[c]);
        for (std::size_t k = 0; k < shots; ++k) out.examples.push_back(full.examples[by_class[c][k]]);
    }
    return out;
}

NamedTensors state_tensors(const TrainState& s, const DualEncoder& enc) {
    NamedTensors out{{"prompts", s.prompts.vectors}, {"bias", s.prompts.bias}};
    auto names = enc.vision().ln_names();
    for (std::size_t i = 0; i < s.ln.size(); ++i) out.emplace_back(names[i], s.ln[i]);
    return out;
}

NamedTensors trainable_parameters(const TrainState& s, const TrainConfig& cfg, const DualEncoder& enc) {
    auto all = state_tensors(s, enc);
    if (!cfg.ln) all.resize(2);
    return all;
}

TrainState init_state(const DualEncoder& enc, const TemplateBank& bank, const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.prompts = init_prompts(cfg.G, cfg.M, enc.config().d_tok, enc.config().d, cfg.seed, cfg.prompt_std);
    s.ln = enc.vision().clone_ln(cfg.ln);
    s.bank = split_templates(bank, cfg.G, cfg.seed ^ split_salt);
    return s;
}

TrainContext make_context(const DualEncoder& enc, const TemplateBank& bank, const std::vector<std::string>& base_names,
                          const TrainConfig& cfg) {
    TrainContext ctx;
    ctx.enc = &enc;
    ctx.vocab = make_vocabulary(base_names, cfg.virtual_names);
    if (cfg.alpha_tt != 0.0) ctx.anchors = compute_anchors(enc, bank, ctx.vocab.combined());
    return ctx;
}

LossBreakdown compute_losses(const TrainContext& ctx, const TrainState& state, const std::vector<Example>& batch,
                             const TrainConfig& cfg, Tensor* total_out) {
    const auto& enc = *ctx.enc;
    const bool use_tt = cfg.alpha_tt != 0.0;
    const std::size_t n_base = ctx.vocab.base_names.size();
    auto names = use_tt ? ctx.vocab.combined() : ctx.vocab.base_names;
    auto w = build_classifier(enc, state.prompts, names);
    auto wb = apply_bias_correction(w.first_classes(n_base), state.prompts.bias);

    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    for (auto& e : batch) {
        images.push_back(e.image);
        labels.push_back(e.label);
    }
    auto feats = enc.vision().encode_batch(images, &state.ln);
    auto l_vl = vl_loss(wb, feats, labels, enc.tau());

    std::optional<Tensor> l_tt;
    if (use_tt) l_tt = grouped_tt_loss(ctx.anchors, w, state.bank, enc.tau(), cfg.loss, cfg.tt_reduction);
    auto total = combined_loss(l_vl, l_tt, cfg.alpha_vl, cfg.alpha_tt);
    if (total_out) *total_out = total;
    return {l_vl.item(), l_tt ? l_tt->item() : 0.0, total.item()};
}

LossBreakdown train_step(const TrainContext& ctx, TrainState& state, const std::vector<Example>& batch,
                         const TrainConfig& cfg, double lr) {
    Tensor total;
    auto out = compute_losses(ctx, state, batch, cfg, &total);
    if (!std::isfinite(out.total) || out.total > 1e6)
        throw DivergenceError("loss diverged at step " + std::to_string(state.step) + ": " + std::to_string(out.total),
                              state.step);
    auto params = trainable_parameters(state, cfg, *ctx.enc);
    for (auto& [name, p] : params) p.clear_grad();
    total.backward();
    if (cfg.momentum > 0.0 && state.velocity.size() != params.size()) {
        state.velocity.clear();
        for (auto& [name, p] : params) state.velocity.push_back(Tensor::zeros(p.shape()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        if (!p.has_grad()) continue;
        auto& x = p.mutable_values();
        const auto& g = p.grad();
        if (cfg.momentum > 0.0) {
            auto& v = state.velocity[i].mutable_values();
            for (std::size_t k = 0; k < x.size(); ++k) {
                v[k] = cfg.momentum * v[k] + g[k];
                x[k] -= lr * v[k];
            }
        } else {
            for (std::size_t k = 0; k < x.size(); ++k) x[k] -= lr * g[k];
        }
        p.clear_grad();
    }
    ++state.step;
    return out;
}

FitResult fit(const DualEncoder& enc, const FewShotDataset& train, const std::vector<std::string>& base_names,
              const TemplateBank& bank, const TrainConfig& cfg, const std::function<void(const LogLine&)>& on_epoch) {
    FitResult res{init_state(enc, bank, cfg), {}};
    if (cfg.epochs == 0 || train.examples.empty()) return res;
    for (auto& e : train.examples)
        if (e.label >= base_names.size()) throw DataError("training label outside the base classes");
    auto ctx = make_context(enc, bank, base_names, cfg);
    const auto sched = make_schedule(train.examples.size(), cfg);
    const std::size_t bs = std::min(cfg.batch_size, train.examples.size());
    Rng rng(cfg.seed ^ order_salt);
    for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
        auto order = rng.permutation(train.examples.size());
        LogLine line{ep, 0, 0.0, 0.0, 0.0, 0.0};
        for (std::size_t s = 0; s < sched.steps_per_epoch; ++s) {
            std::vector<Example> batch;
            for (std::size_t k = 0; k < bs; ++k) {
                auto e = train.examples[order[s * bs + k]];
                if (cfg.flip && rng.below(2)) e.image = flipped(e.image);
                batch.push_back(std::move(e));
            }
            const double lr = learning_rate_at(res.state.step, sched, cfg);
            auto l = train_step(ctx, res.state, batch, cfg, lr);
            line.step = res.state.step;
            line.lr = lr;
            line.vl += l.vl / static_cast<double>(sched.steps_per_epoch);
            line.tt += l.tt / static_cast<double>(sched.steps_per_epoch);
            line.total += l.total / static_cast<double>(sched.steps_per_epoch);
        }
        res.log.push_back(line);
        if (on_epoch) on_epoch(line);
    }
    return res;
}

std::string format_log_line(const LogLine& l) {
    std::ostringstream os;
    os.precision(10);
    os << l.epoch << ", " << l.step << ", " << l.lr << ", " << l.vl << ", " << l.tt << ", " << l.total;
    return os.str();
}

std::string checkpoint_bytes(const TrainState& s, const DualEncoder& enc, const std::string& config_echo) {
    std::ostringstream os;
    os << "lasp-checkpoint 1\n";
    os << "step " << s.step << "\n";
    std::istringstream cfg(config_echo);
    std::string line;
    while (std::getline(cfg, line))
        if (!line.empty()) os << "config " << line << "\n";
    os << "tensors\n";
    auto tensors = state_tensors(s, enc);
    std::vector<double> groups(s.bank.group_of.begin(), s.bank.group_of.end());
    tensors.emplace_back("templates.group_of", Tensor::from({groups.size()}, groups));
    os << snapshot_bytes(tensors);
    return os.str();
}

void save_checkpoint(const std::string& path, const TrainState& s, const DualEncoder& enc,
                     const std::string& config_echo) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    auto bytes = checkpoint_bytes(s, enc, config_echo);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainState load_checkpoint(const std::string& path, const DualEncoder& enc, const TemplateBank& bank,
                           const TrainConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint " + path);
    std::string line;
    std::getline(f, line);
    if (line != "lasp-checkpoint 1") throw DataError(path + ": not a checkpoint");
    TrainState s = init_state(enc, bank, cfg);
    while (std::getline(f, line) && line != "tensors")
        if (line.rfind("step ", 0) == 0) s.step = std::stoull(line.substr(5));
    auto tensors = read_snapshot(f, path);
    auto names = enc.vision().ln_names();
    for (auto& [name, t] : tensors) {
        if (name == "prompts") {
            if (t.shape() != s.prompts.vectors.shape())
                throw DataError(path + ": prompt shape " + shape_str(t.shape()) + " does not match the config");
            s.prompts.vectors.mutable_values() = t.values();
        } else if (name == "bias") {
            s.prompts.bias.mutable_values() = t.values();
        } else if (name == "templates.group_of") {
            if (t.numel() != s.bank.size()) throw DataError(path + ": template assignment does not match the bank");
            for (std::size_t l = 0; l < t.numel(); ++l) s.bank.group_of[l] = static_cast<std::size_t>(t[l]);
        } else {
            for (std::size_t i = 0; i < names.size(); ++i)
                if (names[i] == name) s.ln[i].mutable_values() = t.values();
        }
    }
    return s;
}

}  // namespace lasp
