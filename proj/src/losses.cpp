#include "lasp/losses.hpp"

#include <cmath>

namespace lasp {

namespace {

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// normalized anchor rows of templates S, stacked template-major: [|S|*C, d]
Tensor stacked(const TextAnchors& a, const std::vector<std::size_t>& S) {
    std::vector<std::size_t> rows;
    rows.reserve(S.size() * a.C);
    for (auto l : S) {
        if (l >= a.L) throw std::out_of_range("template index " + std::to_string(l));
        for (std::size_t c = 0; c < a.C; ++c) rows.push_back(l * a.C + c);
    }
    return select_rows(a.normalized, rows);
}

void check_classes(const TextAnchors& a, const Tensor& t_r, const std::vector<std::size_t>& classes) {
    if (classes.size() != t_r.rows())
        throw DimensionError("text loss: " + std::to_string(classes.size()) + " classes for " +
                             std::to_string(t_r.rows()) + " features");
    for (auto c : classes)
        if (c >= a.C) throw std::invalid_argument("text loss: class " + std::to_string(c) + " out of range");
}

}  // namespace

TTLossKind parse_loss_kind(const std::string& s) {
    if (s == "ce" || s == "CE") return TTLossKind::CE;
    if (s == "l1" || s == "L1") return TTLossKind::L1;
    if (s == "l2" || s == "L2") return TTLossKind::L2;
    throw ConfigError("unknown loss kind: " + s);
}

std::string to_string(TTLossKind k) {
    switch (k) {
        case TTLossKind::CE: return "ce";
        case TTLossKind::L1: return "l1";
        case TTLossKind::L2: return "l2";
    }
    return "?";
}

Tensor TextAnchors::template_rows(std::size_t l) const { return slice_rows(features, l * C, (l + 1) * C); }

TextAnchors TextAnchors::restrict_classes(const std::vector<std::size_t>& classes) const {
    std::vector<std::size_t> rows;
    for (std::size_t l = 0; l < L; ++l)
        for (auto c : classes) rows.push_back(l * C + c);
    return make_anchors(select_rows(features, rows), L, classes.size());
}

TextAnchors make_anchors(Tensor features, std::size_t L, std::size_t C) {
    if (features.rows() != L * C) throw DimensionError("anchors: expected " + std::to_string(L * C) + " rows");
    TextAnchors a;
    a.features = features.detach();
    a.normalized = normalize_rows(a.features);
    a.L = L;
    a.C = C;
    return a;
}

TextAnchors compute_anchors(const DualEncoder& enc, const TemplateBank& bank, const std::vector<std::string>& names) {
    std::vector<Tensor> seqs;
    for (auto& t : bank.templates)
        for (auto& n : names) seqs.push_back(enc.embed_text(render_template(t, n)));
    return make_anchors(enc.text().encode_batch(seqs), bank.size(), names.size());
}

ClassifierWeights ClassifierWeights::first_classes(std::size_t n) const {
    ClassifierWeights out;
    out.bias_applied = bias_applied;
    for (auto& g : groups) out.groups.push_back(n == g.rows() ? g : slice_rows(g, 0, n));
    return out;
}

ClassifierWeights build_classifier(const DualEncoder& enc, const PromptSet& prompts,
                                   const std::vector<std::string>& names) {
    if (names.empty()) throw InputError("classifier: empty class set");
    std::vector<Tensor> seqs;
    for (std::size_t g = 0; g < prompts.G; ++g)
        for (auto& n : names) seqs.push_back(assemble_learnable_prompt(enc, prompts, g, n));
    auto all = enc.text().encode_batch(seqs);
    ClassifierWeights w;
    const std::size_t C = names.size();
    for (std::size_t g = 0; g < prompts.G; ++g) w.groups.push_back(slice_rows(all, g * C, (g + 1) * C));
    return w;
}

ClassifierWeights apply_bias_correction(const ClassifierWeights& w, const Tensor& b) {
    ClassifierWeights out;
    out.bias_applied = true;
    for (auto& g : w.groups) out.groups.push_back(add_row(g, b));
    return out;
}

Tensor zero_shot_distribution(const TextAnchors& anchors, std::size_t l, const Tensor& f, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    return vl_distribution(anchors.template_rows(l), f, tau);
}

Tensor vl_distribution(const Tensor& rows, const Tensor& f, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    auto cos = cosine_matrix(reshape(f, {1, f.numel()}), rows);
    return reshape(softmax(scale(cos, 1.0 / tau)), {rows.rows()});
}

Tensor grouped_inference_scores(const ClassifierWeights& w, const Tensor& feats) {
    if (w.groups.empty()) throw InputError("classifier has no groups");
    auto f = feats.rank() == 2 ? feats : reshape(feats, {1, feats.numel()});
    auto fn = normalize_rows(f);
    Tensor s;
    for (auto& g : w.groups) {
        auto c = matmul(fn, transpose(normalize_rows(g)));
        s = s.defined() ? add(s, c) : c;
    }
    return w.G() == 1 ? s : scale(s, 1.0 / static_cast<double>(w.G()));
}

Tensor vl_loss(const ClassifierWeights& w, const Tensor& feats, const std::vector<std::size_t>& labels, double tau) {
    for (auto y : labels)
        if (y >= w.C()) throw std::invalid_argument("vl_loss: label " + std::to_string(y) + " out of range");
    return cross_entropy(scale(grouped_inference_scores(w, feats), 1.0 / tau), labels);
}

Tensor text_class_distribution(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
                               double tau) {
    if (S.empty()) throw ConfigError("text distribution: empty template set");
    const std::size_t k = t_r.rows(), C = anchors.C, n = S.size();
    auto tr = t_r.rank() == 2 ? t_r : reshape(t_r, {1, t_r.numel()});
    auto cos = matmul(normalize_rows(tr), transpose(stacked(anchors, S)));  // [k, n*C]
    auto p = softmax(reshape(scale(cos, 1.0 / tau), {k * n, C}));         // one softmax per (row, template)
    if (n == 1) return p;
    std::vector<double> avg(k * k * n, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t l = 0; l < n; ++l) avg[i * k * n + i * n + l] = 1.0 / static_cast<double>(n);
    return matmul(Tensor::from({k, k * n}, std::move(avg)), p);
}

Tensor tt_loss(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
               const std::vector<std::size_t>& classes, double tau, Reduction red) {
    check_classes(anchors, t_r, classes);
    const std::size_t C = anchors.C;
    std::vector<double> onehot(classes.size() * C, 0.0);
    for (std::size_t k = 0; k < classes.size(); ++k) onehot[k * C + classes[k]] = 1.0;
    // log of the true-class probability only; other classes may underflow to 0
    auto picked = matmul(mul(text_class_distribution(anchors, S, t_r, tau), Tensor::from({classes.size(), C}, onehot)),
                         Tensor::full({C, 1}, 1.0));
    auto loss = scale(mean(log(picked)), -1.0);
    return red == Reduction::Sum ? scale(loss, static_cast<double>(classes.size())) : loss;
}

Tensor regression_tt_loss(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
                          const std::vector<std::size_t>& classes, TTLossKind kind) {
    check_classes(anchors, t_r, classes);
    if (S.empty()) throw ConfigError("text loss: empty template set");
    std::vector<double> target(classes.size() * anchors.normalized.cols(), 0.0);
    const std::size_t d = anchors.normalized.cols();
    for (std::size_t k = 0; k < classes.size(); ++k)
        for (auto l : S)
            for (std::size_t j = 0; j < d; ++j)
                target[k * d + j] += anchors.normalized.values()[(l * anchors.C + classes[k]) * d + j] /
                                     static_cast<double>(S.size());
    auto diff = sub(normalize_rows(t_r), Tensor::from({classes.size(), d}, std::move(target)));
    // per-class distance, averaged over classes
    auto ones = Tensor::full({d, 1}, 1.0);
    return mean(kind == TTLossKind::L1 ? matmul(abs(diff), ones) : sqrt(matmul(square(diff), ones)));
}

Tensor grouped_tt_loss(const TextAnchors& anchors, const ClassifierWeights& w, const TemplateBank& bank, double tau,
                       TTLossKind kind, Reduction red) {
    auto members = bank.members();
    if (members.size() != w.G() || bank.group_of.size() != anchors.L)
        throw ConfigError("grouped text loss: bank has " + std::to_string(members.size()) + " groups, weights have " +
                          std::to_string(w.G()));
    auto classes = iota(anchors.C);
    Tensor total;
    for (std::size_t g = 0; g < w.G(); ++g) {
        if (w.groups[g].rows() != anchors.C) throw DimensionError("grouped text loss: class count mismatch");
        auto l = kind == TTLossKind::CE ? tt_loss(anchors, members[g], w.groups[g], classes, tau, red)
                                        : regression_tt_loss(anchors, members[g], w.groups[g], classes, kind);
        total = total.defined() ? add(total, l) : l;
    }
    return total;
}

Tensor combined_loss(const Tensor& l_vl, const std::optional<Tensor>& l_tt, double alpha_vl, double alpha_tt) {
    if (!std::isfinite(alpha_vl) || !std::isfinite(alpha_tt)) throw ConfigError("loss weights must be finite");
    auto vl = scale(l_vl, alpha_vl);
    if (!l_tt || alpha_tt == 0.0) return vl;
    return add(vl, scale(*l_tt, alpha_tt));
}

}  // namespace lasp
