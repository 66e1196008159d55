#include "lasp/evaluator.hpp"

#include <set>

namespace lasp {

double harmonic_mean(double base, double novel) {
    if (!(base >= 0.0 && base <= 100.0) || !(novel >= 0.0 && novel <= 100.0))
        throw std::invalid_argument("harmonic_mean: accuracies must lie in [0, 100]");
    if (base + novel == 0.0) return 0.0;
    return 2.0 * base * novel / (base + novel);
}

Classifier Classifier::learned(const DualEncoder& enc, const TrainState& state, const std::vector<std::string>& names) {
    if (names.empty()) throw InputError("classifier: empty class set");
    Classifier c;
    c.mode_ = Mode::Learned;
    c.n_classes_ = names.size();
    c.tau_ = enc.tau();
    auto w = apply_bias_correction(build_classifier(enc, state.prompts, names), state.prompts.bias);
    for (auto& g : w.groups) c.weights_.groups.push_back(g.detach());
    c.weights_.bias_applied = true;
    return c;
}

Classifier Classifier::hand_crafted(const DualEncoder& enc, const TemplateBank& bank,
                                    const std::vector<std::string>& names) {
    if (names.empty()) throw InputError("classifier: empty class set");
    Classifier c;
    c.mode_ = Mode::HandCrafted;
    c.n_classes_ = names.size();
    c.tau_ = enc.tau();
    c.anchors_ = compute_anchors(enc, bank, names);
    return c;
}

std::vector<std::vector<double>> Classifier::scores(const Tensor& feats) const {
    const std::size_t n = feats.rows(), C = n_classes_;
    std::vector<std::vector<double>> out(n, std::vector<double>(C, 0.0));
    if (mode_ == Mode::Learned) {
        auto s = grouped_inference_scores(weights_, feats);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < C; ++c) out[i][c] = s.at(i, c);
        return out;
    }
    auto cos = cosine_matrix(feats, anchors_.features);  // [n, L*C]
    auto p = softmax(reshape(scale(cos, 1.0 / tau_), {n * anchors_.L, C}));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < anchors_.L; ++l)
            for (std::size_t c = 0; c < C; ++c)
                out[i][c] += p.at(i * anchors_.L + l, c) / static_cast<double>(anchors_.L);
    return out;
}

std::size_t argmax(const std::vector<double>& v) {
    if (v.empty()) throw InputError("argmax of an empty score vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::vector<std::size_t> Classifier::predict(const Tensor& feats) const {
    std::vector<std::size_t> out;
    for (auto& row : scores(feats)) out.push_back(argmax(row));
    return out;
}

Tensor image_features(const DualEncoder& enc, const TrainState* state, const std::vector<Example>& examples) {
    if (examples.empty()) throw InputError("no images to encode");
    std::vector<Tensor> parts;
    // chunks keep the attention buffers small
    const std::size_t chunk = 128;
    for (std::size_t i = 0; i < examples.size(); i += chunk) {
        std::vector<Tensor> ims;
        for (std::size_t k = i; k < std::min(examples.size(), i + chunk); ++k) ims.push_back(examples[k].image.detach());
        LnParams ln;
        if (state)
            for (auto& t : state->ln) ln.push_back(t.detach());
        parts.push_back(enc.vision().encode_batch(ims, state ? &ln : nullptr));
    }
    return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

namespace {

Classifier make_classifier(const DualEncoder& enc, const TrainState* state, const std::vector<std::string>& names,
                           Mode mode, const TemplateBank& bank) {
    if (mode == Mode::Learned) {
        if (!state) throw InputError("learned-prompt mode needs a trained state");
        return Classifier::learned(enc, *state, names);
    }
    return Classifier::hand_crafted(enc, bank, names);
}

SplitResult accuracy_of(const std::vector<std::size_t>& pred, const FewShotDataset& data, std::size_t n_classes) {
    SplitResult r;
    std::vector<double> hit(n_classes, 0.0), count(n_classes, 0.0);
    double ok = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto y = data.examples[i].label;
        count[y] += 1.0;
        if (pred[i] == y) {
            ok += 1.0;
            hit[y] += 1.0;
        }
    }
    r.accuracy = 100.0 * ok / static_cast<double>(pred.size());
    for (std::size_t c = 0; c < n_classes; ++c) r.per_class.push_back(count[c] > 0 ? 100.0 * hit[c] / count[c] : 0.0);
    return r;
}

void check_labels(const FewShotDataset& data, std::size_t n) {
    if (data.examples.empty()) throw ProtocolError("evaluation split " + data.split + " is empty");
    for (auto& e : data.examples)
        if (e.label >= n)
            throw ProtocolError("label " + std::to_string(e.label) + " outside the evaluated class set of " +
                                std::to_string(n));
}

}  // namespace

std::size_t classify(const DualEncoder& enc, const TrainState* state, const Tensor& image,
                     const std::vector<std::string>& names, Mode mode, const TemplateBank& bank) {
    if (names.empty()) throw InputError("classify: empty class set");
    auto clf = make_classifier(enc, state, names, mode, bank);
    return clf.predict(image_features(enc, state, {Example{image, 0}}))[0];
}

SplitResult evaluate_split(const DualEncoder& enc, const TrainState* state, const FewShotDataset& data,
                           const std::vector<std::string>& names, Mode mode, const TemplateBank& bank) {
    check_labels(data, names.size());
    auto clf = make_classifier(enc, state, names, mode, bank);
    return accuracy_of(clf.predict(image_features(enc, state, data.examples)), data, names.size());
}

DistractorResult evaluate_generalized(const DualEncoder& enc, const TrainState* state, const FewShotDataset& data,
                                      const std::vector<std::string>& names,
                                      const std::vector<std::string>& distractors, Mode mode,
                                      const TemplateBank& bank) {
    check_labels(data, names.size());
    std::set<std::string> seen(names.begin(), names.end());
    for (auto& d : distractors)
        if (!seen.insert(d).second) throw ProtocolError("distractor collides with an existing class: " + d);
    auto feats = image_features(enc, state, data.examples);
    DistractorResult r;
    r.without = accuracy_of(make_classifier(enc, state, names, mode, bank).predict(feats), data, names.size()).accuracy;
    if (distractors.empty()) {
        r.with = r.without;
        return r;
    }
    auto all = names;
    all.insert(all.end(), distractors.begin(), distractors.end());
    r.with = accuracy_of(make_classifier(enc, state, all, mode, bank).predict(feats), data, all.size()).accuracy;
    return r;
}

Tensor final_class_embeddings(const ClassifierWeights& w) {
    Tensor acc;
    for (auto& g : w.groups) {
        auto n = normalize_rows(g.detach());
        acc = acc.defined() ? add(acc, n) : n;
    }
    return normalize_rows(acc);
}

Tensor ensemble_class_embeddings(const TextAnchors& anchors) {
    std::vector<double> acc(anchors.C * anchors.normalized.cols(), 0.0);
    for (std::size_t i = 0; i < anchors.normalized.numel(); ++i) acc[i % acc.size()] += anchors.normalized[i];
    return normalize_rows(Tensor::from({anchors.C, anchors.normalized.cols()}, std::move(acc)));
}

DistanceMatrix centroid_distance_matrix(const Tensor& embeddings) {
    const std::size_t C = embeddings.rows();
    if (C < 2) throw InputError("distance matrix needs at least two classes");
    auto cos = cosine_matrix(embeddings.detach(), embeddings.detach());
    std::vector<double> d(C * C, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) {
            if (i == j) continue;
            // symmetric by construction
            const double v = 1.0 - 0.5 * (cos.at(i, j) + cos.at(j, i));
            d[i * C + j] = v;
            total += v;
        }
    return {Tensor::from({C, C}, std::move(d)), total / static_cast<double>(C * (C - 1))};
}

EvalReport evaluate_base_new(const DualEncoder& enc, const TrainState* state, const FewShotDataset& base_test,
                             const FewShotDataset& new_test, const std::vector<std::string>& base_names,
                             const std::vector<std::string>& new_names, Mode mode, const TemplateBank& bank) {
    EvalReport r;
    auto b = evaluate_split(enc, state, base_test, base_names, mode, bank);
    auto n = evaluate_split(enc, state, new_test, new_names, mode, bank);
    r.base = b.accuracy;
    r.novel = n.accuracy;
    r.per_class_base = b.per_class;
    r.per_class_new = n.per_class;
    r.H = harmonic_mean(r.base, r.novel);
    return r;
}

}  // namespace lasp
