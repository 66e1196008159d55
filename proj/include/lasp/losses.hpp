#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lasp/encoders.hpp"
#include "lasp/prompts.hpp"

namespace lasp {

enum class TTLossKind { CE, L1, L2 };
enum class Reduction { Mean, Sum };

TTLossKind parse_loss_kind(const std::string& s);
std::string to_string(TTLossKind k);

// Frozen features of every template rendered with every class; row l*C + c.
struct TextAnchors {
    Tensor features;    // [L*C, d]
    Tensor normalized;  // unit rows of features
    std::size_t L = 0, C = 0;

    Tensor template_rows(std::size_t l) const;  // [C, d]
    TextAnchors restrict_classes(const std::vector<std::size_t>& classes) const;
};

TextAnchors make_anchors(Tensor features, std::size_t L, std::size_t C);
TextAnchors compute_anchors(const DualEncoder& enc, const TemplateBank& bank, const std::vector<std::string>& names);

// Per-group learned class features t_c^{r,g}.
struct ClassifierWeights {
    std::vector<Tensor> groups;  // G x [C, d]
    bool bias_applied = false;

    std::size_t G() const { return groups.size(); }
    std::size_t C() const { return groups.empty() ? 0 : groups[0].rows(); }
    ClassifierWeights first_classes(std::size_t n) const;
};

ClassifierWeights build_classifier(const DualEncoder& enc, const PromptSet& prompts,
                                   const std::vector<std::string>& names);
ClassifierWeights apply_bias_correction(const ClassifierWeights& w, const Tensor& b);

Tensor zero_shot_distribution(const TextAnchors& anchors, std::size_t l, const Tensor& f, double tau);
Tensor vl_distribution(const Tensor& rows, const Tensor& f, double tau);

// mean over groups of cos(t_c^{r,g}, f); feats [n, d] -> [n, C]
Tensor grouped_inference_scores(const ClassifierWeights& w, const Tensor& feats);
Tensor vl_loss(const ClassifierWeights& w, const Tensor& feats, const std::vector<std::size_t>& labels, double tau);

// mean over l in S of softmax_c(cos(t_c^{h,l}, t_r)/tau); t_r [k, d] -> [k, C]
Tensor text_class_distribution(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
                               double tau);
// row k of t_r is the learnable feature of class classes[k]
Tensor tt_loss(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
               const std::vector<std::size_t>& classes, double tau, Reduction red = Reduction::Mean);
// distance to the template-mean anchor of each class
Tensor regression_tt_loss(const TextAnchors& anchors, const std::vector<std::size_t>& S, const Tensor& t_r,
                          const std::vector<std::size_t>& classes, TTLossKind kind);
// sum over groups; group g uses its own templates and its own learnable features, rows = all anchor classes
Tensor grouped_tt_loss(const TextAnchors& anchors, const ClassifierWeights& w, const TemplateBank& bank, double tau,
                       TTLossKind kind = TTLossKind::CE, Reduction red = Reduction::Mean);

Tensor combined_loss(const Tensor& l_vl, const std::optional<Tensor>& l_tt, double alpha_vl, double alpha_tt);

}  // namespace lasp
