#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lasp/trainer.hpp"

namespace lasp {

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double harmonic_mean(double base, double novel);

enum class Mode { HandCrafted, Learned };

// Class scorer over a fixed class list. Learned mode uses the trained prompts with b applied;
// hand-crafted mode averages per-template softmax probabilities over every template of the bank.
class Classifier {
public:
    static Classifier learned(const DualEncoder& enc, const TrainState& state, const std::vector<std::string>& names);
    static Classifier hand_crafted(const DualEncoder& enc, const TemplateBank& bank,
                                   const std::vector<std::string>& names);

    // feats [n, d] -> scores [n, C]
    std::vector<std::vector<double>> scores(const Tensor& feats) const;
    std::vector<std::size_t> predict(const Tensor& feats) const;
    std::size_t size() const { return n_classes_; }
    const ClassifierWeights& weights() const { return weights_; }

private:
    Mode mode_ = Mode::Learned;
    std::size_t n_classes_ = 0;
    ClassifierWeights weights_;
    TextAnchors anchors_;
    double tau_ = 0.01;
};

// ties resolved toward the lowest index
std::size_t argmax(const std::vector<double>& v);

Tensor image_features(const DualEncoder& enc, const TrainState* state, const std::vector<Example>& examples);

std::size_t classify(const DualEncoder& enc, const TrainState* state, const Tensor& image,
                     const std::vector<std::string>& names, Mode mode, const TemplateBank& bank);

struct SplitResult {
    double accuracy = 0.0;
    std::vector<double> per_class;
};

SplitResult evaluate_split(const DualEncoder& enc, const TrainState* state, const FewShotDataset& data,
                           const std::vector<std::string>& names, Mode mode, const TemplateBank& bank);

struct DistractorResult {
    double without = 0.0;
    double with = 0.0;
};

// Accuracy over `data` (labels index `names`) with the candidate set names, then names + distractors.
DistractorResult evaluate_generalized(const DualEncoder& enc, const TrainState* state, const FewShotDataset& data,
                                      const std::vector<std::string>& names,
                                      const std::vector<std::string>& distractors, Mode mode,
                                      const TemplateBank& bank);

struct DistanceMatrix {
    Tensor matrix;  // [C, C]
    double mean_off_diagonal = 0.0;
};

// rows: final class embeddings (one per class)
DistanceMatrix centroid_distance_matrix(const Tensor& embeddings);
// group-averaged, bias-applied class embeddings of the learned classifier
Tensor final_class_embeddings(const ClassifierWeights& w);
// class embeddings of the hand-crafted ensemble (template average)
Tensor ensemble_class_embeddings(const TextAnchors& anchors);

struct EvalReport {
    double base = 0.0;
    double novel = 0.0;
    double H = 0.0;
    std::vector<double> per_class_base, per_class_new;
    std::optional<DistanceMatrix> distances;
    std::optional<DistractorResult> distractors;
};

EvalReport evaluate_base_new(const DualEncoder& enc, const TrainState* state, const FewShotDataset& base_test,
                             const FewShotDataset& new_test, const std::vector<std::string>& base_names,
                             const std::vector<std::string>& new_names, Mode mode, const TemplateBank& bank);

}  // namespace lasp
