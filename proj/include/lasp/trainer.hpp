#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lasp/losses.hpp"

namespace lasp {

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, std::size_t step) : std::runtime_error(msg), step(step) {}
    std::size_t step;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double alpha_vl = 1.0;
    double alpha_tt = 20.0;
    double lr = 0.002;
    std::size_t epochs = 10;
    std::size_t warmup_epochs = 1;
    std::size_t batch_size = 16;
    std::size_t shots = 16;
    std::size_t M = 4;
    std::size_t G = 3;
    bool ln = false;
    std::uint64_t seed = 1;
    TTLossKind loss = TTLossKind::CE;
    Reduction tt_reduction = Reduction::Mean;
    double momentum = 0.0;
    bool flip = false;
    double prompt_std = 0.02;
    std::vector<std::string> virtual_names;

    void validate() const;
};

struct Example {
    Tensor image;       // [h, w, c]
    std::size_t label;  // index into the split's class list
};

struct FewShotDataset {
    std::vector<Example> examples;
    std::string split;  // base-train, base-test, new-test
};

struct Schedule {
    std::size_t steps_per_epoch;
    std::size_t total_steps;
};

double learning_rate_at(std::size_t step, const Schedule& s, const TrainConfig& cfg);
Schedule make_schedule(std::size_t n_examples, const TrainConfig& cfg);

FewShotDataset sample_few_shot(const FewShotDataset& full, std::size_t num_classes, std::size_t shots,
                               std::uint64_t seed);

struct TrainState {
    PromptSet prompts;
    LnParams ln;           // vision LN affine copies, trainable iff LN fine-tuning is on
    TemplateBank bank;     // split into G groups
    std::vector<Tensor> velocity;
    std::size_t step = 0;
};

NamedTensors trainable_parameters(const TrainState& s, const TrainConfig& cfg, const DualEncoder& enc);
// prompts, bias and LN tensors by name, whether trainable or not
NamedTensors state_tensors(const TrainState& s, const DualEncoder& enc);

TrainState init_state(const DualEncoder& enc, const TemplateBank& bank, const TrainConfig& cfg);

struct LossBreakdown {
    double vl = 0.0, tt = 0.0, total = 0.0;
};

// Everything the step needs that does not change between steps.
struct TrainContext {
    const DualEncoder* enc = nullptr;
    ClassVocabulary vocab;  // base + virtual
    TextAnchors anchors;    // over vocab.combined()
};

TrainContext make_context(const DualEncoder& enc, const TemplateBank& bank, const std::vector<std::string>& base_names,
                          const TrainConfig& cfg);

LossBreakdown compute_losses(const TrainContext& ctx, const TrainState& state, const std::vector<Example>& batch,
                             const TrainConfig& cfg, Tensor* total_out = nullptr);
LossBreakdown train_step(const TrainContext& ctx, TrainState& state, const std::vector<Example>& batch,
                         const TrainConfig& cfg, double lr);

struct LogLine {
    std::size_t epoch, step;
    double lr, vl, tt, total;
};

struct FitResult {
    TrainState state;
    std::vector<LogLine> log;
};

FitResult fit(const DualEncoder& enc, const FewShotDataset& train, const std::vector<std::string>& base_names,
              const TemplateBank& bank, const TrainConfig& cfg,
              const std::function<void(const LogLine&)>& on_epoch = nullptr);

std::string format_log_line(const LogLine& l);

void save_checkpoint(const std::string& path, const TrainState& s, const DualEncoder& enc,
                     const std::string& config_echo);
std::string checkpoint_bytes(const TrainState& s, const DualEncoder& enc, const std::string& config_echo);
TrainState load_checkpoint(const std::string& path, const DualEncoder& enc, const TemplateBank& bank,
                           const TrainConfig& cfg);

}  // namespace lasp
