#pragma once

#include <string>
#include <vector>

#include "lasp/config.hpp"
#include "lasp/evaluator.hpp"
#include "lasp/synthetic.hpp"

namespace lasp {

// Frozen encoder, template bank and data shared by every run of an experiment.
struct World {
    DualEncoder enc;
    TemplateBank bank;
    SyntheticDataset data;  // distractor lists are empty for loaded datasets

    std::vector<std::string> all_names() const;
    // base-test and new-test with labels over all_names()
    FewShotDataset generalized_test() const;
};

World make_world(const EncoderConfig& ec, const SyntheticDatasetSpec& spec, TemplateBank bank);
// synthetic unless data.manifest is set
World world_from_config(const Config& c);

// kind: hand | random | file:<path>; hand with n == 1 is the single template
TemplateBank template_bank(const std::string& kind, std::size_t n, std::uint64_t seed = 1);

// none | new | distractors | outside | new+distractors
std::vector<std::string> virtual_names(const World& w, const std::string& kind);

struct RunMetrics {
    double base = 0.0, novel = 0.0, H = 0.0;
    double distance = 0.0;  // mean off-diagonal centroid distance over all_names()
    double gen = 0.0;       // generalized accuracy over base+new test, all_names() as candidates
    double gen_with = 0.0;  // same, with the distractor set added
    double gen_base = 0.0, gen_new = 0.0, gen_with_base = 0.0, gen_with_new = 0.0;
};

struct RunOptions {
    const std::vector<std::string>* distractors = nullptr;
    bool distances = true;
};

RunMetrics evaluate_state(const World& w, const TrainState& state, const RunOptions& opt = {});
RunMetrics train_and_evaluate(const World& w, const TrainConfig& cfg, const RunOptions& opt = {},
                              FitResult* fit_out = nullptr);
// seeds 1..n averaged
RunMetrics mean_over_seeds(const World& w, TrainConfig cfg, std::size_t seeds, const RunOptions& opt = {});

// Rows of named values under named columns, plus key/value records.
struct Table {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<double>>> rows;

    std::string text() const;
    // "name split value" per cell; name = title, split = row/column
    std::string kv(const std::string& prefix) const;
};

// Template count x content grid: rows hand/random, columns 1/34/100, new-class accuracy.
Table ablate_templates(const World& w, const TrainConfig& cfg, std::size_t seeds, std::uint64_t bank_seed);
// CE / L1 / L2 text losses: rows base/new/H.
Table ablate_loss(const World& w, const TrainConfig& cfg, std::size_t seeds);
// baseline, +text-to-text, +grouped, +align, +virtual: rows base/new/H.
Table ablate_components(const World& w, const TrainConfig& cfg, std::size_t seeds);
// LASP vs LASP-V without and with distractors (virtual classes = the distractors).
Table distractor_protocol(const World& w, const TrainConfig& cfg, std::size_t seeds,
                          const std::vector<std::string>& distractors, const std::string& title);

}  // namespace lasp
