#pragma once

#include <string>
#include <vector>

#include "lasp/trainer.hpp"

namespace lasp {

struct SyntheticDatasetSpec {
    std::size_t n_base = 10;
    std::size_t n_new = 10;
    std::size_t train_per_class = 16;
    std::size_t test_per_class = 30;
    double separation = 2.5;
    std::size_t image_h = 16, image_w = 16, channels = 3;
    std::uint64_t seed = 11;
    std::size_t center_steps = 150;
    double center_lr = 0.05;
    // norm of a random per-class offset added to the unit text target
    double misalignment = 0.0;

    void validate() const;
};

struct SyntheticDataset {
    std::vector<std::string> base_names, new_names;
    // one confusable name per class ("<name> <modifier>"), base classes first
    std::vector<std::string> distractors;
    // unrelated pseudo-word names
    std::vector<std::string> outside_names;
    FewShotDataset base_train, base_test, new_test;
    std::vector<Tensor> centers;  // unit-RMS image direction per class
};

// Class clusters are Gaussian around separation * center_c; each center is an image optimized so
// the frozen vision encoder maps it onto the class's hand-crafted text direction (class mean removed,
// plus an optional random offset).
SyntheticDataset make_synthetic_dataset(const SyntheticDatasetSpec& spec, const DualEncoder& enc,
                                        const TemplateBank& bank);

// Writes headered raw tensors plus a manifest; returns the manifest path.
std::string write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir);

}  // namespace lasp
