#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lasp/encoders.hpp"

namespace lasp {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TemplateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PromptSet {
    Tensor vectors;  // [G, M, d_tok]
    Tensor bias;     // [d]
    std::size_t G = 0, M = 0;

    Tensor group(std::size_t g) const;  // [M, d_tok]
};

PromptSet init_prompts(std::size_t G, std::size_t M, std::size_t d_tok, std::size_t d, std::uint64_t seed,
                       double std = 0.02);

struct TemplateBank {
    std::vector<std::string> templates;
    std::vector<std::size_t> group_of;  // empty until split

    std::size_t size() const { return templates.size(); }
    std::size_t groups() const;
    std::vector<std::vector<std::size_t>> members() const;
};

struct ClassVocabulary {
    std::vector<std::string> base_names;
    std::vector<std::string> virtual_names;

    std::vector<std::string> combined() const;
};

ClassVocabulary make_vocabulary(std::vector<std::string> base, std::vector<std::string> virt = {});
ClassVocabulary add_virtual_classes(const ClassVocabulary& v, const std::vector<std::string>& names);

std::string render_template(const std::string& tmpl, const std::string& class_name);

// [start, p_1..p_M of group g, class tokens, end]
Tensor assemble_learnable_prompt(const DualEncoder& enc, const PromptSet& prompts, std::size_t g,
                                 const std::string& class_name);

TemplateBank make_bank(std::vector<std::string> templates);
TemplateBank split_templates(const TemplateBank& bank, std::size_t G, std::uint64_t seed);
TemplateBank generate_random_templates(std::size_t n, std::size_t min_len, std::size_t max_len, std::uint64_t seed);
TemplateBank load_templates(const std::string& path);
TemplateBank default_bank();

}  // namespace lasp
