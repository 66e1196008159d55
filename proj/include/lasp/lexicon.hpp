#pragma once

#include <string>
#include <vector>

namespace lasp::lexicon {

// 34 CLIP-style hand-crafted templates, "{}" marks the class name
const std::vector<std::string>& default_templates();
const std::string& single_template();
// the default templates first, then adjective-inserted variants of them
std::vector<std::string> hand_style_templates(std::size_t n);

// word pools for random template sentences
const std::vector<std::string>& determiners();
const std::vector<std::string>& adjectives();
const std::vector<std::string>& nouns();
const std::vector<std::string>& verbs();
const std::vector<std::string>& prepositions();

// pronounceable pseudo-words used as synthetic class names
const std::vector<std::string>& name_pool();
const std::vector<std::string>& modifiers();

// every word the standard tokenizer knows, in id order
std::vector<std::string> standard_vocabulary();

}  // namespace lasp::lexicon
