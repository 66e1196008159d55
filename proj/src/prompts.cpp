#include "lasp/prompts.hpp"

#include <fstream>
#include <set>

#include "lasp/lexicon.hpp"
#include "lasp/rng.hpp"

namespace lasp {

namespace {

std::size_t placeholder_count(const std::string& t) {
    std::size_t n = 0;
    for (auto p = t.find("{}"); p != std::string::npos; p = t.find("{}", p + 2)) ++n;
    return n;
}

}  // namespace

Tensor PromptSet::group(std::size_t g) const {
    if (g >= G) throw std::out_of_range("prompt group " + std::to_string(g) + " of " + std::to_string(G));
    return slice_rows(vectors, g * M, (g + 1) * M);
}

PromptSet init_prompts(std::size_t G, std::size_t M, std::size_t d_tok, std::size_t d, std::uint64_t seed,
                       double std) {
    if (G == 0 || M == 0) throw ConfigError("init_prompts: G and M must be positive");
    Rng rng(seed);
    PromptSet p;
    p.G = G;
    p.M = M;
    p.vectors = Tensor::from({G, M, d_tok}, rng.normals(G * M * d_tok, std), true);
    p.bias = Tensor::zeros({d}, true);
    return p;
}

std::size_t TemplateBank::groups() const {
    std::size_t g = 0;
    for (auto x : group_of) g = std::max(g, x + 1);
    return g;
}

std::vector<std::vector<std::size_t>> TemplateBank::members() const {
    std::vector<std::vector<std::size_t>> m(groups());
    for (std::size_t l = 0; l < group_of.size(); ++l) m[group_of[l]].push_back(l);
    return m;
}

std::vector<std::string> ClassVocabulary::combined() const {
    auto all = base_names;
    all.insert(all.end(), virtual_names.begin(), virtual_names.end());
    return all;
}

ClassVocabulary make_vocabulary(std::vector<std::string> base, std::vector<std::string> virt) {
    ClassVocabulary v{std::move(base), {}};
    std::set<std::string> seen;
    for (auto& n : v.base_names)
        if (!seen.insert(n).second) throw InputError("duplicate class name: " + n);
    return add_virtual_classes(v, virt);
}

ClassVocabulary add_virtual_classes(const ClassVocabulary& v, const std::vector<std::string>& names) {
    ClassVocabulary out = v;
    std::set<std::string> seen(v.base_names.begin(), v.base_names.end());
    seen.insert(v.virtual_names.begin(), v.virtual_names.end());
    for (auto& n : names) {
        if (!seen.insert(n).second) throw InputError("duplicate class name: " + n);
        out.virtual_names.push_back(n);
    }
    return out;
}

std::string render_template(const std::string& tmpl, const std::string& class_name) {
    if (placeholder_count(tmpl) != 1) throw TemplateError("template needs exactly one {}: \"" + tmpl + "\"");
    std::string name = class_name;
    for (auto& ch : name)
        if (ch == '_') ch = ' ';
    auto p = tmpl.find("{}");
    return tmpl.substr(0, p) + name + tmpl.substr(p + 2);
}

Tensor assemble_learnable_prompt(const DualEncoder& enc, const PromptSet& prompts, std::size_t g,
                                 const std::string& class_name) {
    return concat_rows({enc.start_embedding(), prompts.group(g), enc.embed_class_name(class_name), enc.end_embedding()});
}

TemplateBank make_bank(std::vector<std::string> templates) {
    for (auto& t : templates)
        if (placeholder_count(t) != 1) throw TemplateError("template needs exactly one {}: \"" + t + "\"");
    TemplateBank b;
    b.templates = std::move(templates);
    b.group_of.assign(b.templates.size(), 0);
    return b;
}

TemplateBank split_templates(const TemplateBank& bank, std::size_t G, std::uint64_t seed) {
    const std::size_t L = bank.size();
    if (G == 0 || L < G) throw ConfigError("split_templates: need 1 <= G <= L, got G=" + std::to_string(G) +
                                           " L=" + std::to_string(L));
    Rng rng(seed);
    auto perm = rng.permutation(L);
    TemplateBank out = bank;
    out.group_of.assign(L, 0);
    std::size_t pos = 0;
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t size = L / G + (g < L % G ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k) out.group_of[perm[pos++]] = g;
    }
    return out;
}

TemplateBank generate_random_templates(std::size_t n, std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
    if (min_len < 1 || min_len > max_len) throw ConfigError("random templates: need 1 <= min_len <= max_len");
    using namespace lexicon;
    // determiner adjective noun verb preposition, repeated
    const std::vector<const std::vector<std::string>*> cycle = {&determiners(), &adjectives(), &nouns(), &verbs(),
                                                                &prepositions()};
    Rng rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = min_len + rng.below(max_len - min_len + 1);
        std::string s;
        for (std::size_t k = 0; k < len; ++k) {
            const auto& pool = *cycle[k % cycle.size()];
            s += pool[rng.below(pool.size())] + " ";
        }
        out.push_back(s + "{}");
    }
    return make_bank(std::move(out));
}

TemplateBank load_templates(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot read template file " + path);
    std::vector<std::string> t;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) t.push_back(line);
    }
    if (t.empty()) throw InputError("template file " + path + " is empty");
    return make_bank(std::move(t));
}

TemplateBank default_bank() { return make_bank(lexicon::default_templates()); }

}  // namespace lasp
