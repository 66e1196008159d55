#include "lasp/lexicon.hpp"

#include <set>
#include <sstream>

namespace lasp::lexicon {

const std::vector<std::string>& default_templates() {
    static const std::vector<std::string> t = {
        "a photo of a {}",
        "a bad photo of a {}",
        "a photo of many {}",
        "a sculpture of a {}",
        "a photo of the hard to see {}",
        "a low resolution photo of the {}",
        "a rendering of a {}",
        "graffiti of a {}",
        "a bad photo of the {}",
        "a cropped photo of the {}",
        "a tattoo of a {}",
        "the embroidered {}",
        "a photo of a hard to see {}",
        "a bright photo of a {}",
        "a photo of a clean {}",
        "a photo of a dirty {}",
        "a dark photo of the {}",
        "a drawing of a {}",
        "a photo of my {}",
        "the plastic {}",
        "a photo of the cool {}",
        "a close up photo of a {}",
        "a black and white photo of the {}",
        "a painting of the {}",
        "a painting of a {}",
        "a pixelated photo of the {}",
        "a sculpture of the {}",
        "a bright photo of the {}",
        "a cropped photo of a {}",
        "a plastic {}",
        "a photo of the dirty {}",
        "a jpeg corrupted photo of a {}",
        "a blurry photo of the {}",
        "a photo of the {}",
    };
    return t;
}

const std::string& single_template() {
    static const std::string t = "a photo of {}";
    return t;
}

std::vector<std::string> hand_style_templates(std::size_t n) {
    const auto& base = default_templates();
    const auto& adj = adjectives();
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto t = base[i % base.size()];
        if (i >= base.size()) {
            const auto& a = adj[(i / base.size() * 5 + i) % adj.size()];
            const auto sp = t.find(' ');
            if (t.rfind("a ", 0) == 0 || t.rfind("the ", 0) == 0)
                t.insert(sp + 1, a + " ");
            else
                t = a + " " + t;
        }
        out.push_back(t);
    }
    return out;
}

const std::vector<std::string>& determiners() {
    static const std::vector<std::string> w = {"the", "a", "this", "that", "every", "some", "my", "our"};
    return w;
}

const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> w = {"quiet", "green", "heavy", "small", "old",    "bright", "strange",
                                               "warm",  "empty", "tall",  "soft",  "silent", "broken", "golden"};
    return w;
}

const std::vector<std::string>& nouns() {
    static const std::vector<std::string> w = {"river", "window", "garden", "teacher", "morning", "table", "city",
                                               "letter", "mountain", "kitchen", "bridge", "road", "market", "song"};
    return w;
}

const std::vector<std::string>& verbs() {
    static const std::vector<std::string> w = {"watches", "carries", "finds", "remembers", "follows", "paints",
                                               "holds",   "meets",   "opens", "passes",    "keeps",   "shows"};
    return w;
}

const std::vector<std::string>& prepositions() {
    static const std::vector<std::string> w = {"near", "under", "behind", "beside", "across", "beyond", "with", "along"};
    return w;
}

const std::vector<std::string>& name_pool() {
    static const std::vector<std::string> pool = [] {
        const char* on[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
        const char* nu[] = {"a", "e", "i", "o", "u"};
        const char* co[] = {"n", "r", "l", "s", "k", "m"};
        std::vector<std::string> out;
        // CVCVC words visited with a stride so neighbours differ in several letters
        const std::size_t total = 14 * 5 * 14 * 5 * 6;
        for (std::size_t i = 0, k = 0; out.size() < 256 && i < total; ++i, k = (k + 7919) % total) {
            std::size_t r = k;
            std::string w;
            w += on[r % 14], r /= 14;
            w += nu[r % 5], r /= 5;
            w += on[r % 14], r /= 14;
            w += nu[r % 5], r /= 5;
            w += co[r % 6];
            out.push_back(w);
        }
        return out;
    }();
    return pool;
}

const std::vector<std::string>& modifiers() {
    static const std::vector<std::string> w = {
        "minor",  "major",   "wild",    "dwarf",  "giant",   "northern", "southern", "eastern",
        "western", "lesser", "greater", "common", "royal",   "spotted",  "striped",  "hairy",
        "pale",   "dusky",   "crested", "alpine", "coastal", "desert",   "marsh",    "forest",
        "island", "mountain", "river",  "tiny",   "long",    "short",    "black",    "white",
        "red",    "blue",    "yellow",  "grey",   "brown",   "sandy",    "woolly",   "horned"};
    return w;
}

std::vector<std::string> standard_vocabulary() {
    std::vector<std::string> vocab;
    std::set<std::string> seen;
    auto add = [&](const std::string& w) {
        if (seen.insert(w).second) vocab.push_back(w);
    };
    auto add_sentence = [&](const std::string& s) {
        std::istringstream is(s);
        std::string w;
        while (is >> w)
            if (w != "{}") add(w);
    };
    for (auto& t : default_templates()) add_sentence(t);
    add_sentence(single_template());
    for (auto* pool : {&determiners(), &adjectives(), &nouns(), &verbs(), &prepositions(), &modifiers()})
        for (auto& w : *pool) add(w);
    for (auto& w : name_pool()) add(w);
    return vocab;
}

}  // namespace lasp::lexicon
