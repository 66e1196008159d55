#include "lasp/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lasp {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"seed", "1"},
        {"seeds", "3"},
        {"encoder.seed", "1"},
        {"data.manifest", ""},
        {"data.seed", "11"},
        {"data.n_base", "10"},
        {"data.n_new", "10"},
        {"data.train_per_class", "16"},
        {"data.test_per_class", "30"},
        {"data.separation", "2.5"},
        {"data.misalignment", "0"},
        {"templates", "hand"},
        {"templates.count", "34"},
        {"train.alpha_vl", "1"},
        {"train.alpha_tt", "20"},
        {"train.lr", "0.002"},
        {"train.epochs", "10"},
        {"train.warmup_epochs", "1"},
        {"train.batch_size", "16"},
        {"train.shots", "16"},
        {"train.M", "4"},
        {"train.G", "3"},
        {"train.ln", "false"},
        {"train.loss", "ce"},
        {"train.tt_reduction", "mean"},
        {"train.momentum", "0"},
        {"train.flip", "false"},
        {"train.virtual", "none"},
        {"eval.checkpoint", ""},
        {"eval.mode", "learned"},
        {"report.inputs", ""},
    };
    return d;
}

}  // namespace

Config::Config() : values_(defaults()) {}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        try {
            c.apply_override(line);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key " + key);
    it->second = value;
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got " + assignment);
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key " + key);
    return it->second;
}

double Config::number(const std::string& key) const {
    const auto& v = get(key);
    double x = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x))
        throw ConfigError(key + ": not a number: " + v);
    return x;
}

std::size_t Config::count(const std::string& key) const {
    const auto& v = get(key);
    std::size_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not a non-negative integer: " + v);
    return x;
}

std::uint64_t Config::seed(const std::string& key) const { return count(key); }

bool Config::flag(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got " + v);
}

std::vector<std::string> Config::list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

std::string Config::echo() const {
    std::string out;
    for (auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

EncoderConfig encoder_config(const Config& c) {
    EncoderConfig e;
    e.seed = c.seed("encoder.seed");
    return e;
}

TrainConfig train_config(const Config& c) {
    TrainConfig t;
    t.alpha_vl = c.number("train.alpha_vl");
    t.alpha_tt = c.number("train.alpha_tt");
    t.lr = c.number("train.lr");
    t.epochs = c.count("train.epochs");
    t.warmup_epochs = c.count("train.warmup_epochs");
    t.batch_size = c.count("train.batch_size");
    t.shots = c.count("train.shots");
    t.M = c.count("train.M");
    t.G = c.count("train.G");
    t.ln = c.flag("train.ln");
    t.seed = c.seed("seed");
    t.loss = parse_loss_kind(c.get("train.loss"));
    const auto& red = c.get("train.tt_reduction");
    if (red != "mean" && red != "sum") throw ConfigError("train.tt_reduction must be mean or sum");
    t.tt_reduction = red == "sum" ? Reduction::Sum : Reduction::Mean;
    t.momentum = c.number("train.momentum");
    t.flip = c.flag("train.flip");
    t.validate();
    return t;
}

SyntheticDatasetSpec synthetic_spec(const Config& c) {
    SyntheticDatasetSpec s;
    s.seed = c.seed("data.seed");
    s.n_base = c.count("data.n_base");
    s.n_new = c.count("data.n_new");
    s.train_per_class = c.count("data.train_per_class");
    s.test_per_class = c.count("data.test_per_class");
    s.separation = c.number("data.separation");
    s.misalignment = c.number("data.misalignment");
    s.validate();
    return s;
}

}  // namespace lasp
