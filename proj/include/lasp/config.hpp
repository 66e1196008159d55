#pragma once

#include <map>
#include <string>
#include <vector>

#include "lasp/synthetic.hpp"
#include "lasp/trainer.hpp"

namespace lasp {

// Flat key=value settings. Every key has a default, so the echo is a complete description of a run.
class Config {
public:
    Config();

    // "key=value" lines; blank lines and '#' comments ignored
    static Config parse(const std::string& text, const std::string& origin = "config");
    static Config load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    // "key=value"
    void apply_override(const std::string& assignment);

    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;

    // sorted key=value lines; parse(echo()) reproduces the config
    std::string echo() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

EncoderConfig encoder_config(const Config& c);
TrainConfig train_config(const Config& c);
SyntheticDatasetSpec synthetic_spec(const Config& c);

}  // namespace lasp
