#pragma once

// key=value configuration. Blank lines and lines starting with '#' are
// ignored; later keys override earlier ones.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fivl/error.hpp"
#include "fivl/keyexpr.hpp"

namespace fivl {

class Config {
 public:
  // Training defaults follow the reference fine-tuning setup; the rest are
  // pipeline knobs.
  static Config defaults() {
    Config c;
    c.values_ = {
        {"extractor_endpoint", ""},
        {"extractor_model", "gpt-4o"},
        {"grounding_endpoint", ""},
        {"model_endpoint", ""},
        {"judge_endpoint", ""},
        {"judge_model", "gpt-4o"},
        {"credential_env", "FIVL_API_KEY"},
        {"image_root", ""},
        {"box_threshold", "0.4"},
        {"mask_threshold", "0.0"},
        {"dedup_threshold", "0.95"},
        {"coverage_threshold", "0.5"},
        {"retries", "3"},
        {"retry_backoff_ms", "200"},
        {"parallelism", "4"},
        {"lambda", "0.1"},
        {"learning_rate", "2e-5"},
        {"batch_size", "4"},
        {"num_gpus", "8"},
        {"gradient_accumulation", "4"},
        {"epochs", "1"},
        {"image_tokens", "576"},
        {"optimizer", "SGD"},
        {"lr_scheduler", "cosine"},
        {"bf16", "true"},
        {"vision_tower", "openai/clip-vit-large-patch14-336"},
        {"language_model", "lmsys/vicuna-7b-v1.5"},
        {"lease_timeout_s", "600"},
        {"seed", "0"},
    };
    return c;
  }

  static Config parse(std::istream& in, Config base = defaults()) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) throw FormatError(lineno, "expected key=value");
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) throw FormatError(lineno, "empty key");
      base.values_[std::string(key)] = std::string(trim(t.substr(eq + 1)));
    }
    return base;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open config '" + path + "'");
    return parse(in);
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("missing config key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument("config key '" + key + "' is not a number: '" + s + "'");
    }
  }

  int integer(const std::string& key) const { return static_cast<int>(num(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fivl
