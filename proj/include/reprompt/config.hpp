#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "reprompt/dataset.hpp"
#include "reprompt/encoder.hpp"
#include "reprompt/training.hpp"

namespace reprompt {

/// Flat `key = value` file with `#` comments. Unknown keys are rejected so
/// typos fail loudly.
class Config {
 public:
  static Config parse_file(const std::filesystem::path& path);
  static Config parse_text(const std::string& text);
  Config() = default;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  double number(const std::string& key, double fallback) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  DatasetSpec dataset_spec() const;
  VisionEncoderConfig vision_config() const;
  TextEncoderConfig text_config() const;
  TrainConfig train_config() const;

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace reprompt
