#include "reprompt/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace reprompt {

namespace {
const std::set<std::string> kKnownKeys = {
    // dataset
    "classes", "shots", "test_per_class", "dim", "sigma", "shift", "data_seed",
    // encoders
    "vision_layers", "patch_tokens", "heads", "vision_seed", "mlp_ratio",
    "text_layers", "text_heads", "text_seed", "feature_passthrough",
    // training
    "epochs", "batch_size", "learning_rate", "adam_eps", "weight_decay", "seed",
    "gamma", "n_per_class", "lambda", "tau", "k_re", "depth", "beta",
    "text_prompt_len", "logit_scale", "use_rg_loss", "use_re_prompt",
    "use_adapter", "exclude_self", "adapter_keys_frozen", "adapter_top_k",
    "interpolate_in_training",
    // recipes
    "recipe", "sweep_param", "sweep_values", "ladder_seeds",
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::parse_text(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!kKnownKeys.count(key)) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_text(buf.str());
}

double Config::number(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::size_t consumed = 0;
  double v = std::stod(it->second, &consumed);
  if (consumed != it->second.size()) {
    throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
  }
  return v;
}

std::string Config::text(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

DatasetSpec Config::dataset_spec() const {
  DatasetSpec spec;
  spec.classes = static_cast<std::uint32_t>(number("classes", spec.classes));
  spec.shots = static_cast<std::uint32_t>(number("shots", spec.shots));
  spec.test_per_class = static_cast<std::uint32_t>(number("test_per_class", spec.test_per_class));
  spec.dim = static_cast<std::uint32_t>(number("dim", spec.dim));
  spec.sigma = number("sigma", spec.sigma);
  spec.shift = number("shift", spec.shift);
  spec.seed = static_cast<std::uint64_t>(number("data_seed", static_cast<double>(spec.seed)));
  return spec;
}

VisionEncoderConfig Config::vision_config() const {
  VisionEncoderConfig cfg;
  cfg.layers = static_cast<std::size_t>(number("vision_layers", static_cast<double>(cfg.layers)));
  cfg.dim = static_cast<std::size_t>(number("dim", static_cast<double>(cfg.dim)));
  cfg.patch_tokens = static_cast<std::size_t>(number("patch_tokens", static_cast<double>(cfg.patch_tokens)));
  cfg.heads = static_cast<std::size_t>(number("heads", static_cast<double>(cfg.heads)));
  cfg.mlp_ratio = static_cast<std::size_t>(number("mlp_ratio", static_cast<double>(cfg.mlp_ratio)));
  cfg.seed = static_cast<std::uint64_t>(number("vision_seed", static_cast<double>(cfg.seed)));
  cfg.feature_passthrough = number("feature_passthrough", 0.0) != 0.0;
  return cfg;
}

TextEncoderConfig Config::text_config() const {
  TextEncoderConfig cfg;
  cfg.layers = static_cast<std::size_t>(number("text_layers", static_cast<double>(cfg.layers)));
  cfg.dim = static_cast<std::size_t>(number("dim", static_cast<double>(cfg.dim)));
  cfg.heads = static_cast<std::size_t>(number("text_heads", static_cast<double>(cfg.heads)));
  cfg.mlp_ratio = static_cast<std::size_t>(number("mlp_ratio", static_cast<double>(cfg.mlp_ratio)));
  cfg.seed = static_cast<std::uint64_t>(number("text_seed", static_cast<double>(cfg.seed)));
  cfg.prompt_len = static_cast<std::size_t>(number("text_prompt_len", static_cast<double>(cfg.prompt_len)));
  return cfg;
}

TrainConfig Config::train_config() const {
  TrainConfig cfg;
  cfg.epochs = static_cast<std::size_t>(number("epochs", static_cast<double>(cfg.epochs)));
  cfg.batch_size = static_cast<std::size_t>(number("batch_size", static_cast<double>(cfg.batch_size)));
  cfg.learning_rate = number("learning_rate", cfg.learning_rate);
  cfg.adam_eps = number("adam_eps", cfg.adam_eps);
  cfg.weight_decay = number("weight_decay", cfg.weight_decay);
  cfg.seed = static_cast<std::uint64_t>(number("seed", static_cast<double>(cfg.seed)));
  cfg.gamma = number("gamma", cfg.gamma);
  cfg.n_per_class = static_cast<std::size_t>(number("n_per_class", static_cast<double>(cfg.n_per_class)));
  cfg.lambda = number("lambda", cfg.lambda);
  cfg.tau = number("tau", cfg.tau);
  cfg.k_re = static_cast<std::size_t>(number("k_re", static_cast<double>(cfg.k_re)));
  cfg.depth = static_cast<std::size_t>(number("depth", static_cast<double>(cfg.depth)));
  cfg.beta = number("beta", cfg.beta);
  cfg.text_prompt_len = static_cast<std::size_t>(number("text_prompt_len", static_cast<double>(cfg.text_prompt_len)));
  cfg.logit_scale = number("logit_scale", cfg.logit_scale);
  cfg.toggles.use_rg_loss = number("use_rg_loss", 1.0) != 0.0;
  cfg.toggles.use_re_prompt = number("use_re_prompt", 1.0) != 0.0;
  cfg.toggles.use_adapter = number("use_adapter", 1.0) != 0.0;
  cfg.toggles.exclude_self = number("exclude_self", 0.0) != 0.0;
  cfg.adapter_keys_frozen = number("adapter_keys_frozen", 0.0) != 0.0;
  cfg.adapter_top_k = static_cast<std::size_t>(number("adapter_top_k", 0.0));
  cfg.interpolate_in_training = number("interpolate_in_training", 1.0) != 0.0;
  return cfg;
}

}  // namespace reprompt
