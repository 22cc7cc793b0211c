#include "reprompt/checkpoint.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

#include "reprompt/io.hpp"

namespace reprompt {

namespace {
using ConfigRecords = std::vector<std::pair<std::string, double>>;

ConfigRecords config_records(const Model& model) {
  const TrainConfig& c = model.cfg;
  const VisionEncoderConfig& v = model.vision.config();
  const TextEncoderConfig& t = model.text.config();
  return {
      {"epochs", static_cast<double>(c.epochs)},
      {"batch_size", static_cast<double>(c.batch_size)},
      {"learning_rate", c.learning_rate},
      {"adam_eps", c.adam_eps},
      {"weight_decay", c.weight_decay},
      {"seed", static_cast<double>(c.seed)},
      {"gamma", c.gamma},
      {"n_per_class", static_cast<double>(c.n_per_class)},
      {"lambda", c.lambda},
      {"tau", c.tau},
      {"k_re", static_cast<double>(c.k_re)},
      {"depth", static_cast<double>(c.depth)},
      {"beta", c.beta},
      {"text_prompt_len", static_cast<double>(c.text_prompt_len)},
      {"logit_scale", c.logit_scale},
      {"use_rg_loss", c.toggles.use_rg_loss ? 1.0 : 0.0},
      {"use_re_prompt", c.toggles.use_re_prompt ? 1.0 : 0.0},
      {"use_adapter", c.toggles.use_adapter ? 1.0 : 0.0},
      {"exclude_self", c.toggles.exclude_self ? 1.0 : 0.0},
      {"adapter_keys_frozen", c.adapter_keys_frozen ? 1.0 : 0.0},
      {"adapter_top_k", static_cast<double>(c.adapter_top_k)},
      {"interpolate_in_training", c.interpolate_in_training ? 1.0 : 0.0},
      {"vision_layers", static_cast<double>(v.layers)},
      {"vision_dim", static_cast<double>(v.dim)},
      {"vision_patch_tokens", static_cast<double>(v.patch_tokens)},
      {"vision_heads", static_cast<double>(v.heads)},
      {"vision_mlp_ratio", static_cast<double>(v.mlp_ratio)},
      {"vision_seed", static_cast<double>(v.seed)},
      {"feature_passthrough", v.feature_passthrough ? 1.0 : 0.0},
      {"text_layers", static_cast<double>(t.layers)},
      {"text_heads", static_cast<double>(t.heads)},
      {"text_mlp_ratio", static_cast<double>(t.mlp_ratio)},
      {"text_seed", static_cast<double>(t.seed)},
  };
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  auto learnables = model.named_learnables();
  // The adapter cache is always persisted so an untrained adapter reloads
  // bit-for-bit even when keys are frozen or the adapter branch is off.
  bool has_adapter = false;
  for (auto& [name, t] : learnables) has_adapter |= (name == "adapter_keys");
  if (!has_adapter) learnables.emplace_back("adapter_keys", &model.adapter.cache_keys);

  io::atomic_write(path, [&](std::ostream& os) {
    io::write_magic(os, "RPCK");
    io::write_u32(os, 1);
    ConfigRecords records = config_records(model);
    io::write_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, value] : records) {
      io::write_string(os, name);
      io::write_f64(os, value);
    }
    io::write_u32(os, static_cast<std::uint32_t>(learnables.size()));
    for (auto& [name, tensor] : learnables) {
      io::write_string(os, name);
      io::write_u32(os, static_cast<std::uint32_t>(tensor->rank()));
      for (std::size_t e : tensor->shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
      io::write_f32_array(os, tensor->data(), tensor->size());
    }
  });
}

Model load_checkpoint(const std::filesystem::path& path, const RetrievalDatabase& db) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  io::expect_magic(is, "RPCK", "checkpoint");
  io::expect_version(is, 1, "checkpoint");

  std::map<std::string, double> cfgmap;
  std::uint32_t n_records = io::read_u32(is, "config record count");
  for (std::uint32_t i = 0; i < n_records; ++i) {
    std::string name = io::read_string(is, "config name");
    cfgmap[name] = io::read_f64(is, "config value");
  }
  auto get = [&](const char* key) {
    auto it = cfgmap.find(key);
    if (it == cfgmap.end()) throw std::runtime_error(std::string("checkpoint: missing config key ") + key);
    return it->second;
  };

  TrainConfig cfg;
  cfg.epochs = static_cast<std::size_t>(get("epochs"));
  cfg.batch_size = static_cast<std::size_t>(get("batch_size"));
  cfg.learning_rate = get("learning_rate");
  cfg.adam_eps = get("adam_eps");
  cfg.weight_decay = get("weight_decay");
  cfg.seed = static_cast<std::uint64_t>(get("seed"));
  cfg.gamma = get("gamma");
  cfg.n_per_class = static_cast<std::size_t>(get("n_per_class"));
  cfg.lambda = get("lambda");
  cfg.tau = get("tau");
  cfg.k_re = static_cast<std::size_t>(get("k_re"));
  cfg.depth = static_cast<std::size_t>(get("depth"));
  cfg.beta = get("beta");
  cfg.text_prompt_len = static_cast<std::size_t>(get("text_prompt_len"));
  cfg.logit_scale = get("logit_scale");
  cfg.toggles.use_rg_loss = get("use_rg_loss") != 0.0;
  cfg.toggles.use_re_prompt = get("use_re_prompt") != 0.0;
  cfg.toggles.use_adapter = get("use_adapter") != 0.0;
  cfg.toggles.exclude_self = get("exclude_self") != 0.0;
  cfg.adapter_keys_frozen = get("adapter_keys_frozen") != 0.0;
  cfg.adapter_top_k = static_cast<std::size_t>(get("adapter_top_k"));
  cfg.interpolate_in_training = get("interpolate_in_training") != 0.0;

  VisionEncoderConfig vcfg;
  vcfg.layers = static_cast<std::size_t>(get("vision_layers"));
  vcfg.dim = static_cast<std::size_t>(get("vision_dim"));
  vcfg.patch_tokens = static_cast<std::size_t>(get("vision_patch_tokens"));
  vcfg.heads = static_cast<std::size_t>(get("vision_heads"));
  vcfg.mlp_ratio = static_cast<std::size_t>(get("vision_mlp_ratio"));
  vcfg.seed = static_cast<std::uint64_t>(get("vision_seed"));
  vcfg.feature_passthrough = get("feature_passthrough") != 0.0;

  TextEncoderConfig tcfg;
  tcfg.layers = static_cast<std::size_t>(get("text_layers"));
  tcfg.heads = static_cast<std::size_t>(get("text_heads"));
  tcfg.mlp_ratio = static_cast<std::size_t>(get("text_mlp_ratio"));
  tcfg.seed = static_cast<std::uint64_t>(get("text_seed"));

  Model model = Model::init(vcfg, tcfg, db, cfg);

  std::map<std::string, Tensor*> targets;
  for (auto& [name, t] : model.named_learnables()) targets[name] = t;
  targets["adapter_keys"] = &model.adapter.cache_keys;

  std::uint32_t n_sections = io::read_u32(is, "section count");
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    std::string name = io::read_string(is, "section name");
    std::uint32_t rank = io::read_u32(is, "section rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r) shape[r] = io::read_u32(is, "section extent");
    auto it = targets.find(name);
    if (it == targets.end()) throw std::runtime_error("checkpoint: unknown section " + name);
    if (shape != it->second->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch in section " + name);
    }
    io::read_f32_array(is, it->second->data(), it->second->size(), name.c_str());
  }
  return model;
}

}  // namespace reprompt
