#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reprompt/adapter.hpp"
#include "reprompt/database.hpp"
#include "reprompt/dataset.hpp"
#include "reprompt/encoder.hpp"
#include "reprompt/prompt_learner.hpp"

namespace reprompt {

struct TrainToggles {
  bool use_rg_loss = true;    // retrieval-guided loss reweighting
  bool use_re_prompt = true;  // retrieval-enhanced dynamic prompts
  bool use_adapter = true;    // kNN cache interpolation
  bool exclude_self = false;  // leave-one-out retrieval during training
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_eps = 1e-4;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double gamma = 1e-4;           // guidance scale
  std::size_t n_per_class = 8;   // per-class neighbor count for the guided loss
  double lambda = 0.5;           // adapter mixing weight
  double tau = 16.0;             // similarity temperature
  std::size_t k_re = 7;          // retrieved neighbors for prompt generation
  std::size_t depth = 7;         // retrieval-enhanced layer count J
  double beta = 10.0;            // REConv output scale
  std::size_t text_prompt_len = 4;  // M
  double logit_scale = 10.0;
  TrainToggles toggles;
  bool adapter_keys_frozen = false;
  std::size_t adapter_top_k = 0;
  bool interpolate_in_training = true;

  std::size_t prompt_count() const { return k_re + 2; }  // N is tied to k_re
};

struct LossBreakdown {
  double ce;
  double p_t;
  double total;
};

/// Negative log probability of the true class within the restricted neighbor
/// set K of the top class_count * n_per_class entries, exp-normalized at the
/// adapter temperature. Uses frozen features and frozen keys only.
double guidance_factor(const RetrievalDatabase& db, std::span<const double> z_q,
                       std::uint32_t y_true, std::size_t n_per_class, double tau,
                       std::optional<std::size_t> exclude = {});

/// (1 + gamma * p_t) * cross-entropy of the final distribution.
LossBreakdown reprompt_loss(const Tensor& p, std::uint32_t y_true, double p_t, double gamma);

/// The composed model: frozen encoders plus every learnable group.
struct Model {
  VisionEncoder vision;
  TextEncoder text;
  Tensor text_prompt;  // d x M, learnable; empty when M == 0
  PromptLearner learner;
  AdapterState adapter;
  TrainConfig cfg;

  static Model init(const VisionEncoderConfig& vision_cfg, const TextEncoderConfig& text_cfg,
                    const RetrievalDatabase& db, const TrainConfig& cfg);

  std::vector<std::pair<std::string, Tensor*>> named_learnables();
  std::uint64_t frozen_hash() const;
};

/// Per-sample quantities that depend only on frozen components, computed
/// once before training: the lifted patches, the frozen query feature, the
/// retrieval token matrix, and the guidance factor.
struct SampleContext {
  Tensor patches;       // S x d (empty in feature-passthrough mode)
  Tensor z_q;           // frozen unit feature
  Tensor prompt_input;  // d x (k_re + 2)
  double p_t = 0.0;
  bool p_t_valid = false;
  std::uint32_t label = 0;
};

std::vector<SampleContext> precompute_contexts(const Model& model, const RetrievalDatabase& db,
                                               const Dataset& data, bool is_train_set);

/// Records the model's probability vector for one sample. training_pass
/// selects whether the adapter mix applies when interpolate_in_training is
/// off. Returns the final distribution node.
Tape::NodeId sample_probability(Tape& tape, Model& model, const SampleContext& ctx,
                                Tape::NodeId text_features, bool training_pass);

struct EpochMetrics {
  std::size_t epoch;
  std::string split;  // "train" or "test"
  double loss;
  double ce;
  double mean_pt;
  double accuracy;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::uint32_t>> confusion;  // [true][predicted]
  double mean_loss = 0.0;
  double mean_ce = 0.0;
  double mean_pt = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  EvalResult final_eval;
  double min_batch_total_minus_ce = 0.0;
  std::vector<double> epoch_mean_pt;  // train epochs only
};

/// Decoupled-weight-decay Adam over the model's learnable groups.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, double lr, double eps, double weight_decay);
  void step();

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, eps_, weight_decay_;
  double beta1_ = 0.9, beta2_ = 0.999;
  std::size_t t_ = 0;
};

TrainResult train(Model& model, const RetrievalDatabase& db, const Dataset& train_set,
                  const Dataset& test_set,
                  const std::vector<SampleContext>* train_ctx = nullptr,
                  const std::vector<SampleContext>* test_ctx = nullptr);

EvalResult evaluate(Model& model, const RetrievalDatabase& db, const Dataset& test_set,
                    const std::vector<SampleContext>* ctx = nullptr);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);

}  // namespace reprompt
