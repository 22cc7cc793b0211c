#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "reprompt/rng.hpp"
#include "reprompt/tape.hpp"
#include "reprompt/tensor.hpp"

namespace reprompt {

struct VisionEncoderConfig {
  std::size_t layers = 12;        // L
  std::size_t dim = 64;           // d
  std::size_t patch_tokens = 16;  // S
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::uint64_t seed = 1;
  bool feature_passthrough = false;
};

struct TextEncoderConfig {
  std::size_t layers = 12;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::uint64_t seed = 2;
  std::size_t class_count = 0;  // C
  std::size_t prompt_len = 4;   // M
};

enum class FeatureSource { kFrozen, kPromptTuned };

struct EncodedFeature {
  Tensor vector;  // unit-norm d-vector
  FeatureSource source;
};

struct TransformerLayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
};

/// Structural record of one encoder forward, for inspection and tests.
struct ForwardTrace {
  std::vector<std::size_t> layer_token_counts;
  std::vector<std::size_t> class_token_positions;
  Tensor last_attention;  // head-averaged T x T rows of the final layer
};

/// Pre-norm transformer trunk with seeded immutable weights. Tokens are
/// columns of a d x T matrix.
class FrozenTransformer {
 public:
  FrozenTransformer(std::size_t layers, std::size_t dim, std::size_t heads,
                    std::size_t mlp_ratio, RngStream rng);

  Tape::NodeId layer_forward(Tape& tape, Tape::NodeId x, std::size_t layer,
                             Tensor* attention_out = nullptr) const;
  Tape::NodeId final_norm(Tape& tape, Tape::NodeId x) const;

  std::size_t layers() const { return layers_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<TransformerLayerWeights>& layer_weights() const { return layers_; }
  const Tensor& final_gain() const { return final_gain_; }
  const Tensor& final_bias() const { return final_bias_; }
  std::uint64_t weights_hash(std::uint64_t h) const;

 private:
  std::vector<TransformerLayerWeights> layers_;
  Tensor final_gain_, final_bias_;
  std::size_t dim_, heads_;
};

/// Frozen vision transformer serving both the query encoder and the
/// retrieval encoder. In feature-passthrough mode encode_frozen simply
/// normalizes a raw embedding, for corpora of real pretrained features.
class VisionEncoder {
 public:
  explicit VisionEncoder(const VisionEncoderConfig& cfg);

  const VisionEncoderConfig& config() const { return cfg_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::uint64_t weights_hash() const;

  /// Deterministic lift of a raw d-feature to an S x d patch-token matrix.
  Tensor patches_from_feature(const Tensor& feature) const;

  /// Promptless forward. A rank-1 input is treated as a raw feature and
  /// returned l2-normalized; a rank-2 S x d input runs the full trunk.
  EncodedFeature encode_frozen(const Tensor& input) const;

  /// Deep-prompt forward: layer j consumes [class, P_j (+ dynamic_j for the
  /// first J layers), patches]; prompt positions are replaced between layers.
  /// Returns the l2-normalized class-token node.
  Tape::NodeId encode_with_prompts(Tape& tape, const Tensor& patches,
                                   std::span<Tensor* const> layer_prompts,
                                   std::span<const Tape::NodeId> dynamic_prompts,
                                   ForwardTrace* trace = nullptr) const;

  const FrozenTransformer& trunk() const { return trunk_; }
  const Tensor& class_token() const { return class_token_; }
  const Tensor& positional() const { return positional_; }
  const Tensor& patch_lift() const { return patch_lift_; }

 private:
  VisionEncoderConfig cfg_;
  FrozenTransformer trunk_;
  Tensor class_token_;  // d
  Tensor positional_;   // d x (1 + S)
  Tensor patch_lift_;   // (S * d) x d
  std::uint64_t fingerprint_;
};

/// Frozen text transformer with one frozen token embedding per class; the
/// learnable prompt is prepended to every class sequence.
class TextEncoder {
 public:
  explicit TextEncoder(const TextEncoderConfig& cfg);

  const TextEncoderConfig& config() const { return cfg_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  std::uint64_t weights_hash() const;

  /// Runs [prompt columns..., class token] per class and returns the d x C
  /// matrix of l2-normalized last-position outputs. text_prompt may be null
  /// only when prompt_len == 0.
  Tape::NodeId encode_text(Tape& tape, Tensor* text_prompt,
                           ForwardTrace* trace = nullptr) const;

  const FrozenTransformer& trunk() const { return trunk_; }
  const Tensor& class_token_table() const { return class_table_; }
  const Tensor& positional() const { return positional_; }

 private:
  TextEncoderConfig cfg_;
  FrozenTransformer trunk_;
  Tensor class_table_;  // C x d
  Tensor positional_;   // d x (M + 1)
  std::uint64_t fingerprint_;
};

/// CLIP-style prediction: softmax of logit_scale * (text features' inner
/// products with the image feature). Inputs must be unit-norm within 1e-4.
Tensor predict_clip(const Tensor& image_feature, const Tensor& text_features,
                    double logit_scale);
Tape::NodeId predict_clip(Tape& tape, Tape::NodeId image_feature,
                          Tape::NodeId text_features, double logit_scale);

}  // namespace reprompt
