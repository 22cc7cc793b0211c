#pragma once

#include <cstdint>
#include <vector>

#include "reprompt/rng.hpp"
#include "reprompt/tape.hpp"
#include "reprompt/tensor.hpp"

namespace reprompt {

/// Residual bottleneck block producing a dynamic prompt from the retrieval
/// token matrix: scale * conv(1x1 -> 3x3 -> 1x1 over layer-normalized
/// tokens) + input. Tokens are laid out as a 2-D map with d channels and
/// spatial extent 1 x token_count, so the 3x3 kernel mixes adjacent tokens.
struct REConvBlock {
  Tensor ln_gain, ln_bias;  // d
  Tensor w_reduce;          // C_hidden x d x 1 x 1
  Tensor w_mid;             // C_hidden x C_hidden x 3 x 3
  Tensor w_expand;          // d x C_hidden x 1 x 1
  double beta = 10.0;

  static std::size_t hidden_channels(std::size_t dim) { return std::max<std::size_t>(1, dim / 4); }

  /// Kernels drawn at scale 0.02 except w_expand, which starts at zero so
  /// the block is exactly the identity at initialization.
  static REConvBlock init(std::size_t dim, double beta, RngStream& rng);

  std::vector<Tensor*> learnables();
};

Tape::NodeId reconv_forward(Tape& tape, REConvBlock& block, Tape::NodeId tokens);

/// Learnable per-layer visual prompt sets plus the J retrieval-enhanced
/// blocks that condition the first J layers on retrieved neighbors.
struct PromptLearner {
  std::vector<Tensor> visual_prompts;  // L sets, each d x N
  std::vector<REConvBlock> blocks;     // J independent blocks

  static PromptLearner init(std::size_t layers, std::size_t dim, std::size_t prompt_count,
                            std::size_t depth, double beta, std::uint64_t seed);

  std::size_t depth() const { return blocks.size(); }
  std::vector<Tensor*> prompt_pointers();
  std::vector<Tensor*> learnables();
};

/// One dynamic prompt per block, all computed from the same token matrix.
std::vector<Tape::NodeId> generate_dynamic_prompts(Tape& tape, PromptLearner& learner,
                                                   Tape::NodeId prompt_input);

}  // namespace reprompt
