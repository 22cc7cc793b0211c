#include "reprompt/prompt_learner.hpp"

#include <stdexcept>

namespace reprompt {

namespace {
constexpr double kLayerNormEps = 1e-5;
}

REConvBlock REConvBlock::init(std::size_t dim, double beta, RngStream& rng) {
  if (beta <= 0.0) throw std::invalid_argument("REConv: beta must be > 0");
  std::size_t hidden = hidden_channels(dim);
  REConvBlock b;
  b.ln_gain = Tensor({dim});
  for (std::size_t i = 0; i < dim; ++i) b.ln_gain[i] = 1.0;
  b.ln_bias = Tensor({dim});
  b.w_reduce = rng.normal_tensor({hidden, dim, 1, 1}, 0.02);
  b.w_mid = rng.normal_tensor({hidden, hidden, 3, 3}, 0.02);
  b.w_expand = Tensor({dim, hidden, 1, 1});  // zero: identity block at step 0
  b.beta = beta;
  for (Tensor* t : b.learnables()) t->set_requires_grad(true);
  return b;
}

std::vector<Tensor*> REConvBlock::learnables() {
  return {&ln_gain, &ln_bias, &w_reduce, &w_mid, &w_expand};
}

Tape::NodeId reconv_forward(Tape& tape, REConvBlock& block, Tape::NodeId tokens) {
  const Tensor& in = tape.value(tokens);
  if (in.rank() != 2 || in.extent(0) != block.ln_gain.size()) {
    throw std::invalid_argument("reconv_forward: token matrix does not match block dimension");
  }
  std::size_t d = in.extent(0), n = in.extent(1);
  Tape::NodeId normed = tape.layer_norm(tokens, tape.leaf(block.ln_gain),
                                        tape.leaf(block.ln_bias), kLayerNormEps);
  Tape::NodeId map = tape.reshape(normed, {d, 1, n});
  Tape::NodeId reduced = tape.conv2d(map, tape.leaf(block.w_reduce), 0);
  Tape::NodeId mixed = tape.conv2d(reduced, tape.leaf(block.w_mid), 1);
  Tape::NodeId expanded = tape.conv2d(mixed, tape.leaf(block.w_expand), 0);
  Tape::NodeId scaled = tape.scale(tape.reshape(expanded, {d, n}), block.beta);
  return tape.add(scaled, tokens);
}

PromptLearner PromptLearner::init(std::size_t layers, std::size_t dim,
                                  std::size_t prompt_count, std::size_t depth,
                                  double beta, std::uint64_t seed) {
  if (depth > layers) throw std::invalid_argument("PromptLearner: depth exceeds layer count");
  PromptLearner learner;
  RngStream prompt_rng(seed, 10);
  learner.visual_prompts.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor p = prompt_rng.normal_tensor({dim, prompt_count}, 0.02);
    p.set_requires_grad(true);
    learner.visual_prompts.push_back(std::move(p));
  }
  RngStream block_rng(seed, 11);
  learner.blocks.reserve(depth);
  for (std::size_t j = 0; j < depth; ++j) {
    learner.blocks.push_back(REConvBlock::init(dim, beta, block_rng));
  }
  return learner;
}

std::vector<Tensor*> PromptLearner::prompt_pointers() {
  std::vector<Tensor*> out;
  out.reserve(visual_prompts.size());
  for (Tensor& p : visual_prompts) out.push_back(&p);
  return out;
}

std::vector<Tensor*> PromptLearner::learnables() {
  std::vector<Tensor*> out = prompt_pointers();
  for (REConvBlock& b : blocks) {
    for (Tensor* t : b.learnables()) out.push_back(t);
  }
  return out;
}

std::vector<Tape::NodeId> generate_dynamic_prompts(Tape& tape, PromptLearner& learner,
                                                   Tape::NodeId prompt_input) {
  std::vector<Tape::NodeId> out;
  out.reserve(learner.blocks.size());
  for (REConvBlock& block : learner.blocks) {
    out.push_back(reconv_forward(tape, block, prompt_input));
  }
  return out;
}

}  // namespace reprompt
