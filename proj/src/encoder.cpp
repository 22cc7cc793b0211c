#include "reprompt/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "reprompt/ops.hpp"

namespace reprompt {

namespace {
constexpr double kLayerNormEps = 1e-5;

Tensor ones(std::size_t n) {
  Tensor t({n});
  for (std::size_t i = 0; i < n; ++i) t[i] = 1.0;
  return t;
}

// diag * I + N(0, noise^2): an identity-dominant projection mixed with a
// seeded random component.
Tensor identity_plus_noise(std::size_t n, double diag, double noise, RngStream& rng) {
  Tensor t = rng.normal_tensor({n, n}, noise);
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] += diag;
  return t;
}

std::uint64_t hash_tensor(std::uint64_t h, const Tensor& t) {
  return fnv1a64(t.data(), t.size() * sizeof(double), h);
}

void check_unit(const Tensor& v, const char* what) {
  double n = ops::norm(v);
  if (std::abs(n - 1.0) > 1e-4) {
    throw std::invalid_argument(std::string(what) + " must be unit-norm");
  }
}
}  // namespace

FrozenTransformer::FrozenTransformer(std::size_t layers, std::size_t dim,
                                     std::size_t heads, std::size_t mlp_ratio,
                                     RngStream rng)
    : dim_(dim), heads_(heads) {
  if (layers < 1) throw std::invalid_argument("transformer: layer count must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("transformer: dim must be divisible by heads");
  }
  std::size_t hidden = dim * mlp_ratio;
  // Seeded scheme for a faithful desk-scale trunk. Value and output
  // projections are identity-dominant so residual updates average token
  // content instead of re-projecting it through fresh random directions;
  // a flat tiny scale collapses features onto accumulated constants, and
  // pure fan-in random matrices scramble the metric across twelve layers.
  // Query/key scales keep attention soft; the MLP stays a small wiggle.
  double sd = std::sqrt(static_cast<double>(dim));
  double sh = std::sqrt(static_cast<double>(hidden));
  layers_.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    TransformerLayerWeights w;
    w.ln1_gain = ones(dim);
    w.ln1_bias = Tensor({dim});
    w.wq = rng.normal_tensor({dim, dim}, 0.5 / sd);
    w.bq = rng.normal_tensor({dim}, 0.02);
    w.wk = rng.normal_tensor({dim, dim}, 0.5 / sd);
    w.bk = rng.normal_tensor({dim}, 0.02);
    w.wv = identity_plus_noise(dim, 0.95, 0.05 / sd, rng);
    w.bv = rng.normal_tensor({dim}, 0.02);
    w.wo = identity_plus_noise(dim, 0.95, 0.05 / sd, rng);
    w.bo = rng.normal_tensor({dim}, 0.02);
    w.ln2_gain = ones(dim);
    w.ln2_bias = Tensor({dim});
    w.w_mlp_in = rng.normal_tensor({hidden, dim}, 1.0 / sd);
    w.b_mlp_in = rng.normal_tensor({hidden}, 0.02);
    w.w_mlp_out = rng.normal_tensor({dim, hidden}, 0.05 / sh);
    w.b_mlp_out = rng.normal_tensor({dim}, 0.02);
    layers_.push_back(std::move(w));
  }
  final_gain_ = ones(dim);
  final_bias_ = Tensor({dim});
}

Tape::NodeId FrozenTransformer::layer_forward(Tape& t, Tape::NodeId x, std::size_t layer,
                                              Tensor* attention_out) const {
  const TransformerLayerWeights& w = layers_[layer];
  std::size_t tokens = t.value(x).extent(1);
  std::size_t dh = dim_ / heads_;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tape::NodeId xn = t.layer_norm(x, t.constant_view(w.ln1_gain), t.constant_view(w.ln1_bias), kLayerNormEps);
  Tape::NodeId q = t.add_col_broadcast(t.matmul(t.constant_view(w.wq), xn), t.constant_view(w.bq));
  Tape::NodeId k = t.add_col_broadcast(t.matmul(t.constant_view(w.wk), xn), t.constant_view(w.bk));
  Tape::NodeId v = t.add_col_broadcast(t.matmul(t.constant_view(w.wv), xn), t.constant_view(w.bv));

  if (attention_out) *attention_out = Tensor({tokens, tokens});
  std::vector<Tape::NodeId> head_outs;
  head_outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tape::NodeId qh = t.slice_rows(q, h * dh, (h + 1) * dh);
    Tape::NodeId kh = t.slice_rows(k, h * dh, (h + 1) * dh);
    Tape::NodeId vh = t.slice_rows(v, h * dh, (h + 1) * dh);
    Tape::NodeId scores = t.scale(t.matmul(t.transpose(qh), kh), inv_sqrt_dh);
    Tape::NodeId attn = t.softmax_rows(scores);
    if (attention_out) {
      const Tensor& a = t.value(attn);
      for (std::size_t i = 0; i < a.size(); ++i) {
        (*attention_out)[i] += a[i] / static_cast<double>(heads_);
      }
    }
    head_outs.push_back(t.matmul(vh, t.transpose(attn)));
  }
  Tape::NodeId merged = t.concat_rows(head_outs);
  Tape::NodeId proj = t.add_col_broadcast(t.matmul(t.constant_view(w.wo), merged), t.constant_view(w.bo));
  Tape::NodeId x1 = t.add(x, proj);

  Tape::NodeId x1n = t.layer_norm(x1, t.constant_view(w.ln2_gain), t.constant_view(w.ln2_bias), kLayerNormEps);
  Tape::NodeId hmid = t.gelu(t.add_col_broadcast(t.matmul(t.constant_view(w.w_mlp_in), x1n), t.constant_view(w.b_mlp_in)));
  Tape::NodeId mlp = t.add_col_broadcast(t.matmul(t.constant_view(w.w_mlp_out), hmid), t.constant_view(w.b_mlp_out));
  return t.add(x1, mlp);
}

Tape::NodeId FrozenTransformer::final_norm(Tape& t, Tape::NodeId x) const {
  return t.layer_norm(x, t.constant_view(final_gain_), t.constant_view(final_bias_), kLayerNormEps);
}

std::uint64_t FrozenTransformer::weights_hash(std::uint64_t h) const {
  for (const TransformerLayerWeights& w : layers_) {
    for (const Tensor* t : {&w.ln1_gain, &w.ln1_bias, &w.wq, &w.bq, &w.wk, &w.bk,
                            &w.wv, &w.bv, &w.wo, &w.bo, &w.ln2_gain, &w.ln2_bias,
                            &w.w_mlp_in, &w.b_mlp_in, &w.w_mlp_out, &w.b_mlp_out}) {
      h = hash_tensor(h, *t);
    }
  }
  h = hash_tensor(h, final_gain_);
  h = hash_tensor(h, final_bias_);
  return h;
}

VisionEncoder::VisionEncoder(const VisionEncoderConfig& cfg)
    : cfg_(cfg),
      trunk_(cfg.layers, cfg.dim, cfg.heads, cfg.mlp_ratio, RngStream(cfg.seed, 1)),
      class_token_(RngStream(cfg.seed, 2).normal_tensor({cfg.dim}, 0.02)),
      positional_(RngStream(cfg.seed, 3).normal_tensor({cfg.dim, 1 + cfg.patch_tokens}, 0.02)),
      patch_lift_(RngStream(cfg.seed, 4).normal_tensor({cfg.patch_tokens * cfg.dim, cfg.dim},
                                                       1.0 / std::sqrt(static_cast<double>(cfg.dim)))) {
  std::uint64_t h = fnv1a64("VISN", 4);
  h = fnv1a64_u64(cfg.feature_passthrough ? 1 : 0, h);
  h = fnv1a64_u64(cfg.layers, h);
  h = fnv1a64_u64(cfg.dim, h);
  h = fnv1a64_u64(cfg.patch_tokens, h);
  h = fnv1a64_u64(cfg.heads, h);
  h = fnv1a64_u64(cfg.mlp_ratio, h);
  h = fnv1a64_u64(cfg.seed, h);
  fingerprint_ = h;
}

std::uint64_t VisionEncoder::weights_hash() const {
  std::uint64_t h = trunk_.weights_hash(0xcbf29ce484222325ULL);
  h = hash_tensor(h, class_token_);
  h = hash_tensor(h, positional_);
  h = hash_tensor(h, patch_lift_);
  return h;
}

Tensor VisionEncoder::patches_from_feature(const Tensor& feature) const {
  if (feature.rank() != 1 || feature.size() != cfg_.dim) {
    throw std::invalid_argument("patches_from_feature: expected a d-vector");
  }
  Tensor flat = ops::matmul(patch_lift_, feature);
  return Tensor({cfg_.patch_tokens, cfg_.dim}, flat.values());
}

EncodedFeature VisionEncoder::encode_frozen(const Tensor& input) const {
  if (input.rank() == 1) {
    if (input.size() != cfg_.dim) throw std::invalid_argument("encode_frozen: feature dimension mismatch");
    return {ops::l2_normalize(input), FeatureSource::kFrozen};
  }
  Tape tape;
  Tape::NodeId out = encode_with_prompts(tape, input, {}, {});
  return {tape.value(out), FeatureSource::kFrozen};
}

Tape::NodeId VisionEncoder::encode_with_prompts(Tape& tape, const Tensor& patches,
                                                std::span<Tensor* const> layer_prompts,
                                                std::span<const Tape::NodeId> dynamic_prompts,
                                                ForwardTrace* trace) const {
  std::size_t d = cfg_.dim, S = cfg_.patch_tokens, L = cfg_.layers;
  if (patches.rank() != 2 || patches.extent(0) != S || patches.extent(1) != d) {
    throw std::invalid_argument("encode_with_prompts: patches must be S x d");
  }
  if (!layer_prompts.empty() && layer_prompts.size() != L) {
    throw std::invalid_argument("encode_with_prompts: need one prompt set per layer");
  }
  if (dynamic_prompts.size() > L) {
    throw std::invalid_argument("encode_with_prompts: retrieval-enhanced depth exceeds layer count");
  }
  if (!dynamic_prompts.empty() && layer_prompts.empty()) {
    throw std::invalid_argument("encode_with_prompts: dynamic prompts require prompt sets");
  }
  std::size_t N = layer_prompts.empty() ? 0 : layer_prompts[0]->extent(1);
  for (Tensor* p : layer_prompts) {
    if (p->rank() != 2 || p->extent(0) != d || p->extent(1) != N) {
      throw std::invalid_argument("encode_with_prompts: prompt shape mismatch");
    }
  }
  for (Tape::NodeId id : dynamic_prompts) {
    const Tensor& v = tape.value(id);
    if (v.rank() != 2 || v.extent(0) != d || v.extent(1) != N) {
      throw std::invalid_argument("encode_with_prompts: dynamic prompt shape mismatch");
    }
  }

  // Class and patch tokens receive positional embeddings once, at the input.
  Tensor cls0({d, 1});
  for (std::size_t i = 0; i < d; ++i) cls0[i] = class_token_[i] + positional_[i * (1 + S)];
  Tensor pat0({d, S});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t s = 0; s < S; ++s) {
      pat0[i * S + s] = patches[s * d + i] + positional_[i * (1 + S) + 1 + s];
    }
  }

  Tape::NodeId cls = tape.constant(std::move(cls0));
  Tape::NodeId pat = tape.constant(std::move(pat0));
  for (std::size_t j = 0; j < L; ++j) {
    Tape::NodeId seq;
    if (layer_prompts.empty()) {
      std::array<Tape::NodeId, 2> parts{cls, pat};
      seq = tape.concat_cols(parts);
    } else {
      Tape::NodeId prompt = tape.leaf(*layer_prompts[j]);
      if (j < dynamic_prompts.size()) prompt = tape.add(prompt, dynamic_prompts[j]);
      std::array<Tape::NodeId, 3> parts{cls, prompt, pat};
      seq = tape.concat_cols(parts);
    }
    if (trace) {
      trace->layer_token_counts.push_back(tape.value(seq).extent(1));
      trace->class_token_positions.push_back(0);
    }
    Tensor* capture = (trace && j + 1 == L) ? &trace->last_attention : nullptr;
    Tape::NodeId out = trunk_.layer_forward(tape, seq, j, capture);
    cls = tape.slice_cols(out, 0, 1);
    pat = tape.slice_cols(out, 1 + N, 1 + N + S);
  }
  Tape::NodeId normed = trunk_.final_norm(tape, cls);
  return tape.l2_normalize(tape.reshape(normed, {d}));
}

TextEncoder::TextEncoder(const TextEncoderConfig& cfg)
    : cfg_(cfg),
      trunk_(cfg.layers, cfg.dim, cfg.heads, cfg.mlp_ratio, RngStream(cfg.seed, 1)),
      class_table_(RngStream(cfg.seed, 2).normal_tensor({std::max<std::size_t>(cfg.class_count, 1), cfg.dim}, 1.0)),
      positional_(RngStream(cfg.seed, 3).normal_tensor({cfg.dim, cfg.prompt_len + 1}, 0.02)) {
  if (cfg.class_count == 0) throw std::invalid_argument("text encoder: class table empty");
  std::uint64_t h = fnv1a64("TEXT", 4);
  h = fnv1a64_u64(cfg.layers, h);
  h = fnv1a64_u64(cfg.dim, h);
  h = fnv1a64_u64(cfg.heads, h);
  h = fnv1a64_u64(cfg.mlp_ratio, h);
  h = fnv1a64_u64(cfg.seed, h);
  h = fnv1a64_u64(cfg.class_count, h);
  h = fnv1a64_u64(cfg.prompt_len, h);
  fingerprint_ = h;
}

std::uint64_t TextEncoder::weights_hash() const {
  std::uint64_t h = trunk_.weights_hash(0xcbf29ce484222325ULL);
  h = hash_tensor(h, class_table_);
  h = hash_tensor(h, positional_);
  return h;
}

Tape::NodeId TextEncoder::encode_text(Tape& tape, Tensor* text_prompt,
                                      ForwardTrace* trace) const {
  std::size_t d = cfg_.dim, M = cfg_.prompt_len, C = cfg_.class_count, L = cfg_.layers;
  if (M > 0) {
    if (!text_prompt) throw std::invalid_argument("encode_text: missing text prompt");
    if (text_prompt->rank() != 2 || text_prompt->extent(0) != d || text_prompt->extent(1) != M) {
      throw std::invalid_argument("encode_text: text prompt must be d x M");
    }
  }

  Tape::NodeId prompt = 0;
  if (M > 0) {
    Tensor pos_prompt({d, M});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t m = 0; m < M; ++m) pos_prompt[i * M + m] = positional_[i * (M + 1) + m];
    prompt = tape.add(tape.leaf(*text_prompt), tape.constant(std::move(pos_prompt)));
  }

  std::vector<Tape::NodeId> columns;
  columns.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    Tensor cls({d, 1});
    for (std::size_t i = 0; i < d; ++i) {
      cls[i] = class_table_[c * d + i] + positional_[i * (M + 1) + M];
    }
    Tape::NodeId seq;
    Tape::NodeId cls_node = tape.constant(std::move(cls));
    if (M > 0) {
      std::array<Tape::NodeId, 2> parts{prompt, cls_node};
      seq = tape.concat_cols(parts);
    } else {
      seq = cls_node;
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (trace && c == 0) {
        trace->layer_token_counts.push_back(tape.value(seq).extent(1));
      }
      seq = trunk_.layer_forward(tape, seq, l);
    }
    Tape::NodeId last = tape.slice_cols(seq, M, M + 1);
    Tape::NodeId normed = trunk_.final_norm(tape, last);
    columns.push_back(tape.reshape(tape.l2_normalize(tape.reshape(normed, {d})), {d, 1}));
  }
  return tape.concat_cols(columns);
}

Tensor predict_clip(const Tensor& image_feature, const Tensor& text_features,
                    double logit_scale) {
  Tape tape;
  Tape::NodeId p = predict_clip(tape, tape.constant(image_feature),
                                tape.constant(text_features), logit_scale);
  return tape.value(p);
}

Tape::NodeId predict_clip(Tape& tape, Tape::NodeId image_feature,
                          Tape::NodeId text_features, double logit_scale) {
  if (logit_scale <= 0.0) throw std::invalid_argument("predict_clip: logit_scale must be > 0");
  const Tensor& z = tape.value(image_feature);
  const Tensor& f = tape.value(text_features);
  if (z.rank() != 1) throw std::invalid_argument("predict_clip: image feature must be a vector");
  if (f.rank() != 2 || f.extent(0) != z.size()) {
    throw std::invalid_argument("predict_clip: text features must be d x C");
  }
  check_unit(z, "predict_clip: image feature");
  std::size_t d = f.extent(0), C = f.extent(1);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += f[i * C + c] * f[i * C + c];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
      throw std::invalid_argument("predict_clip: text feature columns must be unit-norm");
    }
  }
  Tape::NodeId logits = tape.scale(tape.matmul(tape.transpose(text_features), image_feature), logit_scale);
  return tape.softmax_rows(logits);
}

}  // namespace reprompt
