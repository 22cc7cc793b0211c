#include "reprompt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "reprompt/io.hpp"
#include "reprompt/ops.hpp"
#include "reprompt/rng.hpp"

namespace reprompt {

double guidance_factor(const RetrievalDatabase& db, std::span<const double> z_q,
                       std::uint32_t y_true, std::size_t n_per_class, double tau,
                       std::optional<std::size_t> exclude) {
  if (n_per_class < 1) throw std::invalid_argument("guidance_factor: n must be >= 1");
  if (tau <= 0.0) throw std::invalid_argument("guidance_factor: tau must be > 0");
  std::size_t classes = db.meta().class_count;
  std::size_t k = classes * n_per_class;
  std::size_t available = db.size() - (exclude && *exclude < db.size() ? 1 : 0);
  if (k > available) {
    throw std::invalid_argument("guidance_factor: C*n exceeds database size");
  }
  if (y_true >= classes) throw std::invalid_argument("guidance_factor: label out of range");

  std::vector<RetrievalHit> hits = db.query_topk(z_q, k, exclude);
  Tensor scaled({hits.size()});
  for (std::size_t i = 0; i < hits.size(); ++i) scaled[i] = tau * hits[i].similarity;
  Tensor weights = ops::softmax(scaled);
  double p_true = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (db.label(hits[i].entry_index) == y_true) p_true += weights[i];
  }
  return -std::log(std::max(p_true, 1e-12));
}

LossBreakdown reprompt_loss(const Tensor& p, std::uint32_t y_true, double p_t, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("reprompt_loss: gamma must be >= 0");
  if (p_t < 0.0) throw std::invalid_argument("reprompt_loss: p_t must be >= 0");
  if (y_true >= p.size()) throw std::invalid_argument("reprompt_loss: label out of range");
  LossBreakdown out;
  out.ce = -std::log(std::max(p[y_true], 1e-12));
  out.p_t = p_t;
  out.total = (1.0 + gamma * p_t) * out.ce;
  return out;
}

Model Model::init(const VisionEncoderConfig& vision_cfg, const TextEncoderConfig& text_cfg,
                  const RetrievalDatabase& db, const TrainConfig& cfg) {
  if (cfg.depth > vision_cfg.layers) {
    throw std::invalid_argument("model: retrieval-enhanced depth exceeds layer count");
  }
  TextEncoderConfig tcfg = text_cfg;
  tcfg.dim = vision_cfg.dim;
  tcfg.class_count = db.meta().class_count;
  tcfg.prompt_len = cfg.text_prompt_len;

  std::size_t depth = cfg.toggles.use_re_prompt ? cfg.depth : 0;
  Model model{
      VisionEncoder(vision_cfg),
      TextEncoder(tcfg),
      Tensor{},
      PromptLearner::init(vision_cfg.layers, vision_cfg.dim, cfg.prompt_count(), depth,
                          cfg.beta, cfg.seed),
      AdapterState::init(db, cfg.tau, cfg.lambda, cfg.adapter_keys_frozen, cfg.adapter_top_k),
      cfg,
  };
  if (cfg.text_prompt_len > 0) {
    model.text_prompt = RngStream(cfg.seed, 20).normal_tensor({vision_cfg.dim, cfg.text_prompt_len}, 0.02);
    model.text_prompt.set_requires_grad(true);
  }
  return model;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_learnables() {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (text_prompt.size() > 0) out.emplace_back("P_T", &text_prompt);
  for (std::size_t i = 0; i < learner.visual_prompts.size(); ++i) {
    out.emplace_back("P_I[" + std::to_string(i + 1) + "]", &learner.visual_prompts[i]);
  }
  for (std::size_t j = 0; j < learner.blocks.size(); ++j) {
    std::string base = "REConv[" + std::to_string(j + 1) + "].";
    REConvBlock& b = learner.blocks[j];
    out.emplace_back(base + "ln_gain", &b.ln_gain);
    out.emplace_back(base + "ln_bias", &b.ln_bias);
    out.emplace_back(base + "w_reduce", &b.w_reduce);
    out.emplace_back(base + "w_mid", &b.w_mid);
    out.emplace_back(base + "w_expand", &b.w_expand);
  }
  if (cfg.toggles.use_adapter && !adapter.keys_frozen) {
    out.emplace_back("adapter_keys", &adapter.cache_keys);
  }
  return out;
}

std::uint64_t Model::frozen_hash() const {
  return fnv1a64_u64(text.weights_hash(), vision.weights_hash());
}

namespace {
void validate_run(const Model& model, const RetrievalDatabase& db, const Dataset& data) {
  if (db.meta().encoder_fingerprint != model.vision.fingerprint()) {
    throw std::invalid_argument("database fingerprint does not match the frozen encoder");
  }
  if (data.size() == 0) throw std::invalid_argument("empty dataset");
  if (data.class_count != db.meta().class_count) {
    throw std::invalid_argument("dataset class count does not match database");
  }
  if (data.dim() != (model.vision.config().feature_passthrough ? db.dim() : model.vision.config().dim)) {
    throw std::invalid_argument("dataset dimension does not match encoder");
  }
}

std::uint32_t argmax_lowest(const Tensor& p) {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < p.size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  return best;
}
}  // namespace

std::vector<SampleContext> precompute_contexts(const Model& model, const RetrievalDatabase& db,
                                               const Dataset& data, bool is_train_set) {
  const TrainConfig& cfg = model.cfg;
  bool passthrough = model.vision.config().feature_passthrough;
  bool exclude_self = is_train_set && cfg.toggles.exclude_self;
  if (exclude_self && db.size() != data.size()) {
    throw std::invalid_argument("exclude_self requires a database built from this training set");
  }

  std::vector<SampleContext> contexts(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    SampleContext& ctx = contexts[i];
    ctx.label = data.labels[i];
    Tensor raw = data.feature_row(i);
    if (passthrough) {
      ctx.z_q = ops::l2_normalize(raw);
    } else {
      ctx.patches = model.vision.patches_from_feature(raw);
      ctx.z_q = model.vision.encode_frozen(ctx.patches).vector;
    }
    std::optional<std::size_t> exclude;
    if (exclude_self) exclude = i;

    std::span<const double> zq{ctx.z_q.data(), ctx.z_q.size()};
    std::vector<RetrievalHit> hits = db.query_topk(zq, cfg.k_re, exclude);
    std::vector<std::span<const double>> retrieved;
    retrieved.reserve(hits.size());
    for (const RetrievalHit& h : hits) retrieved.push_back(db.value_row(h.entry_index));
    Tensor fused = fuse_retrieved(zq, retrieved);
    ctx.prompt_input = assemble_prompt_input(zq, fused, retrieved);

    std::size_t guided = static_cast<std::size_t>(db.meta().class_count) * cfg.n_per_class;
    std::size_t available = db.size() - (exclude ? 1 : 0);
    if (cfg.n_per_class >= 1 && guided <= available) {
      ctx.p_t = guidance_factor(db, zq, ctx.label, cfg.n_per_class, cfg.tau, exclude);
      ctx.p_t_valid = true;
    }
  }
  return contexts;
}

Tape::NodeId sample_probability(Tape& tape, Model& model, const SampleContext& ctx,
                                Tape::NodeId text_features, bool training_pass) {
  const TrainConfig& cfg = model.cfg;
  Tape::NodeId z_hat;
  if (model.vision.config().feature_passthrough) {
    z_hat = tape.constant(ctx.z_q);
  } else {
    std::vector<Tape::NodeId> dynamic;
    if (cfg.toggles.use_re_prompt && model.learner.depth() > 0) {
      Tape::NodeId tokens = tape.constant(ctx.prompt_input);
      dynamic = generate_dynamic_prompts(tape, model.learner, tokens);
    }
    std::vector<Tensor*> prompts = model.learner.prompt_pointers();
    z_hat = model.vision.encode_with_prompts(tape, ctx.patches, prompts, dynamic);
  }
  Tape::NodeId p_p = predict_clip(tape, z_hat, text_features, cfg.logit_scale);
  bool mix = cfg.toggles.use_adapter && (!training_pass || cfg.interpolate_in_training);
  if (!mix) return p_p;
  Tape::NodeId p_knn = knn_probability(tape, model.adapter, z_hat);
  return interpolate(tape, p_knn, p_p, model.adapter.lambda);
}

AdamW::AdamW(std::vector<Tensor*> params, double lr, double eps, double weight_decay)
    : params_(std::move(params)), lr_(lr), eps_(eps), weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    if (!p->requires_grad()) throw std::invalid_argument("AdamW: parameter without gradient");
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    std::vector<double>& grad = p.grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      double g = grad[k];
      m_[pi][k] = beta1_ * m_[pi][k] + (1.0 - beta1_) * g;
      v_[pi][k] = beta2_ * v_[pi][k] + (1.0 - beta2_) * g * g;
      double mh = m_[pi][k] / bc1;
      double vh = v_[pi][k] / bc2;
      p[k] -= lr_ * (mh / (std::sqrt(vh) + eps_) + weight_decay_ * p[k]);
    }
    p.zero_grad();
  }
}

namespace {
/// Shared text-feature computation for one step: the text graph is recorded
/// once and re-seeded with the gradient accumulated through the per-sample
/// graphs, which is exact by linearity of the chain rule.
struct TextStep {
  Tape tape;
  Tape::NodeId f_node = 0;
  Tensor f_param;  // leaf stand-in for the per-sample tapes
  bool learnable = false;

  void build(Model& model) {
    learnable = model.text_prompt.size() > 0;
    f_node = model.text.encode_text(tape, learnable ? &model.text_prompt : nullptr);
    f_param = tape.value(f_node);
    if (learnable) f_param.set_requires_grad(true);
  }

  void flush() {
    if (!learnable) return;
    tape.backward_seeded(f_node, Tensor(f_param.shape(), f_param.grad()));
  }
};
}  // namespace

EvalResult evaluate(Model& model, const RetrievalDatabase& db, const Dataset& test_set,
                    const std::vector<SampleContext>* ctx) {
  validate_run(model, db, test_set);
  std::vector<SampleContext> local;
  if (!ctx) {
    local = precompute_contexts(model, db, test_set, false);
    ctx = &local;
  }
  std::uint32_t classes = test_set.class_count;

  Tape text_tape;
  Tape::NodeId f_node = model.text.encode_text(
      text_tape, model.text_prompt.size() > 0 ? &model.text_prompt : nullptr);
  Tensor f_value = text_tape.value(f_node);

  EvalResult result;
  result.confusion.assign(classes, std::vector<std::uint32_t>(classes, 0));
  const TrainConfig& cfg = model.cfg;
  double sum_loss = 0.0, sum_ce = 0.0, sum_pt = 0.0;
  for (const SampleContext& sample : *ctx) {
    Tape tape;
    Tape::NodeId f = tape.constant_view(f_value);
    Tape::NodeId p = sample_probability(tape, model, sample, f, false);
    const Tensor& probs = tape.value(p);
    std::uint32_t predicted = argmax_lowest(probs);
    result.confusion[sample.label][predicted] += 1;
    double pt = (cfg.toggles.use_rg_loss && sample.p_t_valid) ? sample.p_t : 0.0;
    LossBreakdown lb = reprompt_loss(probs, sample.label, pt, cfg.toggles.use_rg_loss ? cfg.gamma : 0.0);
    sum_loss += lb.total;
    sum_ce += lb.ce;
    sum_pt += pt;
  }

  std::size_t n = ctx->size();
  std::size_t correct = 0;
  result.per_class_accuracy.assign(classes, 0.0);
  for (std::uint32_t c = 0; c < classes; ++c) {
    std::size_t row_total = 0;
    for (std::uint32_t k = 0; k < classes; ++k) row_total += result.confusion[c][k];
    correct += result.confusion[c][c];
    if (row_total > 0) {
      result.per_class_accuracy[c] =
          static_cast<double>(result.confusion[c][c]) / static_cast<double>(row_total);
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  result.mean_loss = sum_loss / static_cast<double>(n);
  result.mean_ce = sum_ce / static_cast<double>(n);
  result.mean_pt = sum_pt / static_cast<double>(n);
  return result;
}

TrainResult train(Model& model, const RetrievalDatabase& db, const Dataset& train_set,
                  const Dataset& test_set,
                  const std::vector<SampleContext>* train_ctx,
                  const std::vector<SampleContext>* test_ctx) {
  validate_run(model, db, train_set);
  validate_run(model, db, test_set);
  const TrainConfig& cfg = model.cfg;

  std::vector<SampleContext> local_train, local_test;
  if (!train_ctx) {
    local_train = precompute_contexts(model, db, train_set, true);
    train_ctx = &local_train;
  }
  if (!test_ctx) {
    local_test = precompute_contexts(model, db, test_set, false);
    test_ctx = &local_test;
  }
  if (cfg.toggles.use_rg_loss) {
    for (const SampleContext& c : *train_ctx) {
      if (!c.p_t_valid) {
        throw std::invalid_argument("guided loss requires C*n <= |D|");
      }
    }
  }

  std::vector<Tensor*> params;
  for (auto& [name, t] : model.named_learnables()) params.push_back(t);
  AdamW optimizer(params, cfg.learning_rate, cfg.adam_eps, cfg.weight_decay);

  TrainResult result;
  EvalResult initial = evaluate(model, db, test_set, test_ctx);
  result.metrics.push_back({0, "test", initial.mean_loss, initial.mean_ce,
                            initial.mean_pt, initial.accuracy});

  RngStream shuffle_rng(cfg.seed, 100);
  std::size_t n = train_ctx->size();
  double min_margin = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = shuffle_rng.permutation(n);
    double sum_total = 0.0, sum_ce = 0.0, sum_pt = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::size_t end = std::min(n, start + cfg.batch_size);
      double batch_inv = 1.0 / static_cast<double>(end - start);

      TextStep text_step;
      text_step.build(model);

      double batch_total = 0.0, batch_ce = 0.0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const SampleContext& sample = (*train_ctx)[order[bi]];
        Tape tape;
        Tape::NodeId f = text_step.learnable ? tape.leaf(text_step.f_param)
                                             : tape.constant_view(text_step.f_param);
        Tape::NodeId p = sample_probability(tape, model, sample, f, true);
        Tape::NodeId ce_node = tape.neg_log(tape.pick(p, sample.label));

        double pt = cfg.toggles.use_rg_loss ? sample.p_t : 0.0;
        double weight = 1.0 + (cfg.toggles.use_rg_loss ? cfg.gamma * pt : 0.0);
        tape.backward(tape.scale(ce_node, weight * batch_inv));

        double ce = tape.value(ce_node).item();
        batch_ce += ce;
        batch_total += weight * ce;
        sum_pt += pt;
        if (argmax_lowest(tape.value(p)) == sample.label) ++correct;
      }
      text_step.flush();
      optimizer.step();

      sum_total += batch_total;
      sum_ce += batch_ce;
      min_margin = std::min(min_margin, (batch_total - batch_ce) * batch_inv);
    }

    double inv_n = 1.0 / static_cast<double>(n);
    result.metrics.push_back({epoch, "train", sum_total * inv_n, sum_ce * inv_n,
                              sum_pt * inv_n, static_cast<double>(correct) * inv_n});
    result.epoch_mean_pt.push_back(sum_pt * inv_n);
  }

  if (cfg.epochs == 0) {
    result.final_eval = initial;
  } else {
    result.final_eval = evaluate(model, db, test_set, test_ctx);
    result.metrics.push_back({cfg.epochs, "test", result.final_eval.mean_loss,
                              result.final_eval.mean_ce, result.final_eval.mean_pt,
                              result.final_eval.accuracy});
  }
  result.min_batch_total_minus_ce = std::isfinite(min_margin) ? min_margin : 0.0;
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << "epoch,split,loss,ce,mean_pt,accuracy\n";
    char buf[128];
    for (const EpochMetrics& r : rows) {
      std::snprintf(buf, sizeof(buf), "%zu,%s,%.10g,%.10g,%.10g,%.10g\n", r.epoch,
                    r.split.c_str(), r.loss, r.ce, r.mean_pt, r.accuracy);
      os << buf;
    }
  });
}

}  // namespace reprompt
