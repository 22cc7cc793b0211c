// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy experiment criteria reuse one pool of training runs; every
// tolerance is fixed here, in code.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "reprompt/checkpoint.hpp"
#include "reprompt/experiment.hpp"
#include "reprompt/ops.hpp"
#include "reprompt/training.hpp"

using namespace reprompt;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int number;
  std::string name;
  bool passed;
  double seconds;
  std::string detail;
};

std::vector<Criterion> g_results;

using Clock = std::chrono::steady_clock;

void run_criterion(int number, const std::string& name,
                   const std::function<bool(std::string&)>& body) {
  Clock::time_point start = Clock::now();
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  g_results.push_back({number, name, ok, secs, detail});
  std::printf("[%s] %d. %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(), secs,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

// Two-worker pool: runs are independent and deterministic, so scheduling
// cannot affect results.
void run_pool(std::vector<std::function<void()>>& tasks, std::size_t workers = 2) {
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      tasks[i]();
    }
  };
  std::vector<std::future<void>> futures;
  for (std::size_t w = 0; w + 1 < workers; ++w) {
    futures.push_back(std::async(std::launch::async, worker));
  }
  worker();
  for (auto& f : futures) f.get();
}

fs::path work_dir() {
  fs::path dir = fs::temp_directory_path() / "reprompt_acceptance";
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::string cli_path() {
  if (const char* env = std::getenv("REPROMPT_CLI")) return env;
  return "./reprompt";
}

int run_cli(const std::string& args) {
  std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return status;
}

// ---------------------------------------------------------------------------
// criterion 1: retrieval oracle equivalence

bool criterion_retrieval_oracle(std::string& detail) {
  RngStream rng(20250809, 1);
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t d = 2 + rng.next_below(15);        // d <= 16
    std::size_t n = 8 + rng.next_below(249);       // |D| <= 256
    Tensor features({n, d});
    std::vector<std::uint32_t> labels(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      // every fourth database duplicates rows to force ties
      if (trial % 4 == 0 && i % 3 == 2) {
        std::copy(features.data() + (i - 1) * d, features.data() + i * d, features.data() + i * d);
      } else {
        Tensor row = ops::l2_normalize(rng.normal_tensor({d}, 1.0));
        std::copy(row.data(), row.data() + d, features.data() + i * d);
      }
    }
    RetrievalDatabase db = RetrievalDatabase::build(features, labels, 1, 0, 0);
    Tensor q = ops::l2_normalize(rng.normal_tensor({d}, 1.0));
    if (trial % 7 == 0) {
      // query equal to a key exercises exact self-match ranking
      std::copy(db.key_row(0).data(), db.key_row(0).data() + d, q.data());
    }

    // independent exhaustive scan with stable tie handling
    std::vector<std::pair<double, std::size_t>> scored(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += q[j] * db.keys()[i * d + j];
      scored[i] = {s, i};
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    for (std::size_t k : {std::size_t(1), std::size_t(7), n}) {
      if (k > n) continue;
      std::vector<RetrievalHit> hits = db.query_topk({q.data(), d}, k);
      if (hits.size() != k) {
        detail = "wrong hit count";
        return false;
      }
      for (std::size_t i = 0; i < k; ++i) {
        if (hits[i].entry_index != scored[i].second) {
          std::ostringstream os;
          os << "trial " << trial << " k=" << k << " rank " << i << ": got "
             << hits[i].entry_index << " want " << scored[i].second;
          detail = os.str();
          return false;
        }
      }
      ++checked;
    }
  }
  detail = std::to_string(checked) + " ranked lists identical";
  return true;
}

// ---------------------------------------------------------------------------
// criterion 2: gradient suite on the small config

struct SmallFixture {
  DatasetSpec spec;
  VisionEncoderConfig vision;
  TextEncoderConfig text;
  TrainConfig train_cfg;

  SmallFixture() {
    spec.classes = 3;
    spec.shots = 2;
    spec.test_per_class = 4;
    spec.dim = 16;
    spec.sigma = 0.1;
    spec.seed = 17;
    vision.layers = 2;
    vision.dim = 16;
    vision.patch_tokens = 4;
    vision.heads = 4;
    vision.seed = 1;
    text.layers = 2;
    text.dim = 16;
    text.heads = 4;
    text.seed = 2;
    train_cfg.k_re = 2;   // N = 4
    train_cfg.depth = 1;  // J = 1
    train_cfg.n_per_class = 2;
    train_cfg.batch_size = 6;
    train_cfg.seed = 4;
  }
};

bool criterion_gradient_suite(std::string& detail) {
  SmallFixture fx;
  Workbench bench(fx.spec, fx.vision, fx.text);
  Model model = Model::init(fx.vision, fx.text, bench.db(), fx.train_cfg);
  if (bench.db().size() != 6) {
    detail = "expected |D| = 6";
    return false;
  }

  // Perturb all groups off their initialization so every path is active
  // (the expansion kernel starts at zero by design).
  RngStream rng(77, 0);
  for (auto& [name, tensor] : model.named_learnables()) {
    for (std::size_t i = 0; i < tensor->size(); ++i) (*tensor)[i] += 0.05 * rng.next_normal();
  }

  auto contexts = precompute_contexts(model, bench.db(), bench.data().train, true);
  const double gamma = model.cfg.gamma;

  auto loss_fn = [&](bool with_grad) {
    Tape text_tape;
    Tape::NodeId f = model.text.encode_text(text_tape, &model.text_prompt);
    Tensor f_param = text_tape.value(f);
    if (with_grad) f_param.set_requires_grad(true);
    double total = 0.0;
    for (const SampleContext& sample : contexts) {
      Tape tape;
      Tape::NodeId fnode = with_grad ? tape.leaf(f_param) : tape.constant(f_param);
      Tape::NodeId p = sample_probability(tape, model, sample, fnode, true);
      Tape::NodeId ce = tape.neg_log(tape.pick(p, sample.label));
      double weight = (1.0 + gamma * sample.p_t) / static_cast<double>(contexts.size());
      Tape::NodeId term = tape.scale(ce, weight);
      total += tape.value(term).item();
      if (with_grad) tape.backward(term);
    }
    if (with_grad) text_tape.backward_seeded(f, Tensor(f_param.shape(), f_param.grad()));
    return total;
  };

  double worst = 0.0;
  std::string worst_group;
  for (auto& [name, tensor] : model.named_learnables()) {
    std::vector<Tensor*> solo{tensor};
    double err = grad_check(loss_fn, solo, 1e-5);
    if (err > worst) {
      worst = err;
      worst_group = name;
    }
  }
  std::ostringstream os;
  os << "max rel err " << worst << " (" << worst_group << ")";
  detail = os.str();
  return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// criterion 3: equation limits

bool criterion_equation_limits(std::string& detail) {
  SmallFixture fx;
  Workbench bench(fx.spec, fx.vision, fx.text);

  // lambda = 0 equals the adapter-free path, prediction by prediction
  TrainConfig zero = fx.train_cfg;
  zero.lambda = 0.0;
  Model with_adapter = Model::init(fx.vision, fx.text, bench.db(), zero);
  TrainConfig off = fx.train_cfg;
  off.toggles.use_adapter = false;
  Model without = Model::init(fx.vision, fx.text, bench.db(), off);

  auto contexts = precompute_contexts(with_adapter, bench.db(), bench.data().test, false);
  Tape ta, tb;
  Tensor fa = ta.value(with_adapter.text.encode_text(ta, &with_adapter.text_prompt));
  Tensor fb = tb.value(without.text.encode_text(tb, &without.text_prompt));
  for (const SampleContext& sample : contexts) {
    Tape t1, t2;
    const Tensor& pa = t1.value(sample_probability(t1, with_adapter, sample, t1.constant(fa), false));
    const Tensor& pb = t2.value(sample_probability(t2, without, sample, t2.constant(fb), false));
    for (std::size_t c = 0; c < pa.size(); ++c) {
      if (std::abs(pa[c] - pb[c]) > 1e-12) {
        detail = "lambda=0 deviates from the adapter-free path";
        return false;
      }
    }
  }

  // lambda = 1 equals the normalized kNN distribution
  TrainConfig one = fx.train_cfg;
  one.lambda = 1.0;
  Model pure = Model::init(fx.vision, fx.text, bench.db(), one);
  for (const SampleContext& sample : contexts) {
    Tape t1;
    Tensor fz = t1.value(pure.text.encode_text(t1, &pure.text_prompt));
    Tape t2;
    Tape::NodeId zq_hat;
    {
      std::vector<Tape::NodeId> dyn;
      Tape::NodeId tokens = t2.constant(sample.prompt_input);
      dyn = generate_dynamic_prompts(t2, pure.learner, tokens);
      std::vector<Tensor*> prompts = pure.learner.prompt_pointers();
      zq_hat = pure.vision.encode_with_prompts(t2, sample.patches, prompts, dyn);
    }
    Tensor knn = t2.value(knn_probability(t2, pure.adapter, zq_hat));
    Tape t3;
    const Tensor& p = t3.value(sample_probability(t3, pure, sample, t3.constant(fz), false));
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (std::abs(p[c] - knn[c]) > 1e-12) {
        detail = "lambda=1 deviates from the pure kNN distribution";
        return false;
      }
    }
  }

  // gamma = 0 collapses the guided loss onto the cross entropy
  Tensor probs = Tensor::vector({0.5, 0.3, 0.2});
  for (double pt : {0.0, 0.3, 2.0}) {
    LossBreakdown lb = reprompt_loss(probs, 1, pt, 0.0);
    if (lb.total != lb.ce) {
      detail = "gamma=0 loss differs from cross entropy";
      return false;
    }
  }

  // k_re = 1 fusion returns the single retrieved vector
  Tensor z1 = ops::l2_normalize(RngStream(3, 3).normal_tensor({8}, 1.0));
  Tensor q = ops::l2_normalize(RngStream(3, 4).normal_tensor({8}, 1.0));
  Tensor fused = fuse_retrieved({q.data(), 8}, {{z1.data(), 8}});
  for (std::size_t i = 0; i < 8; ++i) {
    if (fused[i] != z1[i]) {
      detail = "k_re=1 fusion is not the identity";
      return false;
    }
  }

  // zero-initialized expansion kernel makes the block an exact identity
  RngStream block_rng(5, 5);
  REConvBlock block = REConvBlock::init(16, 10.0, block_rng);
  Tensor tokens = block_rng.normal_tensor({16, 4}, 1.0);
  Tape t4;
  const Tensor& out = t4.value(reconv_forward(t4, block, t4.constant(tokens)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != tokens[i]) {
      detail = "zero-initialized REConv is not the identity";
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// criteria 4 and 5: desk-scale ladder over five seeds

struct LadderOutcome {
  double vlpt = 0.0, rg = 0.0, rg_re = 0.0, full = 0.0;
  double seconds = 0.0;
  TrainResult full_result;
};

LadderOutcome run_ladder_for_seed(std::uint64_t seed) {
  Clock::time_point start = Clock::now();
  DatasetSpec spec;  // the default suite: C=10, d=64, sigma=0.15, 16-shot
  spec.seed = seed;
  VisionEncoderConfig vision;
  TextEncoderConfig text;
  Workbench bench(spec, vision, text);

  TrainConfig base;  // defaults: lambda 0.5, gamma 1e-4, beta 10, k_re 7, J 7
  base.seed = seed;

  struct Step {
    bool rg, re, rb;
    double* slot;
  };
  LadderOutcome outcome;
  Step steps[] = {
      {false, false, false, &outcome.vlpt},
      {true, false, false, &outcome.rg},
      {true, true, false, &outcome.rg_re},
      {true, true, true, &outcome.full},
  };
  std::vector<std::function<void()>> tasks;
  for (Step& step : steps) {
    tasks.push_back([&bench, &base, &step, &outcome]() {
      TrainConfig cfg = base;
      cfg.toggles.use_rg_loss = step.rg;
      cfg.toggles.use_re_prompt = step.re;
      cfg.toggles.use_adapter = step.rb;
      TrainResult result = bench.run(cfg);
      *step.slot = result.final_eval.accuracy;
      if (step.rb) outcome.full_result = std::move(result);
    });
  }
  // The context cache must be populated before concurrent runs touch it.
  bench.warm(base);
  run_pool(tasks);
  outcome.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return outcome;
}

std::vector<LadderOutcome> g_ladders;

bool criterion_desk_scale(std::string& detail) {
  const std::uint64_t seeds[] = {0, 1, 2, 3, 4};
  double full_sum = 0.0, vlpt_sum = 0.0;
  bool per_seed_ok = true;
  double max_seed_seconds = 0.0;
  std::ostringstream os;
  for (std::uint64_t seed : seeds) {
    LadderOutcome outcome = run_ladder_for_seed(seed);
    full_sum += outcome.full;
    vlpt_sum += outcome.vlpt;
    per_seed_ok &= (outcome.full >= outcome.vlpt - 0.005);
    max_seed_seconds = std::max(max_seed_seconds, outcome.seconds);
    os << "seed " << seed << ": vlpt " << outcome.vlpt << " rg " << outcome.rg << " re "
       << outcome.rg_re << " full " << outcome.full << " (" << static_cast<int>(outcome.seconds)
       << "s); ";
    g_ladders.push_back(std::move(outcome));
  }
  double full_mean = full_sum / 5.0;
  double vlpt_mean = vlpt_sum / 5.0;
  os << "full mean " << full_mean << ", vlpt mean " << vlpt_mean;
  detail = os.str();
  bool time_ok = max_seed_seconds < 300.0;
  if (!time_ok) detail += " [seed wall time over 300s]";
  return full_mean >= 0.95 && full_mean >= vlpt_mean - 0.005 && per_seed_ok && time_ok;
}

bool criterion_guided_loss(std::string& detail) {
  if (g_ladders.size() < 3) {
    detail = "ladder runs unavailable";
    return false;
  }
  // total >= ce on every batch (floating-point slack only)
  for (const LadderOutcome& outcome : g_ladders) {
    if (outcome.full_result.min_batch_total_minus_ce < -1e-12) {
      detail = "a batch had total < ce";
      return false;
    }
  }
  // mean p_t per epoch non-increasing (flat counts), majority over 3 seeds
  int wins = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::vector<double>& pts = g_ladders[s].full_result.epoch_mean_pt;
    bool ok = true;
    for (std::size_t e = 1; e < pts.size(); ++e) ok &= (pts[e] <= pts[e - 1] + 1e-9);
    if (ok) ++wins;
  }
  std::ostringstream os;
  os << wins << "/3 seeds with non-increasing epoch mean p_t";
  detail = os.str();
  return wins >= 2;
}

// ---------------------------------------------------------------------------
// criterion 6: intra-class variance oracle and monotonicity

bool criterion_variance(std::string& detail) {
  RngStream rng(30, 0);
  std::size_t n = 60, d = 12;
  std::uint32_t classes = 4;
  Tensor features = rng.normal_tensor({n, d}, 1.0);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % classes);
  VarianceReport report = intra_class_variance(features, labels, classes);

  double oracle = 0.0;
  for (std::uint32_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == c) {
          mean += features.at(i, j);
          ++count;
        }
      }
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == c) var += (features.at(i, j) - mean) * (features.at(i, j) - mean);
      }
      oracle += var / static_cast<double>(count);
    }
  }
  oracle /= static_cast<double>(classes) * static_cast<double>(d);
  if (std::abs(report.scalar - oracle) > 1e-12) {
    detail = "scalar deviates from the two-pass oracle";
    return false;
  }

  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double previous = -1.0;
    bool monotone = true;
    for (double sigma : {0.05, 0.1, 0.2}) {
      DatasetSpec spec;
      spec.classes = 10;
      spec.shots = 16;
      spec.test_per_class = 2;
      spec.dim = 64;
      spec.sigma = sigma;
      spec.seed = seed;
      SyntheticData data = gen_synthetic(spec);
      VarianceReport r =
          intra_class_variance(data.train.features, data.train.labels, data.train.class_count);
      monotone &= (r.scalar > previous);
      previous = r.scalar;
    }
    if (monotone) ++wins;
  }
  std::ostringstream os;
  os << "oracle match; " << wins << "/5 seeds monotone in sigma";
  detail = os.str();
  return wins >= 3;
}

// ---------------------------------------------------------------------------
// criterion 7: determinism and on-disk formats

bool criterion_determinism(std::string& detail) {
  fs::path dir = work_dir() / "determinism";
  fs::create_directories(dir);

  SmallFixture fx;
  fx.train_cfg.epochs = 3;
  auto run_once = [&](const fs::path& metrics, const fs::path& ckpt) {
    Workbench bench(fx.spec, fx.vision, fx.text);
    Model model = Model::init(fx.vision, fx.text, bench.db(), fx.train_cfg);
    TrainResult result = bench.run(fx.train_cfg, model);
    write_metrics_csv(metrics, result.metrics);
    save_checkpoint(ckpt, model);
    bench.db().save(dir / "db.rpdb");
  };
  run_once(dir / "metrics1.csv", dir / "ckpt1.rpck");
  run_once(dir / "metrics2.csv", dir / "ckpt2.rpck");
  if (file_bytes(dir / "metrics1.csv") != file_bytes(dir / "metrics2.csv")) {
    detail = "metrics differ across identical runs";
    return false;
  }
  if (file_bytes(dir / "ckpt1.rpck") != file_bytes(dir / "ckpt2.rpck")) {
    detail = "checkpoints differ across identical runs";
    return false;
  }

  // lossless round trips
  RetrievalDatabase db = RetrievalDatabase::load(dir / "db.rpdb");
  db.save(dir / "db2.rpdb");
  if (file_bytes(dir / "db.rpdb") != file_bytes(dir / "db2.rpdb")) {
    detail = "database round trip is not byte-stable";
    return false;
  }
  Model loaded = load_checkpoint(dir / "ckpt1.rpck", db);
  save_checkpoint(dir / "ckpt3.rpck", loaded);
  if (file_bytes(dir / "ckpt1.rpck") != file_bytes(dir / "ckpt3.rpck")) {
    detail = "checkpoint round trip is not byte-stable";
    return false;
  }

  // corrupted magic and version must be rejected by the CLI with nonzero exit
  std::string db_bytes = file_bytes(dir / "db.rpdb");
  {
    std::string bad = db_bytes;
    bad[0] = 'X';
    std::ofstream os(dir / "bad_magic.rpdb", std::ios::binary);
    os.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  {
    std::string bad = db_bytes;
    bad[4] = 9;
    std::ofstream os(dir / "bad_version.rpdb", std::ios::binary);
    os.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  Tensor one_row({1, 16});
  one_row[0] = 1.0;
  save_embeddings(dir / "probe.rpem", one_row);

  if (run_cli("query --db " + (dir / "bad_magic.rpdb").string() + " --features " +
              (dir / "probe.rpem").string() + " --row 0 --k 1") == 0) {
    detail = "CLI accepted a corrupted magic";
    return false;
  }
  if (run_cli("query --db " + (dir / "bad_version.rpdb").string() + " --features " +
              (dir / "probe.rpem").string() + " --row 0 --k 1") == 0) {
    detail = "CLI accepted an unsupported version";
    return false;
  }
  // sanity: the intact database is accepted (the CLI itself works)
  if (run_cli("query --db " + (dir / "db.rpdb").string() + " --features " +
              (dir / "probe.rpem").string() + " --row 0 --k 1") != 0) {
    detail = "CLI rejected a valid database";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// criterion 8: domain-shift mechanism

bool criterion_shift(std::string& detail) {
  DatasetSpec source;  // defaults
  source.seed = 3;
  DatasetSpec shifted = source;
  shifted.shift = 0.2;

  VisionEncoderConfig vision;
  TextEncoderConfig text;
  Workbench bench(source, vision, text);
  Dataset shifted_test = gen_synthetic(shifted).test;

  TrainConfig full_cfg;
  full_cfg.seed = 3;
  TrainConfig knn_cfg = full_cfg;
  knn_cfg.lambda = 1.0;

  double full_plain = 0.0, full_shifted = 0.0, knn_shifted = 0.0;
  std::vector<std::function<void()>> tasks;
  tasks.push_back([&]() {
    Model model = Model::init(vision, text, bench.db(), full_cfg);
    TrainResult result = bench.run(full_cfg, model);
    full_plain = result.final_eval.accuracy;
    full_shifted = evaluate(model, bench.db(), shifted_test).accuracy;
  });
  tasks.push_back([&]() {
    Model model = Model::init(vision, text, bench.db(), knn_cfg);
    bench.run(knn_cfg, model);
    knn_shifted = evaluate(model, bench.db(), shifted_test).accuracy;
  });
  bench.warm(full_cfg);
  run_pool(tasks);

  std::ostringstream os;
  os << "unshifted " << full_plain << ", shifted " << full_shifted << ", pure-kNN shifted "
     << knn_shifted;
  detail = os.str();
  return (full_plain - full_shifted) < 0.30 && full_shifted >= knn_shifted;
}

}  // namespace

int main() {
  std::printf("retrieval-enhanced prompt learning: acceptance suite\n");
  run_criterion(1, "retrieval oracle equivalence", criterion_retrieval_oracle);
  run_criterion(2, "gradient suite on the small config", criterion_gradient_suite);
  run_criterion(3, "equation limits", criterion_equation_limits);
  run_criterion(4, "desk-scale end-to-end ladder", criterion_desk_scale);
  run_criterion(5, "guided-loss sanity", criterion_guided_loss);
  run_criterion(6, "intra-class variance", criterion_variance);
  run_criterion(7, "determinism and formats", criterion_determinism);
  run_criterion(8, "domain-shift mechanism", criterion_shift);

  int failures = 0;
  for (const Criterion& c : g_results) failures += c.passed ? 0 : 1;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failures,
              g_results.size());
  return failures == 0 ? 0 : 1;
}
