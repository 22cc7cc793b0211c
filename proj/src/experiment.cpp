#include "reprompt/experiment.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "reprompt/io.hpp"
#include "reprompt/ops.hpp"

namespace reprompt {

namespace {
std::string context_key(const TrainConfig& cfg) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu|%zu|%a|%d", cfg.k_re, cfg.n_per_class, cfg.tau,
                cfg.toggles.exclude_self ? 1 : 0);
  return buf;
}
}  // namespace

RetrievalDatabase build_database_from_raw(const VisionEncoderConfig& vision_cfg,
                                          const Dataset& data, std::uint32_t shots) {
  VisionEncoder encoder(vision_cfg);
  std::size_t n = data.size();
  std::size_t d = vision_cfg.feature_passthrough ? data.dim() : vision_cfg.dim;
  Tensor encoded({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor raw = data.feature_row(i);
    EncodedFeature f = vision_cfg.feature_passthrough
                           ? encoder.encode_frozen(raw)
                           : encoder.encode_frozen(encoder.patches_from_feature(raw));
    std::copy(f.vector.data(), f.vector.data() + d, encoded.data() + i * d);
  }
  return RetrievalDatabase::build(encoded, data.labels, data.class_count,
                                  encoder.fingerprint(), shots);
}

Workbench::Workbench(const DatasetSpec& spec, const VisionEncoderConfig& vision_cfg,
                     const TextEncoderConfig& text_cfg)
    : spec_(spec), vision_cfg_(vision_cfg), text_cfg_(text_cfg),
      data_(gen_synthetic(spec)),
      db_(build_database_from_raw(vision_cfg, data_.train, spec.shots)) {}

const Workbench::ContextPair& Workbench::contexts_for(const Model& model) {
  std::string key = context_key(model.cfg);
  auto it = context_cache_.find(key);
  if (it == context_cache_.end()) {
    auto pair = std::make_unique<ContextPair>(
        precompute_contexts(model, db_, data_.train, true),
        precompute_contexts(model, db_, data_.test, false));
    it = context_cache_.emplace(key, std::move(pair)).first;
  }
  return *it->second;
}

TrainResult Workbench::run(const TrainConfig& cfg, Model& model) {
  const ContextPair& ctx = contexts_for(model);
  return train(model, db_, data_.train, data_.test, &ctx.first, &ctx.second);
}

TrainResult Workbench::run(const TrainConfig& cfg) {
  Model model = Model::init(vision_cfg_, text_cfg_, db_, cfg);
  return run(cfg, model);
}

void Workbench::warm(const TrainConfig& cfg) {
  Model model = Model::init(vision_cfg_, text_cfg_, db_, cfg);
  contexts_for(model);
}

EvalResult Workbench::evaluate_on(Model& model, const Dataset& test_set) {
  return evaluate(model, db_, test_set);
}

std::size_t fewshot_neighbor_count(std::uint32_t shots) {
  switch (shots) {
    case 1: return 1;
    case 2: return 2;
    case 4: return 4;
    case 8: return 4;
    case 16: return 8;
    default: throw std::invalid_argument("fewshot protocol expects shots in {1,2,4,8,16}");
  }
}

namespace {
std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::runtime_error("sweep: empty value grid");
  return out;
}

RunRecord record_run(const std::filesystem::path& out_dir, const std::string& name,
                     const TrainResult& result) {
  RunRecord rec;
  rec.name = name;
  rec.accuracy = result.final_eval.accuracy;
  std::filesystem::path metrics = out_dir / (name + "_metrics.csv");
  write_metrics_csv(metrics, result.metrics);
  rec.metrics_file = metrics.filename().string();
  rec.metrics_digest = io::file_digest(metrics);
  return rec;
}

void write_summary_csv(const std::filesystem::path& path, const ExperimentReport& report,
                       bool with_shift) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << (with_shift ? "run,accuracy,shifted_accuracy\n" : "run,accuracy\n");
    char buf[160];
    for (const RunRecord& r : report.runs) {
      if (with_shift) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", r.name.c_str(), r.accuracy,
                      r.shifted_accuracy.value_or(std::nan("")));
      } else {
        std::snprintf(buf, sizeof(buf), "%s,%.10g\n", r.name.c_str(), r.accuracy);
      }
      os << buf;
    }
  });
}

ExperimentReport run_ladder(const Config& config, const std::filesystem::path& out_dir) {
  ExperimentReport report;
  report.recipe = "ladder";
  Workbench bench(config.dataset_spec(), config.vision_config(), config.text_config());
  TrainConfig base = config.train_config();

  struct Step { const char* name; bool rg, re, rb; };
  const Step steps[] = {
      {"vlpt", false, false, false},
      {"rg", true, false, false},
      {"rg_re", true, true, false},
      {"rg_re_rb", true, true, true},
  };
  for (const Step& s : steps) {
    TrainConfig cfg = base;
    cfg.toggles.use_rg_loss = s.rg;
    cfg.toggles.use_re_prompt = s.re;
    cfg.toggles.use_adapter = s.rb;
    TrainResult result = bench.run(cfg);
    report.runs.push_back(record_run(out_dir, s.name, result));
  }
  write_summary_csv(out_dir / "ladder.csv", report, false);
  return report;
}

ExperimentReport run_sweep(const Config& config, const std::filesystem::path& out_dir) {
  ExperimentReport report;
  report.recipe = "sweep";
  std::string param = config.text("sweep_param", "lambda");
  std::vector<double> values = parse_values(config.text("sweep_values", "0,0.25,0.5,0.75,1"));
  Workbench bench(config.dataset_spec(), config.vision_config(), config.text_config());
  TrainConfig base = config.train_config();

  for (double v : values) {
    TrainConfig cfg = base;
    if (param == "lambda") {
      cfg.lambda = v;
    } else if (param == "gamma") {
      cfg.gamma = v;
    } else if (param == "J" || param == "depth") {
      cfg.depth = static_cast<std::size_t>(v);
    } else if (param == "k_re") {
      cfg.k_re = static_cast<std::size_t>(v);
    } else if (param == "n") {
      cfg.n_per_class = static_cast<std::size_t>(v);
    } else {
      throw std::runtime_error("sweep: unknown parameter '" + param + "'");
    }
    char name[64];
    std::snprintf(name, sizeof(name), "sweep_%s_%.6g", param.c_str(), v);
    TrainResult result = bench.run(cfg);
    RunRecord rec = record_run(out_dir, name, result);
    rec.knobs[param] = v;
    report.runs.push_back(std::move(rec));
  }
  write_summary_csv(out_dir / "sweep.csv", report, false);
  return report;
}

ExperimentReport run_shift(const Config& config, const std::filesystem::path& out_dir) {
  ExperimentReport report;
  report.recipe = "shift";
  DatasetSpec source_spec = config.dataset_spec();
  double shift = source_spec.shift != 0.0 ? source_spec.shift : 0.2;
  source_spec.shift = 0.0;
  DatasetSpec shifted_spec = source_spec;
  shifted_spec.shift = shift;

  Workbench bench(source_spec, config.vision_config(), config.text_config());
  Dataset shifted_test = gen_synthetic(shifted_spec).test;

  TrainConfig base = config.train_config();
  struct Variant { const char* name; double lambda; };
  const Variant variants[] = {{"full", base.lambda}, {"pure_knn", 1.0}};
  for (const Variant& v : variants) {
    TrainConfig cfg = base;
    cfg.lambda = v.lambda;
    Model model = Model::init(bench.vision_config(), bench.text_config(), bench.db(), cfg);
    TrainResult result = bench.run(cfg, model);
    RunRecord rec = record_run(out_dir, v.name, result);
    rec.shifted_accuracy = bench.evaluate_on(model, shifted_test).accuracy;
    rec.knobs["lambda"] = v.lambda;
    rec.knobs["shift"] = shift;
    report.runs.push_back(std::move(rec));
  }
  write_summary_csv(out_dir / "shift.csv", report, true);
  return report;
}

ExperimentReport run_fewshot(const Config& config, const std::filesystem::path& out_dir) {
  ExperimentReport report;
  report.recipe = "fewshot";
  TrainConfig base = config.train_config();
  for (std::uint32_t shots : {1u, 2u, 4u, 8u, 16u}) {
    DatasetSpec spec = config.dataset_spec();
    spec.shots = shots;
    TrainConfig cfg = base;
    cfg.n_per_class = fewshot_neighbor_count(shots);
    // Retrieval breadth cannot exceed the database.
    cfg.k_re = std::min(cfg.k_re, static_cast<std::size_t>(spec.classes) * shots - 1);
    Workbench bench(spec, config.vision_config(), config.text_config());
    TrainResult result = bench.run(cfg);
    RunRecord rec = record_run(out_dir, "shots_" + std::to_string(shots), result);
    rec.knobs["shots"] = shots;
    rec.knobs["n"] = static_cast<double>(cfg.n_per_class);
    report.runs.push_back(std::move(rec));
  }
  write_summary_csv(out_dir / "fewshot.csv", report, false);
  return report;
}
}  // namespace

ExperimentReport run_experiment(const Config& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::string recipe = config.text("recipe", "ladder");
  ExperimentReport report;
  if (recipe == "ladder") {
    report = run_ladder(config, out_dir);
  } else if (recipe == "sweep") {
    report = run_sweep(config, out_dir);
  } else if (recipe == "shift") {
    report = run_shift(config, out_dir);
  } else if (recipe == "fewshot") {
    report = run_fewshot(config, out_dir);
  } else {
    throw std::runtime_error("unknown recipe '" + recipe + "'");
  }
  report.config_echo = config.raw();
  write_report_json(out_dir / "report.json", report);
  return report;
}

void write_report_json(const std::filesystem::path& path, const ExperimentReport& report) {
  nlohmann::json j;
  j["recipe"] = report.recipe;
  j["config"] = report.config_echo;
  j["runs"] = nlohmann::json::array();
  for (const RunRecord& r : report.runs) {
    nlohmann::json run;
    run["name"] = r.name;
    run["accuracy"] = r.accuracy;
    if (r.shifted_accuracy) run["shifted_accuracy"] = *r.shifted_accuracy;
    run["metrics_file"] = r.metrics_file;
    char digest[32];
    std::snprintf(digest, sizeof(digest), "%016llx",
                  static_cast<unsigned long long>(r.metrics_digest));
    run["metrics_digest"] = digest;
    for (const auto& [k, v] : r.knobs) run["knobs"][k] = v;
    j["runs"].push_back(std::move(run));
  }
  io::atomic_write(path, [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

std::vector<RetrievalHit> query_neighbors(const RetrievalDatabase& db,
                                          const VisionEncoderConfig& vision_cfg,
                                          const Tensor& features, std::size_t row,
                                          std::size_t k) {
  if (features.rank() != 2) throw std::invalid_argument("query_neighbors: features must be n x d");
  if (row >= features.extent(0)) throw std::invalid_argument("query_neighbors: row out of range");
  VisionEncoder encoder(vision_cfg);
  if (db.meta().encoder_fingerprint != encoder.fingerprint()) {
    std::fprintf(stderr, "warning: database fingerprint %016llx does not match encoder %016llx\n",
                 static_cast<unsigned long long>(db.meta().encoder_fingerprint),
                 static_cast<unsigned long long>(encoder.fingerprint()));
  }
  std::size_t d = features.extent(1);
  Tensor raw({d});
  std::copy(features.data() + row * d, features.data() + (row + 1) * d, raw.data());
  EncodedFeature f = vision_cfg.feature_passthrough
                         ? encoder.encode_frozen(raw)
                         : encoder.encode_frozen(encoder.patches_from_feature(raw));
  return db.query_topk({f.vector.data(), f.vector.size()}, k);
}

Tensor dump_attention(Model& model, const RetrievalDatabase& db, const Dataset& data,
                      std::size_t row) {
  if (model.vision.config().feature_passthrough) {
    throw std::invalid_argument("dump_attention: no attention in feature-passthrough mode");
  }
  if (row >= data.size()) throw std::invalid_argument("dump_attention: row out of range");

  Dataset single;
  single.class_count = data.class_count;
  single.features = data.feature_row(row);
  single.features = Tensor({1, data.dim()}, single.features.values());
  single.labels = {data.labels[row]};
  // Contexts validate labels against the database, not class coverage.
  std::vector<SampleContext> ctx = precompute_contexts(model, db, single, false);

  Tape tape;
  ForwardTrace trace;
  std::vector<Tape::NodeId> dynamic;
  if (model.cfg.toggles.use_re_prompt && model.learner.depth() > 0) {
    dynamic = generate_dynamic_prompts(tape, model.learner, tape.constant(ctx[0].prompt_input));
  }
  std::vector<Tensor*> prompts = model.learner.prompt_pointers();
  model.vision.encode_with_prompts(tape, ctx[0].patches, prompts, dynamic, &trace);

  std::size_t n = model.cfg.prompt_count();
  std::size_t s = model.vision.config().patch_tokens;
  std::size_t tokens = trace.last_attention.extent(0);
  if (tokens != 1 + n + s) throw std::logic_error("dump_attention: unexpected token count");

  // Rows: prompt-token queries; columns: patch-token keys, renormalized to a
  // distribution over the patches.
  Tensor out({n, s});
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      out[i * s + j] = trace.last_attention[(1 + i) * tokens + 1 + n + j];
      sum += out[i * s + j];
    }
    for (std::size_t j = 0; j < s; ++j) out[i * s + j] /= sum;
  }
  return out;
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw std::invalid_argument("write_matrix_csv: rank-2 tensor required");
  io::atomic_write(path, [&](std::ostream& os) {
    char buf[40];
    for (std::size_t r = 0; r < matrix.extent(0); ++r) {
      for (std::size_t c = 0; c < matrix.extent(1); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", matrix.at(r, c));
        os << buf << (c + 1 == matrix.extent(1) ? "\n" : ",");
      }
    }
  });
}

}  // namespace reprompt
