#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "reprompt/checkpoint.hpp"
#include "reprompt/config.hpp"
#include "reprompt/dataset.hpp"
#include "reprompt/experiment.hpp"
#include "reprompt/io.hpp"
#include "reprompt/training.hpp"

namespace fs = std::filesystem;
using namespace reprompt;

namespace {

Config load_config(const std::string& path, long seed_override) {
  Config cfg = path.empty() ? Config() : Config::parse_file(path);
  if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
  return cfg;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, long seed) {
  Config cfg = load_config(config_path, -1);
  DatasetSpec spec = cfg.dataset_spec();
  if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
  SyntheticData data = gen_synthetic(spec);
  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  save_embeddings(dir / "train_features.rpem", data.train.features);
  save_labels(dir / "train_labels.rplb", data.train.labels, data.train.class_count);
  save_embeddings(dir / "test_features.rpem", data.test.features);
  save_labels(dir / "test_labels.rplb", data.test.labels, data.test.class_count);
  std::printf("wrote %zu train and %zu test rows (C=%u, d=%u) to %s\n", data.train.size(),
              data.test.size(), spec.classes, spec.dim, out_dir.c_str());
  return 0;
}

int cmd_build_db(const std::string& config_path, const std::string& features,
                 const std::string& labels, const std::string& out) {
  Config cfg = load_config(config_path, -1);
  Dataset data = ingest_embeddings(features, labels);
  std::uint32_t shots = data.class_count > 0 && data.size() % data.class_count == 0
                            ? static_cast<std::uint32_t>(data.size() / data.class_count)
                            : 0;
  RetrievalDatabase db = build_database_from_raw(cfg.vision_config(), data, shots);
  db.save(out);
  std::printf("built database: %u entries, dim %u, %u classes, fingerprint %016llx\n",
              db.meta().entry_count, db.meta().dim, db.meta().class_count,
              static_cast<unsigned long long>(db.meta().encoder_fingerprint));
  return 0;
}

int cmd_train(const std::string& config_path, long seed, const std::string& db_path,
              const std::string& train_features, const std::string& train_labels,
              const std::string& test_features, const std::string& test_labels,
              const std::string& out_dir) {
  Config cfg = load_config(config_path, seed);
  RetrievalDatabase db = RetrievalDatabase::load(db_path);
  Dataset train_set = ingest_embeddings(train_features, train_labels);
  Dataset test_set = ingest_embeddings(test_features, test_labels);

  Model model = Model::init(cfg.vision_config(), cfg.text_config(), db, cfg.train_config());
  TrainResult result = train(model, db, train_set, test_set);

  fs::create_directories(out_dir);
  fs::path dir(out_dir);
  write_metrics_csv(dir / "metrics.csv", result.metrics);
  save_checkpoint(dir / "checkpoint.rpck", model);
  std::printf("final test accuracy %.4f; wrote %s and %s\n", result.final_eval.accuracy,
              (dir / "metrics.csv").c_str(), (dir / "checkpoint.rpck").c_str());
  return 0;
}

int cmd_eval(const std::string& db_path, const std::string& checkpoint_path,
             const std::string& features, const std::string& labels,
             const std::string& out_dir) {
  RetrievalDatabase db = RetrievalDatabase::load(db_path);
  Model model = load_checkpoint(checkpoint_path, db);
  Dataset test_set = ingest_embeddings(features, labels);
  EvalResult result = evaluate(model, db, test_set);

  std::printf("accuracy %.4f over %zu samples\n", result.accuracy, test_set.size());
  for (std::size_t c = 0; c < result.per_class_accuracy.size(); ++c) {
    std::printf("  class %zu: %.4f\n", c, result.per_class_accuracy[c]);
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::vector<EpochMetrics> row{{model.cfg.epochs, "test", result.mean_loss, result.mean_ce,
                                   result.mean_pt, result.accuracy}};
    write_metrics_csv(fs::path(out_dir) / "eval_metrics.csv", row);
    Tensor confusion({result.confusion.size(), result.confusion.size()});
    for (std::size_t i = 0; i < result.confusion.size(); ++i)
      for (std::size_t j = 0; j < result.confusion.size(); ++j)
        confusion.at(i, j) = result.confusion[i][j];
    write_matrix_csv(fs::path(out_dir) / "confusion.csv", confusion);
  }
  return 0;
}

int cmd_query(const std::string& config_path, const std::string& db_path,
              const std::string& features_path, std::size_t row, std::size_t k) {
  Config cfg = load_config(config_path, -1);
  RetrievalDatabase db = RetrievalDatabase::load(db_path);
  Tensor features = load_embeddings(features_path);
  std::vector<RetrievalHit> hits = query_neighbors(db, cfg.vision_config(), features, row, k);
  std::printf("%-6s %-8s %-8s %s\n", "rank", "index", "label", "similarity");
  for (std::size_t i = 0; i < hits.size(); ++i) {
    std::printf("%-6zu %-8zu %-8u %.6f\n", i + 1, hits[i].entry_index,
                db.label(hits[i].entry_index), hits[i].similarity);
  }
  return 0;
}

int cmd_variance(const std::string& config_path, const std::string& features_path,
                 const std::string& labels_path, const std::string& mode) {
  Config cfg = load_config(config_path, -1);
  Dataset data = ingest_embeddings(features_path, labels_path);
  Tensor features = data.features;
  if (mode == "frozen") {
    VisionEncoderConfig vcfg = cfg.vision_config();
    VisionEncoder encoder(vcfg);
    std::size_t d = vcfg.feature_passthrough ? data.dim() : vcfg.dim;
    Tensor encoded({data.size(), d});
    for (std::size_t i = 0; i < data.size(); ++i) {
      Tensor raw = data.feature_row(i);
      EncodedFeature f = vcfg.feature_passthrough
                             ? encoder.encode_frozen(raw)
                             : encoder.encode_frozen(encoder.patches_from_feature(raw));
      std::copy(f.vector.data(), f.vector.data() + d, encoded.data() + i * d);
    }
    features = std::move(encoded);
  } else if (mode != "raw") {
    std::fprintf(stderr, "error: mode must be raw or frozen\n");
    return 1;
  }
  VarianceReport report = intra_class_variance(features, data.labels, data.class_count);
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < report.per_class[c].size(); ++j) mean += report.per_class[c][j];
    mean /= static_cast<double>(report.per_class[c].size());
    std::printf("class %zu variance %.8g\n", c, mean);
  }
  std::printf("intra-class variance %.8g\n", report.scalar);
  return 0;
}

int cmd_dump_attn(const std::string& db_path, const std::string& checkpoint_path,
                  const std::string& features_path, std::size_t row, const std::string& out) {
  RetrievalDatabase db = RetrievalDatabase::load(db_path);
  Model model = load_checkpoint(checkpoint_path, db);
  Tensor features = load_embeddings(features_path);
  Dataset data;
  data.features = features;
  data.labels.assign(features.extent(0), 0);
  data.class_count = db.meta().class_count;
  Tensor attention = dump_attention(model, db, data, row);
  write_matrix_csv(out, attention);
  std::printf("wrote %zux%zu attention rows to %s\n", attention.extent(0), attention.extent(1),
              out.c_str());
  return 0;
}

int cmd_run(const std::string& config_path, long seed, const std::string& recipe,
            const std::string& out_dir) {
  Config cfg = load_config(config_path, seed);
  if (!recipe.empty()) cfg.set("recipe", recipe);
  ExperimentReport report = run_experiment(cfg, out_dir);
  std::printf("recipe %s: %zu runs\n", report.recipe.c_str(), report.runs.size());
  for (const RunRecord& r : report.runs) {
    if (r.shifted_accuracy) {
      std::printf("  %-20s accuracy %.4f shifted %.4f\n", r.name.c_str(), r.accuracy,
                  *r.shifted_accuracy);
    } else {
      std::printf("  %-20s accuracy %.4f\n", r.name.c_str(), r.accuracy);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-enhanced prompt learning engine"};
  app.require_subcommand(1);

  std::string config_path, out_path, db_path, checkpoint_path;
  std::string features_path, labels_path, test_features, test_labels;
  std::string recipe, mode = "frozen";
  long seed = -1;
  std::size_t row = 0, k = 5;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic few-shot dataset");
  gen->add_option("--config", config_path);
  gen->add_option("--out", out_path)->required();
  gen->add_option("--seed", seed);

  auto* build = app.add_subcommand("build-db", "encode embeddings and build the retrieval database");
  build->add_option("--config", config_path);
  build->add_option("--features", features_path)->required();
  build->add_option("--labels", labels_path)->required();
  build->add_option("--out", out_path)->required();

  auto* tr = app.add_subcommand("train", "train the model");
  tr->add_option("--config", config_path);
  tr->add_option("--seed", seed);
  tr->add_option("--db", db_path)->required();
  tr->add_option("--train-features", features_path)->required();
  tr->add_option("--train-labels", labels_path)->required();
  tr->add_option("--test-features", test_features)->required();
  tr->add_option("--test-labels", test_labels)->required();
  tr->add_option("--out", out_path)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--db", db_path)->required();
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--features", features_path)->required();
  ev->add_option("--labels", labels_path)->required();
  ev->add_option("--out", out_path);

  auto* qu = app.add_subcommand("query", "list nearest database entries for one sample");
  qu->add_option("--config", config_path);
  qu->add_option("--db", db_path)->required();
  qu->add_option("--features", features_path)->required();
  qu->add_option("--row", row)->required();
  qu->add_option("--k", k)->required();

  auto* va = app.add_subcommand("variance", "intra-class feature variance");
  va->add_option("--config", config_path);
  va->add_option("--features", features_path)->required();
  va->add_option("--labels", labels_path)->required();
  va->add_option("--mode", mode)->check(CLI::IsMember({"raw", "frozen"}));

  auto* da = app.add_subcommand("dump-attn", "dump prompt-to-patch attention rows as CSV");
  da->add_option("--db", db_path)->required();
  da->add_option("--checkpoint", checkpoint_path)->required();
  da->add_option("--features", features_path)->required();
  da->add_option("--row", row)->required();
  da->add_option("--out", out_path)->required();

  auto* ru = app.add_subcommand("run", "execute an experiment recipe");
  ru->add_option("--config", config_path);
  ru->add_option("--seed", seed);
  ru->add_option("--recipe", recipe)->check(CLI::IsMember({"ladder", "sweep", "shift", "fewshot"}));
  ru->add_option("--out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed);
    if (build->parsed()) return cmd_build_db(config_path, features_path, labels_path, out_path);
    if (tr->parsed())
      return cmd_train(config_path, seed, db_path, features_path, labels_path, test_features,
                       test_labels, out_path);
    if (ev->parsed()) return cmd_eval(db_path, checkpoint_path, features_path, labels_path, out_path);
    if (qu->parsed()) return cmd_query(config_path, db_path, features_path, row, k);
    if (va->parsed()) return cmd_variance(config_path, features_path, labels_path, mode);
    if (da->parsed()) return cmd_dump_attn(db_path, checkpoint_path, features_path, row, out_path);
    if (ru->parsed()) return cmd_run(config_path, seed, recipe, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
