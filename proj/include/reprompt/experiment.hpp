#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reprompt/checkpoint.hpp"
#include "reprompt/config.hpp"
#include "reprompt/dataset.hpp"
#include "reprompt/training.hpp"

namespace reprompt {

/// Shared fixture for a family of runs: one synthetic dataset, one frozen
/// encoder pair, one database built from the frozen-encoded training
/// features, and a cache of per-sample retrieval contexts.
class Workbench {
 public:
  Workbench(const DatasetSpec& spec, const VisionEncoderConfig& vision_cfg,
            const TextEncoderConfig& text_cfg);

  TrainResult run(const TrainConfig& cfg);
  TrainResult run(const TrainConfig& cfg, Model& model);

  /// Builds the shared retrieval contexts for this configuration. Call once
  /// before launching concurrent runs; afterwards the cache is read-only.
  void warm(const TrainConfig& cfg);

  const RetrievalDatabase& db() const { return db_; }
  const SyntheticData& data() const { return data_; }
  const VisionEncoderConfig& vision_config() const { return vision_cfg_; }
  const TextEncoderConfig& text_config() const { return text_cfg_; }

  /// Evaluates a trained model on an alternative test set (domain shift).
  EvalResult evaluate_on(Model& model, const Dataset& test_set);

 private:
  using ContextPair = std::pair<std::vector<SampleContext>, std::vector<SampleContext>>;
  const ContextPair& contexts_for(const Model& model);

  DatasetSpec spec_;
  VisionEncoderConfig vision_cfg_;
  TextEncoderConfig text_cfg_;
  SyntheticData data_;
  RetrievalDatabase db_;
  std::map<std::string, std::unique_ptr<ContextPair>> context_cache_;
};

/// Builds a database from raw embeddings by running them through the frozen
/// encoder (or plain normalization in passthrough mode).
RetrievalDatabase build_database_from_raw(const VisionEncoderConfig& vision_cfg,
                                          const Dataset& data, std::uint32_t shots);

struct RunRecord {
  std::string name;
  double accuracy = 0.0;
  std::optional<double> shifted_accuracy;
  std::string metrics_file;
  std::uint64_t metrics_digest = 0;
  std::map<std::string, double> knobs;
};

struct ExperimentReport {
  std::string recipe;
  std::map<std::string, std::string> config_echo;
  std::vector<RunRecord> runs;
};

/// Executes a named recipe (`ladder`, `sweep`, `shift`, `fewshot`), writing
/// per-run metrics CSVs, a summary CSV, and report.json under out_dir.
ExperimentReport run_experiment(const Config& config, const std::filesystem::path& out_dir);

void write_report_json(const std::filesystem::path& path, const ExperimentReport& report);

/// Frozen-encoder neighbor lookup for one row of an embedding file.
std::vector<RetrievalHit> query_neighbors(const RetrievalDatabase& db,
                                          const VisionEncoderConfig& vision_cfg,
                                          const Tensor& features, std::size_t row,
                                          std::size_t k);

/// Head-averaged final-layer attention of prompt-token queries over patch
/// tokens, each row renormalized to a distribution. Shape N x S.
Tensor dump_attention(Model& model, const RetrievalDatabase& db, const Dataset& data,
                      std::size_t row);

void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);

/// n pairing for the few-shot protocol: shots {1,2,4,8,16} -> {1,2,4,4,8}.
std::size_t fewshot_neighbor_count(std::uint32_t shots);

}  // namespace reprompt
