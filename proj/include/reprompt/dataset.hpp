#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "reprompt/tensor.hpp"

namespace reprompt {

/// Raw embedding dataset: one d-dimensional feature row per sample.
struct Dataset {
  Tensor features;  // n x d
  std::vector<std::uint32_t> labels;
  std::uint32_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.extent(1) : 0; }
  Tensor feature_row(std::size_t i) const;
};

/// Synthetic few-shot generator: class means on the unit sphere, Gaussian
/// noise at scale sigma, samples re-normalized. A nonzero shift offsets the
/// test-set class means, for domain-shift runs against a source database.
struct DatasetSpec {
  std::uint32_t classes = 10;
  std::uint32_t shots = 16;
  std::uint32_t test_per_class = 200;
  std::uint32_t dim = 64;
  double sigma = 0.15;
  double shift = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
};

SyntheticData gen_synthetic(const DatasetSpec& spec);

void save_embeddings(const std::filesystem::path& path, const Tensor& features);
Tensor load_embeddings(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const std::vector<std::uint32_t>& labels,
                 std::uint32_t class_count);
std::pair<std::vector<std::uint32_t>, std::uint32_t> load_labels(const std::filesystem::path& path);

/// Loads and cross-validates a feature/label file pair: row counts must
/// agree and every class in [0, C) must appear.
Dataset ingest_embeddings(const std::filesystem::path& features_path,
                          const std::filesystem::path& labels_path);

struct VarianceReport {
  std::vector<Tensor> per_class;  // v_c, elementwise
  Tensor mean_over_classes;       // v-hat
  double scalar;                  // mean over dimensions of v-hat
};

/// Elementwise intra-class variance around each class mean, averaged over
/// classes; the scalar reduces over dimensions.
VarianceReport intra_class_variance(const Tensor& features,
                                    const std::vector<std::uint32_t>& labels,
                                    std::uint32_t class_count);

}  // namespace reprompt
