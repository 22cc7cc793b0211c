#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "reprompt/tensor.hpp"

namespace reprompt {

struct RetrievalHit {
  std::size_t entry_index;
  double similarity;  // inner product of unit vectors
};

struct DatabaseMeta {
  std::uint32_t entry_count = 0;
  std::uint32_t dim = 0;
  std::uint32_t class_count = 0;
  std::uint64_t encoder_fingerprint = 0;
  std::uint32_t shots = 0;
};

/// Store of frozen training representations: unit-norm keys queried by inner
/// product, a value embedding per entry, and the entry's class label. Entry
/// order is the insertion order and is stable, which fixes tie-breaking.
class RetrievalDatabase {
 public:
  static RetrievalDatabase build(const Tensor& features,  // n x d
                                 const std::vector<std::uint32_t>& labels,
                                 std::uint32_t class_count,
                                 std::uint64_t encoder_fingerprint,
                                 std::uint32_t shots);

  void save(const std::filesystem::path& path) const;
  static RetrievalDatabase load(const std::filesystem::path& path);

  /// Exact top-k by inner product, descending, ties broken by ascending
  /// entry index. exclude skips one entry (leave-one-out mode).
  std::vector<RetrievalHit> query_topk(std::span<const double> query, std::size_t k,
                                       std::optional<std::size_t> exclude = {}) const;

  const DatabaseMeta& meta() const { return meta_; }
  std::size_t size() const { return meta_.entry_count; }
  std::size_t dim() const { return meta_.dim; }
  const Tensor& keys() const { return keys_; }
  const Tensor& values() const { return values_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  std::span<const double> key_row(std::size_t i) const;
  std::span<const double> value_row(std::size_t i) const;
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

 private:
  Tensor keys_;    // |D| x d, rows unit-norm
  Tensor values_;  // |D| x d, rows unit-norm
  std::vector<std::uint32_t> labels_;
  DatabaseMeta meta_;
};

/// Similarity-softmax fusion of retrieved vectors: weights are the softmax
/// of inner products between the query and each retrieved vector.
Tensor fuse_retrieved(std::span<const double> query,
                      const std::vector<std::span<const double>>& retrieved);

/// Token matrix [z_q, z_f, z_1, ..., z_k] of shape d x (k+2); retrieved
/// vectors keep their rank order.
Tensor assemble_prompt_input(std::span<const double> z_q, const Tensor& z_f,
                             const std::vector<std::span<const double>>& retrieved);

}  // namespace reprompt
