#include "reprompt/database.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "reprompt/io.hpp"
#include "reprompt/ops.hpp"

namespace reprompt {

RetrievalDatabase RetrievalDatabase::build(const Tensor& features,
                                           const std::vector<std::uint32_t>& labels,
                                           std::uint32_t class_count,
                                           std::uint64_t encoder_fingerprint,
                                           std::uint32_t shots) {
  if (features.rank() != 2) throw std::invalid_argument("build_database: features must be n x d");
  std::size_t n = features.extent(0), d = features.extent(1);
  if (n < 1) throw std::invalid_argument("build_database: empty feature set");
  if (d < 2) throw std::invalid_argument("build_database: dimension must be >= 2");
  if (labels.size() != n) throw std::invalid_argument("build_database: label count mismatch");
  for (std::uint32_t y : labels) {
    if (y >= class_count) throw std::invalid_argument("build_database: label out of range");
  }

  RetrievalDatabase db;
  db.keys_ = Tensor({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor row({d});
    std::copy(features.data() + i * d, features.data() + (i + 1) * d, row.data());
    Tensor unit = ops::l2_normalize(row);  // throws on a zero-norm row
    std::copy(unit.data(), unit.data() + d, db.keys_.data() + i * d);
  }
  db.values_ = db.keys_;
  db.labels_ = labels;
  db.meta_ = {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(d),
              class_count, encoder_fingerprint, shots};
  return db;
}

std::span<const double> RetrievalDatabase::key_row(std::size_t i) const {
  return {keys_.data() + i * meta_.dim, meta_.dim};
}

std::span<const double> RetrievalDatabase::value_row(std::size_t i) const {
  return {values_.data() + i * meta_.dim, meta_.dim};
}

std::vector<RetrievalHit> RetrievalDatabase::query_topk(std::span<const double> query,
                                                        std::size_t k,
                                                        std::optional<std::size_t> exclude) const {
  std::size_t n = size();
  if (query.size() != dim()) throw std::invalid_argument("query_topk: dimension mismatch");
  std::size_t available = n - (exclude && *exclude < n ? 1 : 0);
  if (k < 1 || k > available) throw std::invalid_argument("query_topk: k out of range");
  double qn = 0.0;
  for (double v : query) qn += v * v;
  if (std::abs(std::sqrt(qn) - 1.0) > 1e-4) {
    throw std::invalid_argument("query_topk: query must be unit-norm");
  }

  std::vector<RetrievalHit> hits;
  hits.reserve(available);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    hits.push_back({i, ops::dot(query.data(), keys_.data() + i * dim(), dim())});
  }
  auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry_index < b.entry_index;
  };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
  hits.resize(k);
  return hits;
}

void RetrievalDatabase::save(const std::filesystem::path& path) const {
  io::atomic_write(path, [this](std::ostream& os) {
    io::write_magic(os, "RPDB");
    io::write_u32(os, 1);
    io::write_u32(os, meta_.entry_count);
    io::write_u32(os, meta_.dim);
    io::write_u32(os, meta_.class_count);
    io::write_u64(os, meta_.encoder_fingerprint);
    io::write_u32(os, meta_.shots);
    io::write_f32_array(os, keys_.data(), keys_.size());
    io::write_f32_array(os, values_.data(), values_.size());
    for (std::uint32_t y : labels_) io::write_u32(os, y);
  });
}

RetrievalDatabase RetrievalDatabase::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open database: " + path.string());
  io::expect_magic(is, "RPDB", "database");
  io::expect_version(is, 1, "database");
  RetrievalDatabase db;
  db.meta_.entry_count = io::read_u32(is, "entry count");
  db.meta_.dim = io::read_u32(is, "dim");
  db.meta_.class_count = io::read_u32(is, "class count");
  db.meta_.encoder_fingerprint = io::read_u64(is, "encoder fingerprint");
  db.meta_.shots = io::read_u32(is, "shots");
  std::size_t n = db.meta_.entry_count, d = db.meta_.dim;
  if (n == 0 || d < 2) throw std::runtime_error("database: invalid header counts");
  db.keys_ = Tensor({n, d});
  db.values_ = Tensor({n, d});
  io::read_f32_array(is, db.keys_.data(), n * d, "keys");
  io::read_f32_array(is, db.values_.data(), n * d, "values");
  db.labels_.resize(n);
  for (std::size_t i = 0; i < n; ++i) db.labels_[i] = io::read_u32(is, "labels");
  return db;
}

Tensor fuse_retrieved(std::span<const double> query,
                      const std::vector<std::span<const double>>& retrieved) {
  if (retrieved.empty()) throw std::invalid_argument("fuse_retrieved: empty retrieved list");
  std::size_t d = query.size();
  Tensor sims({retrieved.size()});
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (retrieved[i].size() != d) throw std::invalid_argument("fuse_retrieved: dimension mismatch");
    sims[i] = ops::dot(query.data(), retrieved[i].data(), d);
  }
  Tensor alpha = ops::softmax(sims);
  Tensor fused({d});
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) fused[j] += alpha[i] * retrieved[i][j];
  }
  return fused;
}

Tensor assemble_prompt_input(std::span<const double> z_q, const Tensor& z_f,
                             const std::vector<std::span<const double>>& retrieved) {
  std::size_t d = z_q.size();
  if (z_f.size() != d) throw std::invalid_argument("assemble_prompt_input: dimension mismatch");
  std::size_t cols = retrieved.size() + 2;
  Tensor out({d, cols});
  for (std::size_t j = 0; j < d; ++j) {
    out[j * cols + 0] = z_q[j];
    out[j * cols + 1] = z_f[j];
  }
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (retrieved[i].size() != d) throw std::invalid_argument("assemble_prompt_input: dimension mismatch");
    for (std::size_t j = 0; j < d; ++j) out[j * cols + 2 + i] = retrieved[i][j];
  }
  return out;
}

}  // namespace reprompt
