#pragma once

#include <cstdint>
#include <vector>

#include "reprompt/tensor.hpp"

namespace reprompt {

/// Deterministic random stream keyed by (seed, stream_id). Uses splitmix64
/// for the integer sequence and Box-Muller for normals, so identical keys
/// reproduce identical draws across runs.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64();
  double next_uniform();  // [0, 1)
  double next_normal();   // standard normal
  std::uint64_t next_below(std::uint64_t bound);  // [0, bound)

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev);
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// 64-bit FNV-1a, the project-wide hash for fingerprints and file digests.
std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h);

}  // namespace reprompt
