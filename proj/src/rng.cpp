#include "reprompt/rng.hpp"

#include <cmath>
#include <numbers>

namespace reprompt {

namespace {
std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s = stream_id ^ 0xD1B54A32D192ED03ULL;
  std::uint64_t b = splitmix64(s);
  state_ = a ^ (b + 0x9E3779B97F4A7C15ULL);
}

std::uint64_t RngStream::next_u64() { return splitmix64(state_); }

double RngStream::next_uniform() {
  // 53 random bits into [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = next_uniform();
  double u2 = next_uniform();
  while (u1 <= 0.0) u1 = next_uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  // Rejection sampling for an unbiased draw.
  std::uint64_t limit = ~0ULL - (~0ULL % bound + 1) % bound;
  std::uint64_t v = next_u64();
  while (v > limit) v = next_u64();
  return v % bound;
}

Tensor RngStream::normal_tensor(std::vector<std::size_t> shape, double stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * next_normal();
  return t;
}

std::vector<std::size_t> RngStream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(next_below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h) {
  return fnv1a64(&v, sizeof(v), h);
}

}  // namespace reprompt
