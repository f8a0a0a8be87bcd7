#pragma once

#include <cstdint>

namespace dino {

// Counter-based generator: the i-th draw of stream (seed, stream_id) is
// SplitMix64's finalizer applied to key + i * 0x9E3779B97F4A7C15, where key
// mixes seed and stream id. Every value is a pure function of
// (seed, stream_id, counter), so streams are platform-stable and can be
// re-derived without serializing state.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via Box-Muller (both values consumed, one returned).
  double normal();
  // Normal(0, stddev) truncated to [-2 stddev, 2 stddev] by rejection.
  double truncated_normal(double stddev);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t counter) { counter_ = counter; }

  static std::uint64_t mix64(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace dino
