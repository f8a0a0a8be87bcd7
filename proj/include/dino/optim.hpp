#pragma once

#include <cstdint>

#include "dino/param_set.hpp"

namespace dino {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. Decay applies to parameters of rank >= 2
// only; biases and normalization gains are never decayed. A parameter without
// an accumulated gradient is stepped with a zero gradient.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamSet<T>& params, AdamWConfig config);

  void step(ParamSet<T>& params, double lr, double weight_decay);

  const AdamWConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  ParamSet<T>& first_moment() { return m_; }
  ParamSet<T>& second_moment() { return v_; }
  const ParamSet<T>& first_moment() const { return m_; }
  const ParamSet<T>& second_moment() const { return v_; }

  static bool decays(const Tensor<T>& param) { return param.rank() >= 2; }

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  ParamSet<T> m_;
  ParamSet<T> v_;
};

}  // namespace dino
