#pragma once

#include <cmath>
#include <vector>

#include "dino/rng.hpp"
#include "dino/tensor.hpp"

namespace testing {

inline dino::Tensor<double> random_tensor(dino::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                                          bool grad = false) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  dino::Rng rng(seed, 99);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  dino::Tensor<double> t(shape, std::move(v));
  t.set_requires_grad(grad);
  return t;
}

inline std::vector<double> to_vec(const dino::Tensor<double>& t) {
  const auto v = t.values();
  return {v.begin(), v.end()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace testing
