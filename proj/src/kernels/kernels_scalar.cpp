// Portable reference kernels. These define the semantics the SIMD variants
// are tested against.

#include <algorithm>
#include <cmath>

#include "kernel_table.hpp"

namespace dino::kernels::detail {
namespace {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

template <typename T>
void adamw(const AdamWStep<T>& s, std::size_t n, T* param, const T* grad, T* m, T* v) {
  const T decay = T(1) - s.lr * s.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = s.beta1 * m[i] + (T(1) - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (T(1) - s.beta2) * g * g;
    const T mhat = m[i] / s.bias_correction1;
    const T vhat = v[i] / s.bias_correction2;
    param[i] = param[i] * decay - s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return {&gemm_nn<T>, &dot<T>, &axpy<T>, &axpby<T>, &adamw<T>};
}

constexpr KernelTable<float> kF32 = make_table<float>();
constexpr KernelTable<double> kF64 = make_table<double>();

}  // namespace

const KernelTable<float>& scalar_table_f32() { return kF32; }
const KernelTable<double>& scalar_table_f64() { return kF64; }

}  // namespace dino::kernels::detail
