// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a CPUID check (see dispatch.cpp).

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "kernel_table.hpp"

namespace dino::kernels::detail {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t width = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(float x) { return _mm256_set1_ps(x); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg r) { _mm256_storeu_ps(p, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_ps(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_ps(a); }
  static float hsum(Reg r) {
    __m128 lo = _mm256_castps256_ps128(r);
    __m128 hi = _mm256_extractf128_ps(r, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t width = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(double x) { return _mm256_set1_pd(x); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg r) { _mm256_storeu_pd(p, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_pd(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_pd(a); }
  static double hsum(Reg r) {
    __m128d lo = _mm256_castpd256_pd128(r);
    __m128d hi = _mm256_extractf128_pd(r, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// 4-row x 2-register microkernel; C tile stays in registers across the k loop.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  if (!accumulate) std::fill(c, c + m * n, T(0));

  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
      auto r00 = V::load(c0 + j), r01 = V::load(c0 + j + W);
      auto r10 = V::load(c1 + j), r11 = V::load(c1 + j + W);
      auto r20 = V::load(c2 + j), r21 = V::load(c2 + j + W);
      auto r30 = V::load(c3 + j), r31 = V::load(c3 + j + W);
      for (std::size_t p = 0; p < k; ++p) {
        const T* bp = b + p * n + j;
        const auto b0 = V::load(bp);
        const auto b1 = V::load(bp + W);
        auto s = V::set1(a0[p]);
        r00 = V::fmadd(s, b0, r00);
        r01 = V::fmadd(s, b1, r01);
        s = V::set1(a1[p]);
        r10 = V::fmadd(s, b0, r10);
        r11 = V::fmadd(s, b1, r11);
        s = V::set1(a2[p]);
        r20 = V::fmadd(s, b0, r20);
        r21 = V::fmadd(s, b1, r21);
        s = V::set1(a3[p]);
        r30 = V::fmadd(s, b0, r30);
        r31 = V::fmadd(s, b1, r31);
      }
      V::store(c0 + j, r00), V::store(c0 + j + W, r01);
      V::store(c1 + j, r10), V::store(c1 + j + W, r11);
      V::store(c2 + j, r20), V::store(c2 + j + W, r21);
      V::store(c3 + j, r30), V::store(c3 + j + W, r31);
    }
    for (; j + W <= n; j += W) {
      auto r0 = V::load(c0 + j), r1 = V::load(c1 + j), r2 = V::load(c2 + j), r3 = V::load(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const auto bv = V::load(b + p * n + j);
        r0 = V::fmadd(V::set1(a0[p]), bv, r0);
        r1 = V::fmadd(V::set1(a1[p]), bv, r1);
        r2 = V::fmadd(V::set1(a2[p]), bv, r2);
        r3 = V::fmadd(V::set1(a3[p]), bv, r3);
      }
      V::store(c0 + j, r0), V::store(c1 + j, r1), V::store(c2 + j, r2), V::store(c3 + j, r3);
    }
    for (; j < n; ++j) {
      T s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const T bv = b[p * n + j];
        s0 = std::fma(a0[p], bv, s0);
        s1 = std::fma(a1[p], bv, s1);
        s2 = std::fma(a2[p], bv, s2);
        s3 = std::fma(a3[p], bv, s3);
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    std::size_t j = 0;
    for (; j + W <= n; j += W) {
      auto r = V::load(ci + j);
      for (std::size_t p = 0; p < k; ++p) r = V::fmadd(V::set1(ai[p]), V::load(b + p * n + j), r);
      V::store(ci + j, r);
    }
    for (; j < n; ++j) {
      T s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(ai[p], b[p * n + j], s);
      ci[j] = s;
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  auto acc0 = V::zero(), acc1 = V::zero(), acc2 = V::zero(), acc3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
    acc2 = V::fmadd(V::load(x + i + 2 * W), V::load(y + i + 2 * W), acc2);
    acc3 = V::fmadd(V::load(x + i + 3 * W), V::load(y + i + 3 * W), acc3);
  }
  for (; i + W <= n; i += W) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  T s = V::hsum(V::add(V::add(acc0, acc1), V::add(acc2, acc3)));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
void axpby(std::size_t n, T alpha, const T* x, T beta, T* y) {
  using V = Vec<T>;
  const auto va = V::set1(alpha);
  const auto vb = V::set1(beta);
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    V::store(y + i, V::fmadd(va, V::load(x + i), V::mul(vb, V::load(y + i))));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], beta * y[i]);
}

template <typename T>
void adamw(const AdamWStep<T>& s, std::size_t n, T* param, const T* grad, T* m, T* v) {
  using V = Vec<T>;
  const T decay = T(1) - s.lr * s.weight_decay;
  const auto b1 = V::set1(s.beta1), nb1 = V::set1(T(1) - s.beta1);
  const auto b2 = V::set1(s.beta2), nb2 = V::set1(T(1) - s.beta2);
  const auto bc1 = V::set1(s.bias_correction1), bc2 = V::set1(s.bias_correction2);
  const auto lr = V::set1(s.lr), eps = V::set1(s.eps), vdecay = V::set1(decay);
  std::size_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::fmadd(b1, V::load(m + i), V::mul(nb1, g));
    const auto vi = V::fmadd(b2, V::load(v + i), V::mul(V::mul(nb2, g), g));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto mhat = V::div(mi, bc1);
    const auto vhat = V::div(vi, bc2);
    const auto upd = V::div(V::mul(lr, mhat), V::add(V::sqrt(vhat), eps));
    V::store(param + i, V::sub(V::mul(V::load(param + i), vdecay), upd));
  }
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = std::fma(s.beta1, m[i], (T(1) - s.beta1) * g);
    v[i] = std::fma(s.beta2, v[i], (T(1) - s.beta2) * g * g);
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

const KernelTable<float>& avx2_table_f32() { return kF32; }
const KernelTable<double>& avx2_table_f64() { return kF64; }

}  // namespace dino::kernels::detail
