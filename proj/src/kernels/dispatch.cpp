#include <algorithm>
#include <atomic>
#include <cassert>
#include <cstdlib>
#include <string>
#include <type_traits>
#include <vector>

#include "dino/errors.hpp"
#include "kernel_table.hpp"

namespace dino::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(DINO_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("DINO_ISA")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

template <typename T>
const detail::KernelTable<T>& table() {
  const Isa isa = isa_slot().load(std::memory_order_relaxed);
#if defined(DINO_HAVE_AVX2_TU)
  if (isa == Isa::avx2) {
    if constexpr (std::is_same_v<T, float>) return detail::avx2_table_f32();
    else return detail::avx2_table_f64();
  }
#endif
  (void)isa;
  if constexpr (std::is_same_v<T, float>) return detail::scalar_table_f32();
  else return detail::scalar_table_f64();
}

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, std::vector<T>& dst) {
  dst.resize(rows * cols);
  constexpr std::size_t kBlock = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) { return isa == Isa::scalar || (isa == Isa::avx2 && cpu_has_avx2()); }

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw ParameterError("ISA not supported on this host: " + std::string(isa_name(isa)));
  isa_slot().store(isa, std::memory_order_relaxed);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  table<T>().gemm_nn(m, n, k, a.data(), b.data(), c.data(), accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate) {
  assert(a.size() >= m * k && b.size() >= n * k && c.size() >= m * n);
  auto& bt = scratch<T>();
  transpose_into(n, k, b.data(), bt);
  table<T>().gemm_nn(m, n, k, a.data(), bt.data(), c.data(), accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate) {
  assert(a.size() >= k * m && b.size() >= k * n && c.size() >= m * n);
  auto& at = scratch<T>();
  transpose_into(k, m, a.data(), at);
  table<T>().gemm_nn(m, n, k, at.data(), b.data(), c.data(), accumulate);
}

template <typename T>
T dot(std::span<const T> x, std::span<const T> y) {
  assert(x.size() == y.size());
  return table<T>().dot(x.data(), y.data(), x.size());
}

template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  assert(x.size() == y.size());
  table<T>().axpy(x.size(), alpha, x.data(), y.data());
}

template <typename T>
void axpby(T alpha, std::span<const T> x, T beta, std::span<T> y) {
  assert(x.size() == y.size());
  table<T>().axpby(x.size(), alpha, x.data(), beta, y.data());
}

template <typename T>
void adamw(const AdamWStep<T>& step, std::span<T> param, std::span<const T> grad, std::span<T> m,
           std::span<T> v) {
  assert(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size());
  table<T>().adamw(step, param.size(), param.data(), grad.data(), m.data(), v.data());
}

#define DINO_INSTANTIATE_KERNELS(T)                                                                        \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                           std::span<T>, bool);                                                            \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                           std::span<T>, bool);                                                            \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>, \
                           std::span<T>, bool);                                                            \
  template T dot<T>(std::span<const T>, std::span<const T>);                                               \
  template void axpy<T>(T, std::span<const T>, std::span<T>);                                              \
  template void axpby<T>(T, std::span<const T>, T, std::span<T>);                                          \
  template void adamw<T>(const AdamWStep<T>&, std::span<T>, std::span<const T>, std::span<T>, std::span<T>);

DINO_INSTANTIATE_KERNELS(float)
DINO_INSTANTIATE_KERNELS(double)

#undef DINO_INSTANTIATE_KERNELS

}  // namespace dino::kernels
