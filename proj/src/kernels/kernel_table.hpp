#pragma once

#include <cstddef>

#include "dino/kernels.hpp"

namespace dino::kernels::detail {

template <typename T>
struct KernelTable {
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
  T (*dot)(const T* x, const T* y, std::size_t n);
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  void (*axpby)(std::size_t n, T alpha, const T* x, T beta, T* y);
  void (*adamw)(const AdamWStep<T>& step, std::size_t n, T* param, const T* grad, T* m, T* v);
};

const KernelTable<float>& scalar_table_f32();
const KernelTable<double>& scalar_table_f64();

#if defined(DINO_HAVE_AVX2_TU)
const KernelTable<float>& avx2_table_f32();
const KernelTable<double>& avx2_table_f64();
#endif

}  // namespace dino::kernels::detail
