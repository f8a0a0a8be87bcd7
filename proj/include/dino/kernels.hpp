#pragma once

// Dense inner-loop kernels with a portable scalar reference and an AVX2/FMA
// variant. The variant is chosen once at startup from CPUID (override with
// DINO_ISA=scalar) and can be switched explicitly for equivalence testing.
//
// All matrices are row-major and contiguous. Reductions run in a fixed order
// for a given ISA, so results are bitwise reproducible within one ISA.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace dino::kernels {

enum class Isa : std::uint8_t { scalar = 0, avx2 = 1 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
// Throws ParameterError when the ISA is not supported on this host.
void set_isa(Isa isa);

// RAII switch of the active ISA, restoring the previous one on scope exit.
class IsaScope {
 public:
  explicit IsaScope(Isa isa) : saved_(active_isa()) { set_isa(isa); }
  ~IsaScope() { set_isa(saved_); }
  IsaScope(const IsaScope&) = delete;
  IsaScope& operator=(const IsaScope&) = delete;

 private:
  Isa saved_;
};

// c[m x n] (+)= a[m x k] * b[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate);

// c[m x n] (+)= a[k x m]^T * b[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a, std::span<const T> b,
             std::span<T> c, bool accumulate);

template <typename T>
T dot(std::span<const T> x, std::span<const T> y);

// y += alpha * x
template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

// y = alpha * x + beta * y
template <typename T>
void axpby(T alpha, std::span<const T> x, T beta, std::span<T> y);

// Decoupled-weight-decay Adam step over one parameter buffer.
template <typename T>
struct AdamWStep {
  T lr;
  T beta1;
  T beta2;
  T eps;
  T weight_decay;
  T bias_correction1;  // 1 - beta1^t
  T bias_correction2;  // 1 - beta2^t
};

template <typename T>
void adamw(const AdamWStep<T>& step, std::span<T> param, std::span<const T> grad, std::span<T> m,
           std::span<T> v);

}  // namespace dino::kernels
