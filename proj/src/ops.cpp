#include <algorithm>
#include <cmath>
#include <numbers>

#include "dino/errors.hpp"
#include "dino/kernels.hpp"
#include "dino/tensor.hpp"

namespace dino {
namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
template <typename T>
using Impl = detail::TensorImpl<T>;

// Wraps a freshly computed value; attaches a tape node only when recording is
// enabled and some input needs a gradient.
template <typename T, typename Backward>
Tensor<T> record(Shape shape, std::vector<T> value, std::string_view op, std::vector<ImplPtr<T>> inputs,
                 Backward&& bw) {
  Tensor<T> out(std::move(shape), std::move(value));
  const bool needs = grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const auto& in) {
                       return in->requires_grad;
                     });
  if (needs) {
    auto node = std::make_shared<detail::Node<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::forward<Backward>(bw);
    out.impl()->requires_grad = true;
    out.impl()->node = std::move(node);
  }
  return out;
}

template <typename T>
const Impl<T>& input(const Impl<T>& out, std::size_t i) {
  return *out.node->inputs[i];
}

template <typename T>
Impl<T>* grad_target(const Impl<T>& out, std::size_t i) {
  auto& in = *out.node->inputs[i];
  return in.requires_grad ? &in : nullptr;
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& t, const char* op) {
  require_defined(t, op);
  if (t.rank() == 0 || t.shape().back() == 0) throw DimensionError(std::string(op) + ": empty last axis");
  return t.shape().back();
}

template <typename T>
void require_positive(T v, const char* what) {
  if (!(v > T(0)) || !std::isfinite(v)) throw ParameterError(std::string(what) + " must be positive, got " + std::to_string(v));
}

// Row-wise softmax of x / temperature into out; returns nothing, out must be sized.
template <typename T>
void softmax_rows(std::span<const T> x, std::size_t k, T temperature, std::span<T> out) {
  const std::size_t rows = x.size() / k;
  const T inv_t = T(1) / temperature;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * k;
    T* yr = out.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      yr[j] = std::exp((xr[j] - mx) * inv_t);
      total += yr[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < k; ++j) yr[j] *= inv;
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> c(m * n);
  kernels::gemm_nn<T>(m, n, k, a.values(), b.values(), c, false);
  return record<T>({m, n}, std::move(c), "matmul", {a.impl(), b.impl()}, [m, n, k](const Impl<T>& out) {
    const auto& av = input(out, 0).value;
    const auto& bv = input(out, 1).value;
    if (auto* ga = grad_target(out, 0)) kernels::gemm_nt<T>(m, k, n, out.grad, bv, ga->grad_buffer(), true);
    if (auto* gb = grad_target(out, 1)) kernels::gemm_tn<T>(k, n, m, av, out.grad, gb->grad_buffer(), true);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> y(m * n);
  const auto x = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return record<T>({n, m}, std::move(y), "transpose", {a.impl()}, [m, n](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      auto& gb = g->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += out.grad[j * m + i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto x = a.values(), y = b.values();
  std::vector<T> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return record<T>(a.shape(), std::move(z), "add", {a.impl(), b.impl()}, [](const Impl<T>& out) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (auto* g = grad_target(out, s)) kernels::axpy<T>(T(1), out.grad, g->grad_buffer());
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.values(), y = b.values();
  std::vector<T> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  return record<T>(a.shape(), std::move(z), "sub", {a.impl(), b.impl()}, [](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) kernels::axpy<T>(T(1), out.grad, g->grad_buffer());
    if (auto* g = grad_target(out, 1)) kernels::axpy<T>(T(-1), out.grad, g->grad_buffer());
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.values(), y = b.values();
  std::vector<T> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  return record<T>(a.shape(), std::move(z), "mul", {a.impl(), b.impl()}, [](const Impl<T>& out) {
    const auto& xv = input(out, 0).value;
    const auto& yv = input(out, 1).value;
    if (auto* g = grad_target(out, 0)) {
      auto& gb = g->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i] * yv[i];
    }
    if (auto* g = grad_target(out, 1)) {
      auto& gb = g->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i] * xv[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a, "scale");
  const auto x = a.values();
  std::vector<T> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
  return record<T>(a.shape(), std::move(z), "scale", {a.impl()}, [factor](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) kernels::axpy<T>(factor, out.grad, g->grad_buffer());
  });
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& rows) {
  require_rank2(x, "add_rowwise");
  require_defined(rows, "add_rowwise");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t r = rows.rank() == 1 ? 1 : rows.dim(0);
  const std::size_t rn = rows.rank() == 1 ? rows.dim(0) : rows.dim(1);
  if (rows.rank() > 2 || rn != n || r == 0 || m % r != 0) {
    throw DimensionError("add_rowwise: cannot tile " + shape_str(rows.shape()) + " over " + shape_str(x.shape()));
  }
  const auto xv = x.values(), rv = rows.values();
  std::vector<T> z(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* ri = rv.data() + (i % r) * n;
    for (std::size_t j = 0; j < n; ++j) z[i * n + j] = xv[i * n + j] + ri[j];
  }
  return record<T>(x.shape(), std::move(z), "add_rowwise", {x.impl(), rows.impl()}, [m, n, r](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) kernels::axpy<T>(T(1), out.grad, g->grad_buffer());
    if (auto* g = grad_target(out, 1)) {
      auto& gb = g->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        T* gi = gb.data() + (i % r) * n;
        const T* oi = out.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gi[j] += oi[j];
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require_defined(a, "sum");
  T s = 0;
  for (T v : a.values()) s += v;
  return record<T>({}, {s}, "sum", {a.impl()}, [](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      for (auto& v : g->grad_buffer()) v += out.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) + " changes element count");
  }
  std::vector<T> v(a.values().begin(), a.values().end());
  return record<T>(std::move(shape), std::move(v), "reshape", {a.impl()}, [](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) kernels::axpy<T>(T(1), out.grad, g->grad_buffer());
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  std::size_t m = 0;
  std::vector<ImplPtr<T>> inputs;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    offsets.push_back(m * n);
    m += p.dim(0);
    inputs.push_back(p.impl());
  }
  std::vector<T> z;
  z.reserve(m * n);
  for (const auto& p : parts) z.insert(z.end(), p.values().begin(), p.values().end());
  return record<T>({m, n}, std::move(z), "concat_rows", std::move(inputs), [offsets](const Impl<T>& out) {
    for (std::size_t s = 0; s < offsets.size(); ++s) {
      if (auto* g = grad_target(out, s)) {
        auto& gb = g->grad_buffer();
        kernels::axpy<T>(T(1), std::span<const T>(out.grad).subspan(offsets[s], gb.size()), gb);
      }
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  require_rank2(parts.front(), "concat_cols");
  const std::size_t m = parts.front().dim(0);
  std::vector<std::size_t> offsets, widths;
  std::vector<ImplPtr<T>> inputs;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    offsets.push_back(n);
    widths.push_back(p.dim(1));
    n += p.dim(1);
    inputs.push_back(p.impl());
  }
  std::vector<T> z(m * n);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    const auto v = parts[s].values();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(v.data() + i * widths[s], widths[s], z.data() + i * n + offsets[s]);
  }
  return record<T>({m, n}, std::move(z), "concat_cols", std::move(inputs),
                   [m, n, offsets = std::move(offsets), widths = std::move(widths)](const Impl<T>& out) {
                     for (std::size_t s = 0; s < offsets.size(); ++s) {
                       if (auto* g = grad_target(out, s)) {
                         auto& gb = g->grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < widths[s]; ++j) gb[i * widths[s] + j] += out.grad[i * n + offsets[s] + j];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
  require_rank2(x, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<T> z(idx.size() * n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range " + shape_str(x.shape()));
    std::copy_n(xv.data() + idx[i] * n, n, z.data() + i * n);
  }
  const std::size_t rows = idx.size();
  return record<T>({rows, n}, std::move(z), "gather_rows", {x.impl()}, [idx = std::move(idx), n](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      auto& gb = g->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = gb.data() + idx[i] * n;
        const T* src = out.grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T temperature) {
  require_positive(temperature, "softmax temperature");
  const std::size_t k = last_dim(x, "softmax");
  std::vector<T> y(x.numel());
  softmax_rows<T>(x.values(), k, temperature, y);
  return record<T>(x.shape(), std::move(y), "softmax", {x.impl()}, [k, temperature](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      auto& gb = g->grad_buffer();
      const std::size_t rows = gb.size() / k;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = out.value.data() + r * k;
        const T* dy = out.grad.data() + r * k;
        T dotp = 0;
        for (std::size_t j = 0; j < k; ++j) dotp += dy[j] * yr[j];
        for (std::size_t j = 0; j < k; ++j) gb[r * k + j] += yr[j] * (dy[j] - dotp) / temperature;
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, T temperature) {
  require_positive(temperature, "log_softmax temperature");
  const std::size_t k = last_dim(x, "log_softmax");
  const auto xv = x.values();
  const std::size_t rows = x.numel() / k;
  std::vector<T> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp((xr[j] - mx) / temperature);
    const T lse = std::log(total);
    for (std::size_t j = 0; j < k; ++j) y[r * k + j] = (xr[j] - mx) / temperature - lse;
  }
  return record<T>(x.shape(), std::move(y), "log_softmax", {x.impl()}, [k, temperature](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      auto& gb = g->grad_buffer();
      const std::size_t rows = gb.size() / k;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* yr = out.value.data() + r * k;
        const T* dy = out.grad.data() + r * k;
        T total = 0;
        for (std::size_t j = 0; j < k; ++j) total += dy[j];
        for (std::size_t j = 0; j < k; ++j) gb[r * k + j] += (dy[j] - std::exp(yr[j]) * total) / temperature;
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_positive(eps, "layer_norm eps");
  const std::size_t d = last_dim(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<T> y(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * rstd[r];
      y[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return record<T>(x.shape(), std::move(y), "layer_norm", {x.impl(), gain.impl(), bias.impl()},
                   [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Impl<T>& out) {
                     const auto& gv = input(out, 1).value;
                     const auto& dy = out.grad;
                     if (auto* g = grad_target(out, 0)) {
                       auto& gb = g->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         T mean_dxh = 0, mean_dxh_xh = 0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const T dxh = dy[r * d + j] * gv[j];
                           mean_dxh += dxh;
                           mean_dxh_xh += dxh * xhat[r * d + j];
                         }
                         mean_dxh /= static_cast<T>(d);
                         mean_dxh_xh /= static_cast<T>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           const T dxh = dy[r * d + j] * gv[j];
                           gb[r * d + j] += rstd[r] * (dxh - mean_dxh - xhat[r * d + j] * mean_dxh_xh);
                         }
                       }
                     }
                     if (auto* g = grad_target(out, 1)) {
                       auto& gb = g->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j] * xhat[r * d + j];
                     }
                     if (auto* g = grad_target(out, 2)) {
                       auto& gb = g->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
                     }
                   });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu");
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return record<T>(x.shape(), std::move(y), "gelu", {x.impl()}, [inv_sqrt2](const Impl<T>& out) {
    if (auto* g = grad_target(out, 0)) {
      const auto& xv = input(out, 0).value;
      auto& gb = g->grad_buffer();
      const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
      for (std::size_t i = 0; i < gb.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
        gb[i] += out.grad[i] * (cdf + xv[i] * pdf);
      }
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  require_positive(eps, "l2_normalize eps");
  const std::size_t d = last_dim(x, "l2_normalize");
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  std::vector<T> y(x.numel());
  std::vector<T> denom(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    denom[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xr[j] / denom[r];
  }
  return record<T>(x.shape(), std::move(y), "l2_normalize", {x.impl()},
                   [d, rows, eps, denom = std::move(denom)](const Impl<T>& out) {
                     if (auto* g = grad_target(out, 0)) {
                       auto& gb = g->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const T* yr = out.value.data() + r * d;
                         const T* dy = out.grad.data() + r * d;
                         if (denom[r] > eps) {
                           T proj = 0;
                           for (std::size_t j = 0; j < d; ++j) proj += yr[j] * dy[j];
                           for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += (dy[j] - yr[j] * proj) / denom[r];
                         } else {
                           for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += dy[j] / eps;
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowwise(matmul(x, w), b);
}

template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target, T temperature) {
  require_positive(temperature, "cross-entropy temperature");
  require_same_shape(logits, target, "soft_cross_entropy");
  const std::size_t k = last_dim(logits, "soft_cross_entropy");
  const std::size_t rows = logits.numel() / k;
  const auto xv = logits.values();
  const auto tv = target.values();
  std::vector<T> probs(logits.numel());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * k;
    const T* tr = tv.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp((xr[j] - mx) / temperature);
      total += probs[r * k + j];
    }
    const T lse = std::log(total);
    T row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row -= tr[j] * ((xr[j] - mx) / temperature - lse);
      probs[r * k + j] /= total;
    }
    loss += row;
  }
  loss /= static_cast<T>(rows);
  auto target_values = std::make_shared<std::vector<T>>(tv.begin(), tv.end());
  return record<T>({}, {loss}, "soft_cross_entropy", {logits.impl()},
                   [k, rows, temperature, probs = std::move(probs), target_values](const Impl<T>& out) {
                     if (auto* g = grad_target(out, 0)) {
                       auto& gb = g->grad_buffer();
                       const auto& tv = *target_values;
                       const T coef = out.grad[0] / (static_cast<T>(rows) * temperature);
                       for (std::size_t r = 0; r < rows; ++r) {
                         T mass = 0;
                         for (std::size_t j = 0; j < k; ++j) mass += tv[r * k + j];
                         for (std::size_t j = 0; j < k; ++j) {
                           gb[r * k + j] += coef * (probs[r * k + j] * mass - tv[r * k + j]);
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                               std::vector<T>* weights_out) {
  require_rank2(qkv, "multi_head_attention");
  if (batch == 0 || tokens == 0 || heads == 0 || qkv.dim(0) != batch * tokens || qkv.dim(1) % (3 * heads) != 0) {
    throw DimensionError("multi_head_attention: " + shape_str(qkv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", tokens " + std::to_string(tokens) + ", heads " +
                         std::to_string(heads));
  }
  const std::size_t width = qkv.dim(1);
  const std::size_t dim = width / 3;
  const std::size_t dh = dim / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const auto in = qkv.values();

  std::vector<T> out(batch * tokens * dim, T(0));
  auto weights = std::make_shared<std::vector<T>>(batch * heads * tokens * tokens);
  std::vector<T> q(tokens * dh), kk(tokens * dh), v(tokens * dh), o(tokens * dh);

  auto extract = [&](std::span<const T> src, std::size_t b, std::size_t col, std::vector<T>& dst) {
    for (std::size_t t = 0; t < tokens; ++t) {
      std::copy_n(src.data() + (b * tokens + t) * width + col, dh, dst.data() + t * dh);
    }
  };

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      extract(in, b, h * dh, q);
      extract(in, b, dim + h * dh, kk);
      extract(in, b, 2 * dim + h * dh, v);
      std::span<T> attn(weights->data() + (b * heads + h) * tokens * tokens, tokens * tokens);
      kernels::gemm_nt<T>(tokens, tokens, dh, q, kk, attn, false);
      for (auto& s : attn) s *= scale_factor;
      softmax_rows<T>(attn, tokens, T(1), attn);
      kernels::gemm_nn<T>(tokens, dh, tokens, attn, v, o, false);
      for (std::size_t t = 0; t < tokens; ++t) {
        std::copy_n(o.data() + t * dh, dh, out.data() + (b * tokens + t) * dim + h * dh);
      }
    }
  }
  if (weights_out) *weights_out = *weights;

  return record<T>({batch * tokens, dim}, std::move(out), "multi_head_attention", {qkv.impl()},
                   [batch, tokens, heads, dim, dh, width, scale_factor, weights](const Impl<T>& outi) {
                     auto* g = grad_target(outi, 0);
                     if (!g) return;
                     const auto& in = input(outi, 0).value;
                     auto& gb = g->grad_buffer();
                     std::vector<T> q(tokens * dh), k(tokens * dh), v(tokens * dh), dout(tokens * dh);
                     std::vector<T> dattn(tokens * tokens), dq(tokens * dh), dk(tokens * dh), dv(tokens * dh);
                     for (std::size_t b = 0; b < batch; ++b) {
                       for (std::size_t h = 0; h < heads; ++h) {
                         for (std::size_t t = 0; t < tokens; ++t) {
                           const std::size_t row = (b * tokens + t);
                           std::copy_n(in.data() + row * width + h * dh, dh, q.data() + t * dh);
                           std::copy_n(in.data() + row * width + dim + h * dh, dh, k.data() + t * dh);
                           std::copy_n(in.data() + row * width + 2 * dim + h * dh, dh, v.data() + t * dh);
                           std::copy_n(outi.grad.data() + row * dim + h * dh, dh, dout.data() + t * dh);
                         }
                         std::span<const T> attn(weights->data() + (b * heads + h) * tokens * tokens, tokens * tokens);
                         kernels::gemm_nt<T>(tokens, tokens, dh, dout, v, dattn, false);
                         kernels::gemm_tn<T>(tokens, dh, tokens, attn, dout, dv, false);
                         for (std::size_t r = 0; r < tokens; ++r) {
                           T* dr = dattn.data() + r * tokens;
                           const T* ar = attn.data() + r * tokens;
                           T s = 0;
                           for (std::size_t c = 0; c < tokens; ++c) s += dr[c] * ar[c];
                           for (std::size_t c = 0; c < tokens; ++c) dr[c] = ar[c] * (dr[c] - s) * scale_factor;
                         }
                         kernels::gemm_nn<T>(tokens, dh, tokens, dattn, k, dq, false);
                         kernels::gemm_tn<T>(tokens, dh, tokens, dattn, q, dk, false);
                         for (std::size_t t = 0; t < tokens; ++t) {
                           T* dst = gb.data() + (b * tokens + t) * width;
                           for (std::size_t j = 0; j < dh; ++j) {
                             dst[h * dh + j] += dq[t * dh + j];
                             dst[dim + h * dh + j] += dk[t * dh + j];
                             dst[2 * dim + h * dh + j] += dv[t * dh + j];
                           }
                         }
                       }
                     }
                   });
}

#define DINO_INSTANTIATE_OPS(T)                                                                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                         \
  template Tensor<T> add_rowwise<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                              \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                             \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                   \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                         \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                        \
  template Tensor<T> softmax<T>(const Tensor<T>&, T);                                                       \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                             \
  template Tensor<T> l2_normalize<T>(const Tensor<T>&, T);                                                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> soft_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&, T);                          \
  template Tensor<T> multi_head_attention<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t,      \
                                             std::vector<T>*);

DINO_INSTANTIATE_OPS(float)
DINO_INSTANTIATE_OPS(double)

#undef DINO_INSTANTIATE_OPS

}  // namespace dino
