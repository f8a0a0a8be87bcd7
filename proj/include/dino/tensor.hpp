#pragma once

// Dense row-major n-dimensional arrays with define-by-run reverse-mode
// differentiation. Instantiated for float (training) and double
// (verification); a computation never mixes the two.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dino {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the inputs' grad buffers.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // null for leaves
  std::uint64_t id = 0;

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<T>& grad_buffer();
};

std::uint64_t next_tensor_id();

}  // namespace detail

// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Shared handle to an array. Copies alias the same storage; use clone() for a
// deep copy. Values of recorded (non-leaf) tensors are immutable.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> values() const;
  // Leaf tensors only; throws ContractError for recorded outputs.
  std::span<T> mutable_values();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  // Leaf tensors only.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const;
  void zero_grad();

  // New leaf holding a copy of the values, detached from any tape.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  std::uint64_t id() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl<T>> impl);

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Ordered record of the operations reachable from a scalar loss. Records are
// in creation order, which is a topological order of the graph.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string_view op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
  };

  // Throws ContractError unless `loss` is a scalar.
  static Tape build(const Tensor<T>& loss);

  std::vector<Record> records() const;
  std::size_t size() const { return outputs_.size(); }
  // Seeds d(loss)/d(loss) = 1 and visits every record exactly once in reverse
  // order. Gradients of non-leaf tensors are released afterwards.
  void run();

 private:
  std::shared_ptr<detail::TensorImpl<T>> loss_;
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> outputs_;
};

template <typename T>
void backward(const Tensor<T>& loss);

// ---- operations ----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
// x[m x n] + tile(rows[r x n]) where r divides m; rows are repeated in order.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& rows);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// Concatenate 2-D tensors with equal column counts along the row axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
// Concatenate 2-D tensors with equal row counts along the column axis.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
// y[i, :] = x[index[i], :] on the leading axis of a 2-D tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);

// Softmax over the last axis of x / temperature, with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T temperature);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, T temperature);
// Per-slice normalization over the last axis followed by gain * x + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
// x * Phi(x) with the exact Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
// Each last-axis slice divided by max(||slice||_2, eps).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps);
// x[m x k] * w[k x n] + b[n]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Mean over rows of -sum_k target[r, k] * log softmax(logits[r, :] / temperature)_k.
// `target` is treated as a constant.
template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target, T temperature);

// Multi-head scaled dot-product self-attention over `batch` independent
// sequences of `tokens` rows each. qkv is [batch*tokens x 3*dim] laid out as
// [q | k | v]; head h uses columns [h*dh, (h+1)*dh) of each block. Returns
// [batch*tokens x dim]. When `weights_out` is non-null it receives the
// row-stochastic weights as [batch][head][tokens*tokens].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t tokens, std::size_t heads,
                               std::vector<T>* weights_out = nullptr);

// ---- verification --------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate, otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // central: two-point difference at `step`. ridders: Ridders' polynomial
  // extrapolation of central differences starting at `step` and shrinking by
  // 1.4 per stage, keeping the estimate with the smallest internal error.
  enum class Method { central, ridders } method = Method::central;
  std::size_t ridders_stages = 8;
  // Denominator floor as a fraction of the leaf's largest |analytic| entry.
  double scale_floor = 1e-3;
};

// Max over coordinates of |analytic - numeric| /
// max(|analytic|, |numeric|, scale_floor * max|analytic of that leaf|, 1e-8)
// for a scalar function of x.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step);

// Same measure over the coordinates of several leaves that `loss` closes over.
// The leaves are perturbed in place and restored.
double grad_check_leaves(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> leaves,
                         const GradCheckOptions& options);

}  // namespace dino
