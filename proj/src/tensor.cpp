#include "dino/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dino/errors.hpp"

namespace dino {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_id = 0;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

namespace detail {

std::uint64_t next_tensor_id() { return ++t_next_id; }

template <typename T>
std::vector<T>& TensorImpl<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad;
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " elements");
  }
  impl_->shape = std::move(shape);
  impl_->value = std::move(values);
  impl_->id = detail::next_tensor_id();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<detail::TensorImpl<T>> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

namespace {
template <typename Impl>
Impl& require(const std::shared_ptr<Impl>& p) {
  if (!p) throw ContractError("operation on an undefined tensor");
  return *p;
}
}  // namespace

template <typename T>
const Shape& Tensor<T>::shape() const {
  return require(impl_).shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return require(impl_).value.size();
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  return require(impl_).value;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  auto& impl = require(impl_);
  if (impl.node) throw ContractError("values of a recorded tensor are immutable");
  return impl.value;
}

template <typename T>
T Tensor<T>::item() const {
  const auto& impl = require(impl_);
  if (impl.value.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(impl.shape));
  return impl.value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& impl = require(impl_);
  if (index.size() != impl.shape.size()) throw DimensionError("index rank mismatch for " + shape_str(impl.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl.shape[axis]) throw DimensionError("index out of range for " + shape_str(impl.shape));
    flat = flat * impl.shape[axis] + i;
    ++axis;
  }
  return impl.value[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return require(impl_).requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  auto& impl = require(impl_);
  if (impl.node) throw ContractError("requires_grad can only be set on leaf tensors");
  impl.requires_grad = flag;
  if (!flag) impl.grad.clear();
  return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return require(impl_).node == nullptr;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !require(impl_).grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return require(impl_).grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  require(impl_).grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  const auto& impl = require(impl_);
  return Tensor(impl.shape, impl.value);
}

template <typename T>
std::uint64_t Tensor<T>::id() const {
  return require(impl_).id;
}

// ---- tape ------------------------------------------------------------------

template <typename T>
Tape<T> Tape<T>::build(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Tape tape;
  tape.loss_ = loss.impl();
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> stack{loss.impl()};
  while (!stack.empty()) {
    auto cur = std::move(stack.back());
    stack.pop_back();
    if (!cur->node || !seen.insert(cur.get()).second) continue;
    for (const auto& in : cur->node->inputs) {
      if (in->node && !seen.count(in.get())) stack.push_back(in);
    }
    tape.outputs_.push_back(std::move(cur));
  }
  // Ids grow monotonically with creation, and an output is always created
  // after its inputs.
  std::sort(tape.outputs_.begin(), tape.outputs_.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  return tape;
}

template <typename T>
std::vector<typename Tape<T>::Record> Tape<T>::records() const {
  std::vector<Record> out;
  out.reserve(outputs_.size());
  for (const auto& o : outputs_) {
    Record r{o->node->op, {}, o->id};
    for (const auto& in : o->node->inputs) r.inputs.push_back(in->id);
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
void Tape<T>::run() {
  if (!loss_->requires_grad) return;
  loss_->grad_buffer()[0] += T(1);
  for (auto it = outputs_.rbegin(); it != outputs_.rend(); ++it) {
    auto& out = **it;
    if (out.grad.empty()) continue;
    out.node->backward(out);
  }
  for (auto& o : outputs_) {
    o->grad.clear();
    o->grad.shrink_to_fit();
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::build(loss).run();
}

template struct detail::TensorImpl<float>;
template struct detail::TensorImpl<double>;
template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace dino
