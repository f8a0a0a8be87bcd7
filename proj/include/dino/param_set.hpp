#pragma once

#include <map>
#include <string>
#include <vector>

#include "dino/errors.hpp"
#include "dino/tensor.hpp"

namespace dino {

// Named parameter tensors. Iteration is in name order, which fixes the order
// of every reduction over parameters (EMA, optimizer, serialization).
template <typename T>
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void add(const std::string& name, Tensor<T> tensor) {
    if (!entries_.emplace(name, std::move(tensor)).second) throw ContractError("duplicate parameter " + name);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("missing parameter " + name);
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("missing parameter " + name);
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  // Deep copy; every copy is a fresh leaf with the same requires_grad flag.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [name, t] : entries_) {
      Tensor<T> c = t.detach();
      c.set_requires_grad(t.requires_grad());
      out.add(name, std::move(c));
    }
    return out;
  }

  void set_requires_grad(bool flag) {
    for (auto& [_, t] : entries_) t.set_requires_grad(flag);
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  bool structurally_equal(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    }
    return true;
  }

  bool values_equal(const ParamSet& other) const {
    if (!structurally_equal(other)) return false;
    auto b = other.entries_.begin();
    for (auto a = entries_.begin(); a != entries_.end(); ++a, ++b) {
      const auto x = a->second.values();
      const auto y = b->second.values();
      if (!std::equal(x.begin(), x.end(), y.begin())) return false;
    }
    return true;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, t] : entries_) {
      const auto v = t.values();
      Tensor<U> c(t.shape(), std::vector<U>(v.begin(), v.end()));
      c.set_requires_grad(t.requires_grad());
      out.add(name, std::move(c));
    }
    return out;
  }

 private:
  Map entries_;
};

}  // namespace dino
