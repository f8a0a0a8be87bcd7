#include "dino/optim.hpp"

#include <cmath>

#include "dino/kernels.hpp"

namespace dino {

template <typename T>
AdamW<T>::AdamW(const ParamSet<T>& params, AdamWConfig config) : config_(config) {
  for (const auto& [name, t] : params) {
    m_.add(name, Tensor<T>::zeros(t.shape()));
    v_.add(name, Tensor<T>::zeros(t.shape()));
  }
}

template <typename T>
void AdamW<T>::step(ParamSet<T>& params, double lr, double weight_decay) {
  if (!params.structurally_equal(m_)) throw ContractError("optimizer state does not match parameter set");
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  std::vector<T> zeros;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    kernels::AdamWStep<T> s{static_cast<T>(lr),
                            static_cast<T>(config_.beta1),
                            static_cast<T>(config_.beta2),
                            static_cast<T>(config_.eps),
                            static_cast<T>(decays(p) ? weight_decay : 0.0),
                            static_cast<T>(bc1),
                            static_cast<T>(bc2)};
    std::span<const T> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), T(0));
      g = zeros;
    }
    kernels::adamw<T>(s, p.mutable_values(), g, m_.at(name).mutable_values(), v_.at(name).mutable_values());
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dino
