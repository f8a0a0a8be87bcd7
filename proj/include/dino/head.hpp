#pragma once

// Projection head: GELU MLP, l2-normalized bottleneck, then a weight-normalized
// bias-free linear layer onto K prototype scores. No batch statistics.

#include <cstddef>

#include "dino/param_set.hpp"
#include "dino/rng.hpp"
#include "dino/tensor.hpp"

namespace dino::head {

// Full-scale output dimensionality, kept for reference configurations.
inline constexpr std::size_t kFullScaleOutDim = 65536;

struct HeadConfig {
  std::size_t mlp_layers = 3;
  std::size_t hidden_dim = 256;
  std::size_t bottleneck_dim = 64;
  std::size_t out_dim = 1024;
  double init_std = 0.02;
  double norm_eps = 1e-12;

  // MLP layers plus the weight-normalized layer.
  std::size_t linear_layer_count() const { return mlp_layers + 1; }
  void validate() const;
};

template <typename T>
struct HeadOutput {
  Tensor<T> bottleneck;  // [rows x bottleneck_dim], unit rows
  Tensor<T> logits;      // [rows x out_dim], each in [-1, 1]
};

// Parameter names are prefixed with "head.".
template <typename T>
ParamSet<T> init_head(const HeadConfig& config, std::size_t in_dim, Rng& rng);

// out[r, i] = <directions[i] / ||directions[i]||, x[r]> with the gain fixed at 1.
template <typename T>
Tensor<T> weight_norm_linear(const Tensor<T>& x, const Tensor<T>& directions, T eps = T(1e-12));

// x: [rows x in_dim]
template <typename T>
HeadOutput<T> head_forward(const Tensor<T>& x, const HeadConfig& config, const ParamSet<T>& params);

}  // namespace dino::head
