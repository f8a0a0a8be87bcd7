#pragma once

// Vision Transformer backbone: patch embedding, a learnable [CLS] token,
// positional embeddings resampled to the input grid, pre-norm blocks.

#include <cstddef>
#include <vector>

#include "dino/param_set.hpp"
#include "dino/rng.hpp"
#include "dino/tensor.hpp"

namespace dino::vit {

struct ViTConfig {
  std::size_t patch_size = 4;
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t base_grid = 8;  // tokens per side at the reference resolution
  std::size_t channels = 3;
  double ln_eps = 1e-6;
  double init_std = 0.02;

  std::size_t hidden_dim() const { return mlp_ratio * dim; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t patch_features() const { return channels * patch_size * patch_size; }
  // Throws ConfigError.
  void validate() const;
  // Grid side for an image side; throws ConfigError unless divisible.
  std::size_t grid_for(std::size_t image_side) const;
};

template <typename T>
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t sample = 0;
  Tensor<T> weights;  // [tokens x tokens], row-stochastic
};

template <typename T>
struct BackboneOutput {
  Tensor<T> cls;                       // [batch x dim], after the final norm
  Tensor<T> tokens;                    // [batch*tokens x dim], after the final norm; row 0 of each sample is CLS
  std::vector<Tensor<T>> per_layer_cls;  // one [batch x dim] per block
  std::vector<AttentionRecord<T>> attention;
  std::size_t batch = 0;
  std::size_t tokens_per_sample = 0;
};

// Parameter names are prefixed with "backbone.".
template <typename T>
ParamSet<T> init_backbone(const ViTConfig& config, Rng& rng);

// Raster-order patch rows; each row is the patch flattened as (dy, dx, channel).
// images: [batch x C x H x W] -> [batch * (H/N) * (W/N) x C*N*N]
template <typename T>
Tensor<T> images_to_patches(const Tensor<T>& images, std::size_t patch_size);

// images: [C x H x W] or [batch x C x H x W] -> [batch * patches x dim]
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const ViTConfig& config, const ParamSet<T>& params);

// Catmull-Rom (a = -0.5) resampling weights from `from` samples to `to`
// samples with corner-aligned sample positions and clamped edges; [to x from].
std::vector<double> bicubic_weights(std::size_t from, std::size_t to);

// table: [(g*g + 1) x dim] with the CLS slot first -> [(t*t + 1) x dim]
template <typename T>
Tensor<T> interpolate_pos_embed(const Tensor<T>& table, std::size_t target_grid);

// Multi-head self-attention sub-layer (QKV projection, attention, output
// projection) of block `block` over x: [batch*tokens x dim].
template <typename T>
Tensor<T> attention(const Tensor<T>& x, const ViTConfig& config, const ParamSet<T>& params, std::size_t block,
                    std::size_t batch, std::size_t tokens, std::vector<AttentionRecord<T>>* records);

template <typename T>
BackboneOutput<T> vit_forward(const Tensor<T>& images, const ViTConfig& config, const ParamSet<T>& params,
                              bool collect_attention);

// Concatenates the last `layers` per-layer CLS outputs, last layer first:
// [batch x layers*dim]. Throws ParameterError for layers outside [1, depth].
template <typename T>
Tensor<T> cls_concat(const std::vector<Tensor<T>>& per_layer_cls, std::size_t layers);

}  // namespace dino::vit
