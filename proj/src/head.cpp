#include "dino/head.hpp"

#include <string>

#include "dino/errors.hpp"

namespace dino::head {
namespace {

std::string mlp_name(std::size_t layer, const char* leaf) {
  return "head.mlp." + std::to_string(layer) + "." + leaf;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

void HeadConfig::validate() const {
  if (mlp_layers < 1) throw ConfigError("head needs at least one MLP layer");
  if (hidden_dim == 0 || bottleneck_dim == 0 || out_dim == 0) throw ConfigError("head dimensions must be positive");
}

template <typename T>
ParamSet<T> init_head(const HeadConfig& c, std::size_t in_dim, Rng& rng) {
  c.validate();
  ParamSet<T> p;
  for (std::size_t l = 0; l < c.mlp_layers; ++l) {
    const std::size_t fan_in = l == 0 ? in_dim : c.hidden_dim;
    const std::size_t fan_out = l + 1 == c.mlp_layers ? c.bottleneck_dim : c.hidden_dim;
    p.add(mlp_name(l, "w"), normal_tensor<T>({fan_in, fan_out}, c.init_std, rng));
    p.add(mlp_name(l, "b"), Tensor<T>::zeros({fan_out}));
  }
  p.add("head.last.v", normal_tensor<T>({c.out_dim, c.bottleneck_dim}, c.init_std, rng));
  return p;
}

template <typename T>
Tensor<T> weight_norm_linear(const Tensor<T>& x, const Tensor<T>& directions, T eps) {
  if (!x.defined() || !directions.defined() || x.rank() != 2 || directions.rank() != 2 ||
      x.dim(1) != directions.dim(1)) {
    throw DimensionError("weight_norm_linear: " + (x.defined() ? shape_str(x.shape()) : std::string("?")) + " vs " +
                         (directions.defined() ? shape_str(directions.shape()) : std::string("?")));
  }
  return matmul(x, transpose(l2_normalize(directions, eps)));
}

template <typename T>
HeadOutput<T> head_forward(const Tensor<T>& x, const HeadConfig& c, const ParamSet<T>& params) {
  const Tensor<T>& w0 = params.at(mlp_name(0, "w"));
  if (!x.defined() || x.rank() != 2 || x.dim(1) != w0.dim(0)) {
    throw DimensionError("head_forward: input " + (x.defined() ? shape_str(x.shape()) : std::string("?")) +
                         " does not match head input dim " + std::to_string(w0.dim(0)));
  }
  Tensor<T> h = x;
  for (std::size_t l = 0; l < c.mlp_layers; ++l) {
    h = linear(h, params.at(mlp_name(l, "w")), params.at(mlp_name(l, "b")));
    if (l + 1 < c.mlp_layers) h = gelu(h);
  }
  HeadOutput<T> out;
  out.bottleneck = l2_normalize(h, static_cast<T>(c.norm_eps));
  out.logits = weight_norm_linear(out.bottleneck, params.at("head.last.v"), static_cast<T>(c.norm_eps));
  return out;
}

#define DINO_INSTANTIATE_HEAD(T)                                                        \
  template ParamSet<T> init_head<T>(const HeadConfig&, std::size_t, Rng&);              \
  template Tensor<T> weight_norm_linear<T>(const Tensor<T>&, const Tensor<T>&, T);      \
  template HeadOutput<T> head_forward<T>(const Tensor<T>&, const HeadConfig&, const ParamSet<T>&);

DINO_INSTANTIATE_HEAD(float)
DINO_INSTANTIATE_HEAD(double)

#undef DINO_INSTANTIATE_HEAD

}  // namespace dino::head
