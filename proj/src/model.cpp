#include "dino/model.hpp"

namespace dino {

template <typename T>
ParamSet<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng backbone_rng(seed, 1);
  Rng head_rng(seed, 2);
  ParamSet<T> params = vit::init_backbone<T>(config.vit, backbone_rng);
  for (auto& [name, t] : head::init_head<T>(config.head, config.vit.dim, head_rng)) params.add(name, t);
  return params;
}

template <typename T>
ModelOutput<T> model_forward(const Tensor<T>& images, const ModelConfig& config, const ParamSet<T>& params,
                             bool collect_attention) {
  ModelOutput<T> out;
  out.backbone = vit::vit_forward(images, config.vit, params, collect_attention);
  out.head = head::head_forward(out.backbone.cls, config.head, params);
  return out;
}

template ParamSet<float> init_model<float>(const ModelConfig&, std::uint64_t);
template ParamSet<double> init_model<double>(const ModelConfig&, std::uint64_t);
template ModelOutput<float> model_forward<float>(const Tensor<float>&, const ModelConfig&, const ParamSet<float>&, bool);
template ModelOutput<double> model_forward<double>(const Tensor<double>&, const ModelConfig&, const ParamSet<double>&,
                                                   bool);

}  // namespace dino
