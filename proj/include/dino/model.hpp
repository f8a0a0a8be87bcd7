#pragma once

// g = head o backbone, sharing one ParamSet.

#include <cstdint>

#include "dino/head.hpp"
#include "dino/vit.hpp"

namespace dino {

struct ModelConfig {
  vit::ViTConfig vit;
  head::HeadConfig head;

  void validate() const {
    vit.validate();
    head.validate();
  }
};

template <typename T>
struct ModelOutput {
  vit::BackboneOutput<T> backbone;
  head::HeadOutput<T> head;
};

// Backbone parameters first, then head parameters, each from its own stream
// of the seed so changing the head does not perturb the backbone init.
template <typename T>
ParamSet<T> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename T>
ModelOutput<T> model_forward(const Tensor<T>& images, const ModelConfig& config, const ParamSet<T>& params,
                             bool collect_attention = false);

}  // namespace dino
