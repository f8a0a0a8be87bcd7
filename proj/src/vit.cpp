#include "dino/vit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dino/errors.hpp"

namespace dino::vit {
namespace {

std::string block_name(std::size_t block, const char* leaf) {
  return "backbone.blocks." + std::to_string(block) + "." + leaf;
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(v));
}

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

void ViTConfig::validate() const {
  if (patch_size == 0 || depth == 0 || dim == 0 || heads == 0 || mlp_ratio == 0 || base_grid == 0 || channels == 0) {
    throw ConfigError("ViT config extents must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("ViT dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (!(ln_eps > 0) || !(init_std > 0)) throw ConfigError("ViT ln_eps and init_std must be positive");
}

std::size_t ViTConfig::grid_for(std::size_t image_side) const {
  if (image_side == 0 || image_side % patch_size != 0) {
    throw ConfigError("image side " + std::to_string(image_side) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  return image_side / patch_size;
}

template <typename T>
ParamSet<T> init_backbone(const ViTConfig& c, Rng& rng) {
  c.validate();
  ParamSet<T> p;
  const double s = c.init_std;
  p.add("backbone.patch.w", normal_tensor<T>({c.patch_features(), c.dim}, s, rng));
  p.add("backbone.patch.b", Tensor<T>::zeros({c.dim}));
  p.add("backbone.cls", normal_tensor<T>({1, c.dim}, s, rng));
  p.add("backbone.pos", normal_tensor<T>({c.base_grid * c.base_grid + 1, c.dim}, s, rng));
  for (std::size_t b = 0; b < c.depth; ++b) {
    p.add(block_name(b, "norm1.g"), Tensor<T>::full({c.dim}, T(1)));
    p.add(block_name(b, "norm1.b"), Tensor<T>::zeros({c.dim}));
    p.add(block_name(b, "attn.qkv.w"), normal_tensor<T>({c.dim, 3 * c.dim}, s, rng));
    // No key bias: it shifts every score of a query row equally and softmax
    // cancels it, so it would be a parameter with identically zero gradient.
    p.add(block_name(b, "attn.q.b"), Tensor<T>::zeros({c.dim}));
    p.add(block_name(b, "attn.v.b"), Tensor<T>::zeros({c.dim}));
    p.add(block_name(b, "attn.proj.w"), normal_tensor<T>({c.dim, c.dim}, s, rng));
    p.add(block_name(b, "attn.proj.b"), Tensor<T>::zeros({c.dim}));
    p.add(block_name(b, "norm2.g"), Tensor<T>::full({c.dim}, T(1)));
    p.add(block_name(b, "norm2.b"), Tensor<T>::zeros({c.dim}));
    p.add(block_name(b, "mlp.fc1.w"), normal_tensor<T>({c.dim, c.hidden_dim()}, s, rng));
    p.add(block_name(b, "mlp.fc1.b"), Tensor<T>::zeros({c.hidden_dim()}));
    p.add(block_name(b, "mlp.fc2.w"), normal_tensor<T>({c.hidden_dim(), c.dim}, s, rng));
    p.add(block_name(b, "mlp.fc2.b"), Tensor<T>::zeros({c.dim}));
  }
  p.add("backbone.norm.g", Tensor<T>::full({c.dim}, T(1)));
  p.add("backbone.norm.b", Tensor<T>::zeros({c.dim}));
  return p;
}

template <typename T>
Tensor<T> images_to_patches(const Tensor<T>& images, std::size_t n) {
  if (!images.defined() || images.rank() != 4) {
    throw DimensionError("images_to_patches expects [batch x C x H x W], got " +
                         (images.defined() ? shape_str(images.shape()) : std::string("<undefined>")));
  }
  const std::size_t batch = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (n == 0 || h % n != 0 || w % n != 0) {
    throw ConfigError("image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch size " +
                      std::to_string(n));
  }
  const std::size_t gh = h / n, gw = w / n, feat = ch * n * n;
  const auto px = images.values();
  std::vector<T> out(batch * gh * gw * feat);
  std::size_t row = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t pxi = 0; pxi < gw; ++pxi, ++row) {
        T* dst = out.data() + row * feat;
        for (std::size_t dy = 0; dy < n; ++dy)
          for (std::size_t dx = 0; dx < n; ++dx)
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t y = py * n + dy, x = pxi * n + dx;
              dst[(dy * n + dx) * ch + c] = px[((b * ch + c) * h + y) * w + x];
            }
      }
    }
  }
  return Tensor<T>({batch * gh * gw, feat}, std::move(out));
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const ViTConfig& config, const ParamSet<T>& params) {
  Tensor<T> batch = images;
  if (images.defined() && images.rank() == 3) batch = reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)});
  if (batch.rank() != 4 || batch.dim(1) != config.channels) {
    throw DimensionError("patch_embed: expected " + std::to_string(config.channels) + " channels, got " +
                         shape_str(images.shape()));
  }
  const Tensor<T> patches = images_to_patches(batch, config.patch_size);
  return linear(patches, params.at("backbone.patch.w"), params.at("backbone.patch.b"));
}

std::vector<double> bicubic_weights(std::size_t from, std::size_t to) {
  if (from == 0 || to == 0) throw ParameterError("bicubic_weights: extents must be positive");
  std::vector<double> w(to * from, 0.0);
  for (std::size_t o = 0; o < to; ++o) {
    const double src = to == 1 ? 0.5 * static_cast<double>(from - 1)
                               : static_cast<double>(o) * static_cast<double>(from - 1) / static_cast<double>(to - 1);
    const double base = std::floor(src);
    const double frac = src - base;
    for (int tap = -1; tap <= 2; ++tap) {
      const double weight = catmull_rom(frac - tap);
      if (weight == 0.0) continue;
      long idx = static_cast<long>(base) + tap;
      idx = std::clamp(idx, 0L, static_cast<long>(from) - 1);
      w[o * from + static_cast<std::size_t>(idx)] += weight;
    }
  }
  return w;
}

template <typename T>
Tensor<T> interpolate_pos_embed(const Tensor<T>& table, std::size_t target_grid) {
  if (!table.defined() || table.rank() != 2) throw DimensionError("interpolate_pos_embed expects a matrix table");
  const std::size_t slots = table.dim(0) - 1;
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(slots))));
  if (table.dim(0) < 2 || g * g != slots) {
    throw ContractError("positional table with " + std::to_string(slots) + " grid slots is not square");
  }
  if (target_grid == 0) throw ParameterError("target grid must be positive");
  if (target_grid == g) return table;

  const std::vector<double> r = bicubic_weights(g, target_grid);
  const std::size_t t = target_grid;
  std::vector<T> m(t * t * g * g);
  for (std::size_t yo = 0; yo < t; ++yo)
    for (std::size_t xo = 0; xo < t; ++xo)
      for (std::size_t yi = 0; yi < g; ++yi)
        for (std::size_t xi = 0; xi < g; ++xi)
          m[(yo * t + xo) * g * g + yi * g + xi] = static_cast<T>(r[yo * g + yi] * r[xo * g + xi]);
  const Tensor<T> resample({t * t, g * g}, std::move(m));

  std::vector<std::size_t> grid_rows(g * g);
  for (std::size_t i = 0; i < grid_rows.size(); ++i) grid_rows[i] = i + 1;
  const std::size_t cls_row[] = {0};
  return concat_rows<T>({gather_rows(table, std::span<const std::size_t>(cls_row)),
                         matmul(resample, gather_rows(table, std::span<const std::size_t>(grid_rows)))});
}

template <typename T>
Tensor<T> attention(const Tensor<T>& x, const ViTConfig& config, const ParamSet<T>& params, std::size_t block,
                    std::size_t batch, std::size_t tokens, std::vector<AttentionRecord<T>>* records) {
  const std::size_t d = config.dim;
  const Tensor<T> bias = reshape(concat_cols<T>({reshape(params.at(block_name(block, "attn.q.b")), {1, d}),
                                                 Tensor<T>::zeros({1, d}),
                                                 reshape(params.at(block_name(block, "attn.v.b")), {1, d})}),
                                 {3 * d});
  const Tensor<T> qkv = linear(x, params.at(block_name(block, "attn.qkv.w")), bias);
  std::vector<T> weights;
  const Tensor<T> mixed = multi_head_attention(qkv, batch, tokens, config.heads, records ? &weights : nullptr);
  if (records) {
    const std::size_t tt = tokens * tokens;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < config.heads; ++h) {
        const auto first = weights.begin() + static_cast<std::ptrdiff_t>((b * config.heads + h) * tt);
        records->push_back({block, h, b, Tensor<T>({tokens, tokens}, std::vector<T>(first, first + tt))});
      }
    }
  }
  return linear(mixed, params.at(block_name(block, "attn.proj.w")), params.at(block_name(block, "attn.proj.b")));
}

template <typename T>
BackboneOutput<T> vit_forward(const Tensor<T>& images, const ViTConfig& config, const ParamSet<T>& params,
                              bool collect_attention) {
  config.validate();
  Tensor<T> batch_images = images;
  if (images.defined() && images.rank() == 3) {
    batch_images = Tensor<T>({1, images.dim(0), images.dim(1), images.dim(2)},
                             std::vector<T>(images.values().begin(), images.values().end()));
  }
  if (!batch_images.defined() || batch_images.rank() != 4) throw DimensionError("vit_forward expects image tensors");
  const std::size_t h = batch_images.dim(2), w = batch_images.dim(3);
  if (h != w) throw ContractError("vit_forward expects square images, got " + shape_str(batch_images.shape()));
  const std::size_t grid = config.grid_for(h);
  const std::size_t batch = batch_images.dim(0);
  const std::size_t patches = grid * grid;
  const std::size_t tokens = patches + 1;

  const Tensor<T> embedded = patch_embed(batch_images, config, params);
  std::vector<std::size_t> order(batch * tokens);
  std::vector<std::size_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    cls_rows[b] = b * tokens;
    order[b * tokens] = 0;
    for (std::size_t p = 0; p < patches; ++p) order[b * tokens + 1 + p] = 1 + b * patches + p;
  }
  Tensor<T> x = gather_rows(concat_rows<T>({params.at("backbone.cls"), embedded}), order);
  x = add_rowwise(x, interpolate_pos_embed(params.at("backbone.pos"), grid));

  BackboneOutput<T> out;
  out.batch = batch;
  out.tokens_per_sample = tokens;
  const T eps = static_cast<T>(config.ln_eps);
  for (std::size_t b = 0; b < config.depth; ++b) {
    const Tensor<T> h1 = layer_norm(x, params.at(block_name(b, "norm1.g")), params.at(block_name(b, "norm1.b")), eps);
    x = add(x, attention(h1, config, params, b, batch, tokens, collect_attention ? &out.attention : nullptr));
    const Tensor<T> h2 = layer_norm(x, params.at(block_name(b, "norm2.g")), params.at(block_name(b, "norm2.b")), eps);
    const Tensor<T> hidden = gelu(linear(h2, params.at(block_name(b, "mlp.fc1.w")), params.at(block_name(b, "mlp.fc1.b"))));
    x = add(x, linear(hidden, params.at(block_name(b, "mlp.fc2.w")), params.at(block_name(b, "mlp.fc2.b"))));
    out.per_layer_cls.push_back(gather_rows(x, cls_rows));
  }
  out.tokens = layer_norm(x, params.at("backbone.norm.g"), params.at("backbone.norm.b"), eps);
  out.cls = gather_rows(out.tokens, cls_rows);
  out.per_layer_cls.back() = out.cls;
  return out;
}

template <typename T>
Tensor<T> cls_concat(const std::vector<Tensor<T>>& per_layer_cls, std::size_t layers) {
  if (layers < 1 || layers > per_layer_cls.size()) {
    throw ParameterError("cls_concat: layers must be in [1, " + std::to_string(per_layer_cls.size()) + "], got " +
                         std::to_string(layers));
  }
  std::vector<Tensor<T>> parts;
  for (std::size_t i = 0; i < layers; ++i) parts.push_back(per_layer_cls[per_layer_cls.size() - 1 - i]);
  return layers == 1 ? parts.front() : concat_cols(parts);
}

#define DINO_INSTANTIATE_VIT(T)                                                                                   \
  template ParamSet<T> init_backbone<T>(const ViTConfig&, Rng&);                                                  \
  template Tensor<T> images_to_patches<T>(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> patch_embed<T>(const Tensor<T>&, const ViTConfig&, const ParamSet<T>&);                      \
  template Tensor<T> interpolate_pos_embed<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> attention<T>(const Tensor<T>&, const ViTConfig&, const ParamSet<T>&, std::size_t,            \
                                  std::size_t, std::size_t, std::vector<AttentionRecord<T>>*);                    \
  template BackboneOutput<T> vit_forward<T>(const Tensor<T>&, const ViTConfig&, const ParamSet<T>&, bool);        \
  template Tensor<T> cls_concat<T>(const std::vector<Tensor<T>>&, std::size_t);

DINO_INSTANTIATE_VIT(float)
DINO_INSTANTIATE_VIT(double)

#undef DINO_INSTANTIATE_VIT

}  // namespace dino::vit
