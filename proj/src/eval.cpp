#include "dino/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dino/errors.hpp"

namespace dino::eval {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::span<double> row) {
  const double n = std::sqrt(dot(row, row));
  if (n > 0) {
    for (auto& v : row) v /= n;
  }
}

// Indices ordered by (similarity desc, index asc).
std::vector<std::size_t> rank_by_similarity(const FeatureBank& bank, std::span<const double> query, std::size_t keep) {
  std::vector<double> sim(bank.rows());
  for (std::size_t i = 0; i < bank.rows(); ++i) sim[i] = dot(bank.row(i), query);
  std::vector<std::size_t> idx(bank.rows());
  std::iota(idx.begin(), idx.end(), 0);
  const auto before = [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); };
  keep = std::min(keep, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), before);
  idx.resize(keep);
  return idx;
}

}  // namespace

FeatureBank FeatureBank::from_rows(std::size_t dim, std::vector<double> rows, std::vector<std::size_t> labels,
                                   std::size_t num_classes, std::string source) {
  if (rows.size() != dim * labels.size()) throw DimensionError("feature rows do not match label count");
  for (auto l : labels) {
    if (l >= num_classes) throw ParameterError("label out of range for feature bank");
  }
  FeatureBank b;
  b.dim = dim;
  b.features = std::move(rows);
  b.labels = std::move(labels);
  b.num_classes = num_classes;
  b.source = std::move(source);
  for (std::size_t i = 0; i < b.rows(); ++i) normalize({b.features.data() + i * dim, dim});
  return b;
}

template <typename T>
FeatureBank extract_features(const ModelConfig& config, const ParamSet<T>& params, const data::Dataset& dataset,
                             std::size_t layers, std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  const std::size_t dim = layers * config.vit.dim;
  std::vector<double> rows;
  rows.reserve(dataset.size() * dim);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    std::vector<Image> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(dataset.image(i));
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const auto out = vit::vit_forward(stack_images<T>(ptrs), config.vit, params, false);
    const auto rep = vit::cls_concat(out.per_layer_cls, layers);
    for (T v : rep.values()) rows.push_back(static_cast<double>(v));
  }
  std::vector<std::size_t> labels(dataset.labels.begin(), dataset.labels.end());
  return FeatureBank::from_rows(dim, std::move(rows), std::move(labels), dataset.class_names.size(),
                                "l=" + std::to_string(layers));
}

KnnResult knn_classify(const FeatureBank& bank, std::span<const double> query, std::size_t k, double tau) {
  if (bank.rows() == 0) throw ContractError("knn_classify: empty feature bank");
  if (query.size() != bank.dim) throw DimensionError("knn_classify: query dimension differs from bank");
  if (k == 0 || k > bank.rows()) throw ParameterError("knn_classify: need 1 <= k <= bank rows");
  if (!(tau > 0)) throw ParameterError("knn_classify: tau must be positive");
  KnnResult r;
  r.scores.assign(bank.num_classes, 0.0);
  for (std::size_t i : rank_by_similarity(bank, query, k)) {
    r.scores[bank.labels[i]] += std::exp(dot(bank.row(i), query) / tau);
  }
  r.label = static_cast<std::size_t>(std::max_element(r.scores.begin(), r.scores.end()) - r.scores.begin());
  return r;
}

double knn_eval(const FeatureBank& train, const FeatureBank& test, std::size_t k, double tau) {
  if (test.rows() == 0) throw ContractError("knn_eval: empty test bank");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    if (knn_classify(train, test.row(i), k, tau).label == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

double linear_probe(const FeatureBank& train, const FeatureBank& test, const LinearProbeConfig& config) {
  if (train.dim != test.dim) throw DimensionError("linear_probe: banks differ in dimension");
  if (train.rows() == 0 || test.rows() == 0) throw ContractError("linear_probe: empty bank");
  const std::size_t d = train.dim;
  const std::size_t c = std::max(train.num_classes, test.num_classes);
  std::vector<double> w(c * d, 0.0), b(c, 0.0), gw(c * d), gb(c), logits(c);

  const auto forward = [&](std::span<const double> x) {
    for (std::size_t j = 0; j < c; ++j) logits[j] = b[j] + dot({w.data() + j * d, d}, x);
  };

  std::uint64_t total = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) total += (train.rows() + config.batch_size - 1) / config.batch_size;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (const auto& batch : data::batches(train.rows(), config.batch_size, config.seed, e)) {
      const double lr =
          config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t i : batch) {
        const auto x = train.row(i);
        forward(x);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (auto& v : logits) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < c; ++j) {
          const double g = logits[j] / z - (j == train.labels[i] ? 1.0 : 0.0);
          gb[j] += g;
          for (std::size_t q = 0; q < d; ++q) gw[j * d + q] += g * x[q];
        }
      }
      const double f = lr / static_cast<double>(batch.size());
      for (std::size_t j = 0; j < c * d; ++j) w[j] -= f * gw[j];
      for (std::size_t j = 0; j < c; ++j) b[j] -= f * gb[j];
      ++step;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    forward(test.row(i));
    const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

double retrieval_map(const FeatureBank& bank, const FeatureBank& queries,
                     const std::vector<std::vector<std::size_t>>& relevance) {
  if (bank.dim != queries.dim) throw DimensionError("retrieval_map: banks differ in dimension");
  if (relevance.size() != queries.rows()) throw DimensionError("retrieval_map: one relevance set per query");
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    if (relevance[q].empty()) continue;
    std::vector<std::uint8_t> relevant(bank.rows(), 0);
    for (std::size_t id : relevance[q]) {
      if (id >= bank.rows()) throw ParameterError("retrieval_map: relevance id out of range");
      relevant[id] = 1;
    }
    const std::size_t n_rel = static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), 1));
    const auto order = rank_by_similarity(bank, queries.row(q), bank.rows());
    double ap = 0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size() && hits < n_rel; ++r) {
      if (relevant[order[r]]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    total += ap / static_cast<double>(n_rel);
    ++counted;
  }
  if (counted == 0) throw ContractError("retrieval_map: every relevance set is empty");
  return total / static_cast<double>(counted);
}

MaskResult attention_mask(std::span<const double> attn_row, std::size_t grid_h, std::size_t grid_w, double mass) {
  if (attn_row.size() != grid_h * grid_w) throw DimensionError("attention_mask: row length differs from grid");
  if (!(mass > 0.0 && mass <= 1.0)) throw ParameterError("attention_mask: mass must lie in (0, 1]");
  double total = 0;
  for (double v : attn_row) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("attention_mask: weights must be finite and >= 0");
    total += v;
  }
  if (!(total > 0)) throw ParameterError("attention_mask: all weights are zero");
  std::vector<std::size_t> idx(attn_row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return attn_row[a] > attn_row[b]; });
  MaskResult r;
  r.grid_h = grid_h;
  r.grid_w = grid_w;
  r.mask.assign(attn_row.size(), 0);
  // A relative slack absorbs summation rounding at exact boundaries (39/64 vs 0.6 style cases).
  const double target = mass * (1.0 - 1e-12);
  for (std::size_t i : idx) {
    r.mask[i] = 1;
    r.kept_mass += attn_row[i] / total;
    if (r.kept_mass >= target) break;
  }
  return r;
}

double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw DimensionError("jaccard: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
std::vector<double> cls_patch_attention(const Tensor<T>& weights) {
  if (weights.rank() != 2 || weights.dim(0) != weights.dim(1) || weights.dim(0) < 2) {
    throw DimensionError("cls_patch_attention: expected a square matrix with patch tokens");
  }
  const auto v = weights.values();
  return std::vector<double>(v.begin() + 1, v.begin() + static_cast<std::ptrdiff_t>(weights.dim(1)));
}

template <typename T>
SegmentationScore attention_jaccard(const ModelConfig& config, const ParamSet<T>& params,
                                    const data::Dataset& dataset, std::size_t count, double mass) {
  count = std::min(count, dataset.size());
  if (count == 0) throw ContractError("attention_jaccard: no images");
  const std::size_t grid_h = config.vit.grid_for(dataset.height);
  const std::size_t grid_w = config.vit.grid_for(dataset.width);
  const std::size_t last = config.vit.depth - 1;
  SegmentationScore s;
  s.per_head.assign(config.vit.heads, 0.0);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < count; ++i) {
    const auto truth = dataset.patch_mask(i, config.vit.patch_size);
    const auto out = vit::vit_forward(image_tensor<T>(dataset.image(i)), config.vit, params, true);
    for (const auto& rec : out.attention) {
      if (rec.layer != last) continue;
      const auto m = attention_mask(cls_patch_attention(rec.weights), grid_h, grid_w, mass);
      s.per_head[rec.head] += jaccard(m.mask, truth);
    }
  }
  for (auto& v : s.per_head) v /= static_cast<double>(count);
  s.best_head = static_cast<std::size_t>(std::max_element(s.per_head.begin(), s.per_head.end()) - s.per_head.begin());
  s.best_mean_jaccard = s.per_head[s.best_head];
  return s;
}

#define DINO_INSTANTIATE(T)                                                                                       \
  template FeatureBank extract_features<T>(const ModelConfig&, const ParamSet<T>&, const data::Dataset&,          \
                                           std::size_t, std::size_t);                                             \
  template std::vector<double> cls_patch_attention<T>(const Tensor<T>&);                                          \
  template SegmentationScore attention_jaccard<T>(const ModelConfig&, const ParamSet<T>&, const data::Dataset&,   \
                                                  std::size_t, double);

DINO_INSTANTIATE(float)
DINO_INSTANTIATE(double)

}  // namespace dino::eval
