#pragma once

// Frozen-feature evaluation: weighted k-NN, linear probe, retrieval mAP and
// attention-mass masks.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dino/data.hpp"
#include "dino/model.hpp"

namespace dino::eval {

// Row-major [rows x dim] features, each row l2-normalized.
struct FeatureBank {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string source;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  // Normalizes each row; zero rows stay zero.
  static FeatureBank from_rows(std::size_t dim, std::vector<double> rows, std::vector<std::size_t> labels,
                               std::size_t num_classes, std::string source = {});
};

// Backbone forward at native resolution, cls_concat over the last `layers`
// blocks, then l2 normalization.
template <typename T>
FeatureBank extract_features(const ModelConfig& config, const ParamSet<T>& params, const data::Dataset& dataset,
                             std::size_t layers, std::size_t batch_size = 100);

struct KnnResult {
  std::size_t label = 0;
  std::vector<double> scores;  // per class, sum of exp(sim / tau) over neighbours
};

// Neighbours ordered by (similarity desc, index asc); ties between class
// scores go to the lowest class id.
KnnResult knn_classify(const FeatureBank& bank, std::span<const double> query, std::size_t k = 20, double tau = 0.07);
double knn_eval(const FeatureBank& train, const FeatureBank& test, std::size_t k = 20, double tau = 0.07);

struct LinearProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Softmax regression on frozen features: zero init, plain SGD, cosine lr
// decay per step, no weight decay. Returns test accuracy.
double linear_probe(const FeatureBank& train, const FeatureBank& test, const LinearProbeConfig& config);

// Rows of `bank` ranked by cosine similarity to each query (ties by index);
// AP averages precision at the rank of every relevant item. Queries with an
// empty relevance set are skipped; ContractError if all are empty.
double retrieval_map(const FeatureBank& bank, const FeatureBank& queries,
                     const std::vector<std::vector<std::size_t>>& relevance);

struct MaskResult {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::uint8_t> mask;  // raster order
  double kept_mass = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
};

// attn_row: CLS-query weights over the patch tokens only (renormalized here).
// Keeps the smallest prefix of the descending order (ties to lower index)
// whose mass reaches `mass`.
MaskResult attention_mask(std::span<const double> attn_row, std::size_t grid_h, std::size_t grid_w, double mass);

// |a & b| / |a | b|; 1 when both are empty.
double jaccard(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// CLS row of a [tokens x tokens] attention matrix with the CLS column dropped.
template <typename T>
std::vector<double> cls_patch_attention(const Tensor<T>& weights);

struct SegmentationScore {
  double best_mean_jaccard = 0;
  std::size_t best_head = 0;
  std::vector<double> per_head;  // mean Jaccard per last-layer head
};

// Last-layer CLS attention of every image, masked at `mass`, against the
// generator's patch-level ground truth; the best head is chosen on the mean.
template <typename T>
SegmentationScore attention_jaccard(const ModelConfig& config, const ParamSet<T>& params,
                                    const data::Dataset& dataset, std::size_t count, double mass = 0.6);

}  // namespace dino::eval
