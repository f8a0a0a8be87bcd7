#pragma once

// Procedural toy dataset, the DSV1 container and epoch batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dino/image.hpp"

namespace dino::data {

enum class Split { train, test };

struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // N x C x H x W, value = round(p * 255)
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;
  std::string split;  // informational, not serialized
  // Per-image foreground masks (H x W, 0/1) when produced by the generator.
  std::vector<std::vector<std::uint8_t>> masks;

  std::size_t size() const { return labels.size(); }
  std::size_t image_elements() const { return channels * height * width; }
  Image image(std::size_t i) const;
  std::vector<Image> images() const;
  // Majority vote of the pixel mask over each patch x patch cell, raster order.
  std::vector<std::uint8_t> patch_mask(std::size_t i, std::size_t patch) const;
  void validate() const;

  // Serialized content only: dimensions, pixels, labels, class names.
  bool same_content(const Dataset& other) const;
};

struct ToySpec {
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::vector<std::string> classes{"disk", "square", "triangle", "cross"};
  std::size_t side = 32;
  double noise = 0.05;  // stddev of additive Gaussian pixel noise
  // Each jitter in [0, 1] scales its randomness; all zero -> one image per class.
  double position_jitter = 1.0;
  double scale_jitter = 1.0;
  double rotation_jitter = 1.0;
  double color_jitter = 1.0;
  double background_jitter = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

// Known shape kinds; class i of a ToySpec is drawn with shape classes[i].
const std::vector<std::string>& shape_kinds();

Dataset gen_toy(const ToySpec& spec, Split split);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);

// Indices of every sample exactly once, shuffled by a pure function of
// (seed, epoch); the last batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace dino::data
