#pragma once

// Multi-crop view generation with photometric augmentation.

#include <cstddef>
#include <utility>
#include <vector>

#include "dino/image.hpp"
#include "dino/rng.hpp"

namespace dino::views {

struct ViewConfig {
  std::size_t n_local = 6;
  std::size_t global_size = 32;
  std::size_t local_size = 16;
  // Global crops draw their area fraction from (scale_split, 1), locals from
  // (min_local_scale, scale_split).
  double scale_split = 0.3;
  double min_local_scale = 0.05;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;

  double flip_p = 0.5;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.2;
  double blur_p_global1 = 1.0;
  double blur_p_global2 = 0.1;
  double blur_p_local = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 0.5;
  double solarize_p_global2 = 0.2;
  double solarize_threshold = 0.5;

  // Throws ConfigError; sizes must be divisible by patch_size.
  void validate(std::size_t patch_size) const;
};

struct View {
  Image image;
  CropRect rect;
  bool flipped = false;
  bool global = false;
};

// Slots 0 and 1 are the global views, followed by n_local local views.
struct ViewSet {
  std::vector<View> views;

  std::size_t size() const { return views.size(); }
  std::size_t n_global() const { return 2; }
};

struct Crop {
  Image image;
  CropRect rect;
};

// Area fraction ~ U(scale_range), log aspect ratio ~ U(log ratio_range),
// position uniform over the fitting placements; after 10 misses falls back
// to the largest centered crop within the ratio range.
Crop random_resized_crop(const Image& image, std::pair<double, double> scale_range,
                         std::pair<double, double> ratio_range, std::size_t out_size, Rng& rng);

ViewSet make_views(const Image& image, const ViewConfig& config, Rng& rng);

Image hflip(const Image& image);
// Brightness, contrast, saturation, each scaled by a factor from
// U(1 - strength, 1 + strength), clamped to [0, 1] after every stage.
Image color_jitter(const Image& image, double brightness, double contrast, double saturation, Rng& rng);
// Separable Gaussian with radius ceil(2 sigma), normalized, clamped edges.
Image gaussian_blur(const Image& image, double sigma);
Image solarize(const Image& image, double threshold);

}  // namespace dino::views
