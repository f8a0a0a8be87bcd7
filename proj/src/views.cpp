#include "dino/views.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dino/errors.hpp"

namespace dino::views {
namespace {

constexpr float kLuma[3] = {0.299f, 0.587f, 0.114f};

float gray_at(const Image& im, std::size_t y, std::size_t x) {
  if (im.channels != 3) return im.at(0, y, x);
  return kLuma[0] * im.at(0, y, x) + kLuma[1] * im.at(1, y, x) + kLuma[2] * im.at(2, y, x);
}

void clamp01(Image& im) {
  for (auto& p : im.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

View augment(const Image& image, std::pair<double, double> scale, std::size_t size, double blur_p, double solarize_p,
             const ViewConfig& c, Rng& rng, bool global) {
  Crop crop = random_resized_crop(image, scale, {c.ratio_min, c.ratio_max}, size, rng);
  View v;
  v.rect = crop.rect;
  v.global = global;
  v.image = std::move(crop.image);
  if (rng.bernoulli(c.flip_p)) {
    v.image = hflip(v.image);
    v.flipped = true;
  }
  if (rng.bernoulli(c.jitter_p)) v.image = color_jitter(v.image, c.brightness, c.contrast, c.saturation, rng);
  if (rng.bernoulli(blur_p)) v.image = gaussian_blur(v.image, rng.uniform(c.blur_sigma_min, c.blur_sigma_max));
  if (rng.bernoulli(solarize_p)) v.image = solarize(v.image, c.solarize_threshold);
  return v;
}

}  // namespace

void ViewConfig::validate(std::size_t patch_size) const {
  if (!(min_local_scale < scale_split && scale_split < 1.0) || !(min_local_scale > 0.0)) {
    throw ConfigError("view scale split must satisfy 0 < min_local_scale < split < 1");
  }
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) throw ConfigError("view aspect ratio range is invalid");
  if (global_size == 0 || local_size == 0 || global_size % patch_size != 0 || local_size % patch_size != 0) {
    throw ConfigError("view sizes " + std::to_string(global_size) + "/" + std::to_string(local_size) +
                      " must be positive multiples of patch size " + std::to_string(patch_size));
  }
  for (double p : {flip_p, jitter_p, blur_p_global1, blur_p_global2, blur_p_local, solarize_p_global2}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("blur sigma range is invalid");
}

Crop random_resized_crop(const Image& image, std::pair<double, double> scale_range,
                         std::pair<double, double> ratio_range, std::size_t out_size, Rng& rng) {
  if (out_size == 0 || out_size > (1u << 16)) throw ConfigError("crop output size out of range");
  if (!(scale_range.first > 0.0 && scale_range.first <= scale_range.second && scale_range.second <= 1.0) ||
      !(ratio_range.first > 0.0 && ratio_range.first <= ratio_range.second)) {
    throw ConfigError("random_resized_crop: invalid scale or ratio range");
  }
  const double w_img = static_cast<double>(image.width);
  const double h_img = static_cast<double>(image.height);
  const double area = w_img * h_img;
  const double log_lo = std::log(ratio_range.first), log_hi = std::log(ratio_range.second);
  CropRect rect{};
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(scale_range.first, scale_range.second);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const double w = std::sqrt(target * ratio);
    const double h = std::sqrt(target / ratio);
    if (w <= w_img && h <= h_img) {
      rect = {rng.uniform() * (w_img - w), rng.uniform() * (h_img - h), w, h};
      found = true;
    }
  }
  if (!found) {
    const double in_ratio = w_img / h_img;
    double w = w_img, h = h_img;
    if (in_ratio < ratio_range.first) {
      h = w / ratio_range.first;
    } else if (in_ratio > ratio_range.second) {
      w = h * ratio_range.second;
    }
    rect = {(w_img - w) / 2.0, (h_img - h) / 2.0, w, h};
  }
  return {resize_bicubic(image, rect, out_size, out_size), rect};
}

ViewSet make_views(const Image& image, const ViewConfig& c, Rng& rng) {
  ViewSet set;
  set.views.reserve(2 + c.n_local);
  set.views.push_back(augment(image, {c.scale_split, 1.0}, c.global_size, c.blur_p_global1, 0.0, c, rng, true));
  set.views.push_back(
      augment(image, {c.scale_split, 1.0}, c.global_size, c.blur_p_global2, c.solarize_p_global2, c, rng, true));
  for (std::size_t i = 0; i < c.n_local; ++i) {
    set.views.push_back(augment(image, {c.min_local_scale, c.scale_split}, c.local_size, c.blur_p_local, 0.0, c, rng,
                                false));
  }
  return set;
}

Image hflip(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image color_jitter(const Image& image, double brightness, double contrast, double saturation, Rng& rng) {
  const auto factor = [&](double strength) {
    return static_cast<float>(rng.uniform(std::max(0.0, 1.0 - strength), 1.0 + strength));
  };
  Image out = image;
  const float fb = factor(brightness);
  for (auto& p : out.pixels) p *= fb;
  clamp01(out);

  const float fc = factor(contrast);
  double mean_gray = 0.0;
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) mean_gray += gray_at(out, y, x);
  const float m = static_cast<float>(mean_gray / static_cast<double>(out.height * out.width));
  for (auto& p : out.pixels) p = (p - m) * fc + m;
  clamp01(out);

  const float fs = factor(saturation);
  if (out.channels == 3) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const float g = gray_at(out, y, x);
        for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = (out.at(c, y, x) - g) * fs + g;
      }
    }
  }
  clamp01(out);
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("blur sigma must be positive");
  const long radius = static_cast<long>(std::ceil(2.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;

  const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
  Image tmp = image, out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long sx = std::clamp(x + i, 0L, w - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(sx));
        }
        tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(acc);
      }
    }
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) {
          const long sy = std::clamp(y + i, 0L, h - 1);
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(x));
        }
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(acc);
      }
    }
  }
  clamp01(out);
  return out;
}

Image solarize(const Image& image, double threshold) {
  Image out = image;
  const float t = static_cast<float>(threshold);
  for (auto& p : out.pixels) {
    if (p >= t) p = 1.0f - p;
  }
  return out;
}

}  // namespace dino::views
