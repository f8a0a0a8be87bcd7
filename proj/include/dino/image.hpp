#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dino/tensor.hpp"

namespace dino {

// Planar (channel-major) float image with values nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  static Image zeros(std::size_t channels, std::size_t height, std::size_t width) {
    return {channels, height, width, std::vector<float>(channels * height * width, 0.0f)};
  }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// Sub-rectangle in source pixel units; may be fractional.
struct CropRect {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
};

// Resamples `rect` of `src` to out_h x out_w with the Catmull-Rom kernel
// (pixel-center aligned, clamped edges), then clamps values to [0, 1].
Image resize_bicubic(const Image& src, const CropRect& rect, std::size_t out_h, std::size_t out_w);

// Stacks equally sized images into [batch x C x H x W].
template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images);

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  const Image* one[] = {&image};
  return stack_images<T>(one);
}

std::uint8_t quantize_u8(float value);

// Binary P6 (RGB) or P5 (single channel) depending on channel count.
void write_pnm(const Image& image, const std::filesystem::path& path);
// 8-bit P5 grayscale, row-major.
void write_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray,
               const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray);

}  // namespace dino
