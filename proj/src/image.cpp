#include "dino/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "dino/errors.hpp"

namespace dino {
namespace {

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

// Sampling taps for each output coordinate along one axis.
std::vector<Taps> axis_taps(double origin, double extent, std::size_t out, std::size_t src_len) {
  std::vector<Taps> taps(out);
  const double step = extent / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double s = origin + (static_cast<double>(o) + 0.5) * step - 0.5;
    const double base = std::floor(s);
    const double frac = s - base;
    for (int t = 0; t < 4; ++t) {
      const long idx = std::clamp(static_cast<long>(base) + t - 1, 0L, static_cast<long>(src_len) - 1);
      taps[o].index[static_cast<std::size_t>(t)] = static_cast<std::size_t>(idx);
      taps[o].weight[static_cast<std::size_t>(t)] = catmull_rom(frac - (t - 1));
    }
  }
  return taps;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

Image resize_bicubic(const Image& src, const CropRect& rect, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || src.height == 0 || src.width == 0) throw ParameterError("resize_bicubic: empty extent");
  const auto ty = axis_taps(rect.y, rect.h, out_h, src.height);
  const auto tx = axis_taps(rect.x, rect.w, out_w, src.width);
  Image out = Image::zeros(src.channels, out_h, out_w);
  std::vector<double> rows(4 * out_w);
  for (std::size_t c = 0; c < src.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      double* rbuf = rows.data();
      for (std::size_t t = 0; t < 4; ++t) {
        const std::size_t sy = ty[y].index[t];
        for (std::size_t x = 0; x < out_w; ++x) {
          double acc = 0.0;
          for (std::size_t u = 0; u < 4; ++u) acc += tx[x].weight[u] * src.at(c, sy, tx[x].index[u]);
          rbuf[t * out_w + x] = acc;
        }
      }
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 4; ++t) acc += ty[y].weight[t] * rbuf[t * out_w + x];
        out.at(c, y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("stack_images: no images");
  const Image& first = *images.front();
  std::vector<T> values;
  values.reserve(images.size() * first.pixels.size());
  for (const Image* im : images) {
    if (im->channels != first.channels || im->height != first.height || im->width != first.width) {
      throw DimensionError("stack_images: images differ in size");
    }
    values.insert(values.end(), im->pixels.begin(), im->pixels.end());
  }
  return Tensor<T>({images.size(), first.channels, first.height, first.width}, std::move(values));
}

template Tensor<float> stack_images<float>(std::span<const Image* const>);
template Tensor<double> stack_images<double>(std::span<const Image* const>);

std::uint8_t quantize_u8(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) throw DimensionError("encode_pgm: pixel count does not match extent");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), gray.begin(), gray.end());
  return bytes;
}

void write_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> gray,
               const std::filesystem::path& path) {
  write_bytes(path, encode_pgm(width, height, gray));
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  if (image.channels == 1) {
    std::vector<std::uint8_t> gray(image.pixels.size());
    std::transform(image.pixels.begin(), image.pixels.end(), gray.begin(), quantize_u8);
    write_pgm(image.width, image.height, gray, path);
    return;
  }
  if (image.channels != 3) throw DimensionError("write_pnm supports 1 or 3 channels");
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) bytes.push_back(quantize_u8(image.at(c, y, x)));
  write_bytes(path, bytes);
}

}  // namespace dino
