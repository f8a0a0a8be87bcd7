#include "dino/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dino/bytes.hpp"
#include "dino/errors.hpp"
#include "dino/rng.hpp"

namespace dino::data {
namespace {

constexpr char kMagic[4] = {'D', 'S', 'V', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kTestStream = 1ULL << 40;
constexpr int kSuper = 4;  // supersampling per axis for coverage

using Rgb = std::array<double, 3>;

double luma(const Rgb& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Rgb blend(const Rgb& base, double jitter, Rng& rng) {
  Rgb out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = base[i] * (1.0 - jitter) + jitter * rng.uniform();
  return out;
}

// Shape membership in shape-local coordinates scaled so the nominal extent is ~1.
bool inside(const std::string& kind, double u, double v) {
  if (kind == "disk") return u * u + v * v <= 1.0;
  if (kind == "square") return std::abs(u) <= 0.82 && std::abs(v) <= 0.82;
  if (kind == "triangle") {
    u /= 1.25;
    v = v / 1.25 + 0.12;
    return v >= -0.5 && std::sqrt(3.0) * std::abs(u) + v <= 1.0;
  }
  if (kind == "cross") return (std::abs(u) <= 1.0 && std::abs(v) <= 0.33) || (std::abs(u) <= 0.33 && std::abs(v) <= 1.0);
  throw ConfigError("unknown shape kind '" + kind + "'");
}

struct Render {
  Image image;
  std::vector<std::uint8_t> mask;
};

Render render(const ToySpec& spec, const std::string& kind, Rng& rng) {
  const double side = static_cast<double>(spec.side);
  const double cx = side / 2.0 + spec.position_jitter * 0.2 * side * (2.0 * rng.uniform() - 1.0);
  const double cy = side / 2.0 + spec.position_jitter * 0.2 * side * (2.0 * rng.uniform() - 1.0);
  const double radius = 0.28 * side * (1.0 + spec.scale_jitter * 0.3 * (2.0 * rng.uniform() - 1.0));
  const double angle = spec.rotation_jitter * std::numbers::pi * (2.0 * rng.uniform() - 1.0);
  Rgb fg = blend({0.85, 0.75, 0.30}, spec.color_jitter, rng);
  const Rgb bg = blend({0.20, 0.25, 0.35}, spec.background_jitter, rng);
  const double fx = 1.0 + std::floor(spec.background_jitter * 2.999 * rng.uniform());
  const double fy = 1.0 + std::floor(spec.background_jitter * 2.999 * rng.uniform());
  const double phase = spec.background_jitter * 2.0 * std::numbers::pi * rng.uniform();
  // Keep the shape visible against its background.
  for (int attempt = 0; attempt < 16 && std::abs(luma(fg) - luma(bg)) < 0.25; ++attempt) {
    fg = blend({0.85, 0.75, 0.30}, spec.color_jitter, rng);
  }
  if (std::abs(luma(fg) - luma(bg)) < 0.25) {
    const double target = luma(bg) > 0.5 ? 0.05 : 0.95;
    for (auto& c : fg) c = 0.3 * c + 0.7 * target;
  }

  const std::size_t n = spec.side;
  Render r{Image::zeros(3, n, n), std::vector<std::uint8_t>(n * n, 0)};
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper - cx;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper - cy;
          const double u = (ca * px + sa * py) / radius;
          const double v = (-sa * px + ca * py) / radius;
          hits += inside(kind, u, v) ? 1 : 0;
        }
      }
      const double alpha = static_cast<double>(hits) / (kSuper * kSuper);
      r.mask[y * n + x] = 2 * hits >= kSuper * kSuper ? 1 : 0;
      const double tex = 0.08 * std::sin(2.0 * std::numbers::pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) / side + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        r.image.at(c, y, x) = static_cast<float>((bg[c] + tex) * (1.0 - alpha) + fg[c] * alpha);
      }
    }
  }
  if (spec.noise > 0.0) {
    for (auto& p : r.image.pixels) p += static_cast<float>(spec.noise * rng.normal());
  }
  return r;
}

}  // namespace

Image Dataset::image(std::size_t i) const {
  if (i >= size()) throw ParameterError("image index out of range");
  Image im = Image::zeros(channels, height, width);
  const std::size_t e = image_elements();
  for (std::size_t j = 0; j < e; ++j) im.pixels[j] = static_cast<float>(pixels[i * e + j]) / 255.0f;
  return im;
}

std::vector<Image> Dataset::images() const {
  std::vector<Image> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(image(i));
  return out;
}

std::vector<std::uint8_t> Dataset::patch_mask(std::size_t i, std::size_t patch) const {
  if (i >= masks.size()) throw ContractError("dataset carries no mask for image " + std::to_string(i));
  if (patch == 0 || height % patch != 0 || width % patch != 0) throw ConfigError("patch size does not divide image");
  const std::size_t gh = height / patch, gw = width / patch;
  std::vector<std::uint8_t> out(gh * gw, 0);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      std::size_t on = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) on += masks[i][(py * patch + dy) * width + px * patch + dx];
      out[py * gw + px] = 2 * on > patch * patch ? 1 : 0;
    }
  }
  return out;
}

void Dataset::validate() const {
  if (pixels.size() != size() * image_elements()) throw ContractError("dataset pixel count does not match labels");
  for (auto l : labels) {
    if (l >= class_names.size()) throw ContractError("label " + std::to_string(l) + " has no class name");
  }
}

bool Dataset::same_content(const Dataset& o) const {
  return channels == o.channels && height == o.height && width == o.width && pixels == o.pixels &&
         labels == o.labels && class_names == o.class_names;
}

const std::vector<std::string>& shape_kinds() {
  static const std::vector<std::string> kinds{"disk", "square", "triangle", "cross"};
  return kinds;
}

void ToySpec::validate() const {
  if (classes.empty() || classes.size() > 65535) throw ConfigError("toy spec needs 1..65535 classes");
  for (const auto& c : classes) {
    if (std::find(shape_kinds().begin(), shape_kinds().end(), c) == shape_kinds().end()) {
      throw ConfigError("unknown shape kind '" + c + "'");
    }
  }
  if (side < 4 || side > 4096) throw ConfigError("toy image side out of range");
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("noise level must lie in [0, 1)");
  for (double j : {position_jitter, scale_jitter, rotation_jitter, color_jitter, background_jitter}) {
    if (!(j >= 0.0 && j <= 1.0)) throw ConfigError("jitter levels must lie in [0, 1]");
  }
}

Dataset gen_toy(const ToySpec& spec, Split split) {
  spec.validate();
  const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
  const std::size_t classes = spec.classes.size();
  const std::size_t n = per_class * classes;
  Dataset d;
  d.channels = 3;
  d.height = d.width = spec.side;
  d.class_names = spec.classes;
  d.split = split == Split::train ? "train" : "test";
  d.pixels.resize(n * d.image_elements());
  d.labels.resize(n);
  d.masks.resize(n);
  const std::uint64_t stream0 = split == Split::train ? 0 : kTestStream;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    Rng rng(spec.seed, stream0 + i);
    Render r = render(spec, spec.classes[label], rng);
    std::transform(r.image.pixels.begin(), r.image.pixels.end(),
                   d.pixels.begin() + static_cast<std::ptrdiff_t>(i * d.image_elements()), quantize_u8);
    d.labels[i] = static_cast<std::uint16_t>(label);
    d.masks[i] = std::move(r.mask);
  }
  return d;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  d.validate();
  bytes::Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  for (std::size_t v : {d.size(), d.channels, d.height, d.width, d.class_names.size()}) {
    if (v > 0xFFFFFFFFu) throw ParameterError("dataset dimension exceeds u32");
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (const auto& name : d.class_names) w.str(name);
  w.raw(d.pixels.data(), d.pixels.size());
  for (auto l : d.labels) w.u16(l);
  return std::move(w.buffer());
}

Dataset decode_dataset(const std::vector<std::uint8_t>& buf) {
  bytes::Reader r(buf);
  const auto* magic = r.raw(4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("bad magic, expected DSV1", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported DSV1 version " + std::to_string(version), version_at);
  Dataset d;
  const std::size_t n = r.u32();
  d.channels = r.u32();
  d.height = r.u32();
  d.width = r.u32();
  const std::size_t classes = r.u32();
  if (classes > r.remaining()) throw FormatError("class count " + std::to_string(classes) + " exceeds file", r.offset());
  for (std::size_t i = 0; i < classes; ++i) d.class_names.push_back(r.str("class name"));
  // Payload must be exactly N images plus N labels.
  const unsigned __int128 expect =
      static_cast<unsigned __int128>(n) * d.channels * d.height * d.width + static_cast<unsigned __int128>(n) * 2;
  if (expect != r.remaining()) {
    throw FormatError("header says N=" + std::to_string(n) + " (" + std::to_string(static_cast<std::uint64_t>(expect)) +
                          " payload bytes) but " + std::to_string(r.remaining()) + " remain",
                      r.offset());
  }
  const std::size_t elems = n * d.image_elements();
  const auto* px = r.raw(elems, "pixels");
  d.pixels.assign(px, px + elems);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    d.labels[i] = r.u16();
    if (d.labels[i] >= classes) throw FormatError("label " + std::to_string(d.labels[i]) + " out of range", at);
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  bytes::write_file_atomic(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(bytes::read_file(path)); }

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

}  // namespace dino::data
