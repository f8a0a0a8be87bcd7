#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "dino/bytes.hpp"
#include "dino/data.hpp"
#include "dino/errors.hpp"

using namespace dino;
using namespace dino::data;

namespace {

ToySpec small_spec() {
  ToySpec s;
  s.train_per_class = 6;
  s.test_per_class = 3;
  s.side = 16;
  return s;
}

}  // namespace

TEST_CASE("toy generator: shapes, labels, determinism, split separation") {
  const auto spec = small_spec();
  const auto a = gen_toy(spec, Split::train);
  const auto b = gen_toy(spec, Split::train);
  const auto t = gen_toy(spec, Split::test);
  CHECK(a.size() == 24);
  CHECK(t.size() == 12);
  CHECK(a.same_content(b));
  CHECK_FALSE(a.same_content(t));
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 6);
  REQUIRE(a.masks.size() == a.size());
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("toy generator without jitter renders one image per class") {
  auto spec = small_spec();
  spec.noise = 0;
  spec.position_jitter = spec.scale_jitter = spec.rotation_jitter = spec.color_jitter = spec.background_jitter = 0;
  const auto d = gen_toy(spec, Split::train);
  for (std::size_t i = 4; i < d.size(); ++i) {
    const auto x = d.image(i).pixels;
    const auto y = d.image(i % 4).pixels;
    CHECK(x == y);
  }
  CHECK(d.image(0).pixels != d.image(1).pixels);
}

TEST_CASE("patch mask is the majority vote of the pixel mask") {
  const auto d = gen_toy(small_spec(), Split::train);
  const auto pm = d.patch_mask(0, 4);
  REQUIRE(pm.size() == 16);
  for (std::size_t py = 0; py < 4; ++py)
    for (std::size_t px = 0; px < 4; ++px) {
      int on = 0;
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) on += d.masks[0][(py * 4 + y) * 16 + px * 4 + x];
      CHECK(pm[py * 4 + px] == (2 * on > 16 ? 1 : 0));
    }
}

TEST_CASE("DSV1 round-trips bitwise") {
  const auto d = gen_toy(small_spec(), Split::test);
  const auto bytes = encode_dataset(d);
  const auto back = decode_dataset(bytes);
  CHECK(back.same_content(d));
  CHECK(encode_dataset(back) == bytes);
  const auto path = std::filesystem::temp_directory_path() / "dino_test_roundtrip.dsv";
  save_dataset(d, path);
  CHECK(load_dataset(path).same_content(d));
  std::filesystem::remove(path);
}

TEST_CASE("DSV1 rejects malformed input with an offset") {
  const auto bytes = encode_dataset(gen_toy(small_spec(), Split::test));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    (void)decode_dataset(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_dataset(extra), FormatError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/x.dsv"), IoError);
}

TEST_CASE("batches cover every index exactly once and depend only on (seed, epoch)") {
  for (std::size_t n : {1, 7, 64, 100}) {
    for (std::size_t bs : {1, 8, 64}) {
      const auto b = batches(n, bs, 3, 2);
      std::vector<std::size_t> all;
      for (const auto& batch : b) {
        CHECK(batch.size() <= bs);
        all.insert(all.end(), batch.begin(), batch.end());
      }
      CHECK(b.size() == (n + bs - 1) / bs);
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> iota(n);
      std::iota(iota.begin(), iota.end(), 0);
      CHECK(all == iota);
      CHECK(batches(n, bs, 3, 2) == b);
    }
  }
  CHECK(batches(100, 10, 3, 1) != batches(100, 10, 3, 2));
}

TEST_CASE("byte reader reports truncation") {
  bytes::Writer w;
  w.u32(7);
  w.str("abc");
  const auto buf = w.buffer();
  bytes::Reader r(buf);
  CHECK(r.u32() == 7);
  CHECK(r.str("name") == "abc");
  CHECK_THROWS_AS(r.u8(), FormatError);
}
