#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dino/errors.hpp"
#include "test_support.hpp"

using namespace dino;
using testing::random_tensor;
using testing::to_vec;

namespace {

// Textbook triple loop.
std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.at({i, p}) * b.at({p, j});
  return c;
}

}  // namespace

TEST_CASE("matmul: identity and hand example") {
  const Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  const Tensor<double> m({2, 2}, {3, -1, 4, 2.5});
  CHECK(to_vec(matmul(eye, m)) == to_vec(m));
  const Tensor<double> a({2, 2}, {1, 2, 3, 4});
  const Tensor<double> ones({2, 1}, {1, 1});
  CHECK(to_vec(matmul(a, ones)) == std::vector<double>{3, 7});
}

TEST_CASE("matmul: agrees with the naive product on odd shapes") {
  for (std::size_t s = 0; s < 6; ++s) {
    const std::size_t m = 1 + s * 3, k = 2 + s * 5, n = 1 + s * 7;
    const auto a = random_tensor({m, k}, s);
    const auto b = random_tensor({k, n}, s + 100);
    CHECK(testing::max_abs_diff(to_vec(matmul(a, b)), naive_matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  const auto a = random_tensor({2, 3}, 1);
  const auto b = random_tensor({2, 3}, 2);
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches finite differences") {
  const auto a = random_tensor({3, 4}, 3, -1, 1, true);
  const auto b = random_tensor({4, 2}, 4, -1, 1, true);
  GradCheckOptions opt;
  CHECK(grad_check_leaves([&] { return sum(matmul(a, b)); }, {a, b}, opt) < 1e-6);
}

TEST_CASE("softmax examples") {
  const Tensor<double> zeros({3}, {0, 0, 0});
  for (double p : to_vec(softmax(zeros, 0.1))) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Tensor<double> x({2}, {std::log(2.0), 0});
  const auto p = to_vec(softmax(x, 1.0));
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  const Tensor<double> y({2}, {10, 0});
  CHECK(to_vec(softmax(y, 1e-3))[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(softmax(y, 0.0), ParameterError);
  CHECK_THROWS_AS(softmax(y, -1.0), ParameterError);
}

TEST_CASE("softmax: rows sum to one, shift invariant, huge logits stay finite") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = random_tensor({4, 7}, s, -50, 50);
    const auto p = to_vec(softmax(x, 0.3));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) total += p[r * 7 + c];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto shifted = to_vec(softmax(add(x, Tensor<double>::full({4, 7}, 123.0)), 0.3));
    CHECK(testing::max_abs_diff(p, shifted) < 1e-12);
  }
  const Tensor<double> big({2}, {1e300, -1e300});
  for (double v : to_vec(softmax(big, 1.0))) CHECK(std::isfinite(v));
}

TEST_CASE("log_softmax equals log of softmax") {
  const auto x = random_tensor({3, 5}, 8, -4, 4);
  const auto a = to_vec(log_softmax(x, 0.7));
  const auto b = to_vec(softmax(x, 0.7));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(std::log(b[i])).epsilon(1e-12));
}

TEST_CASE("layer_norm: zero mean, unit variance with identity affine") {
  const auto x = random_tensor({5, 16}, 9, -3, 3);
  const auto y = to_vec(layer_norm(x, Tensor<double>::full({16}, 1.0), Tensor<double>::zeros({16}), 1e-12));
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mu += y[r * 16 + c];
    mu /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y[r * 16 + c] - mu) * (y[r * 16 + c] - mu);
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var / 16 == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gelu uses the exact Gaussian CDF") {
  const Tensor<double> x({5}, {-3, -1, 0, 0.5, 2});
  const auto y = to_vec(gelu(x));
  const auto xs = to_vec(x);
  for (std::size_t i = 0; i < 5; ++i) {
    const double ref = 0.5 * xs[i] * (1 + std::erf(xs[i] / std::numbers::sqrt2));
    CHECK(y[i] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("l2_normalize gives unit rows and leaves zero rows at zero") {
  const Tensor<double> x({2, 3}, {3, 0, 4, 0, 0, 0});
  const auto y = to_vec(l2_normalize(x, 1e-12));
  CHECK(y[0] == doctest::Approx(0.6));
  CHECK(y[2] == doctest::Approx(0.8));
  CHECK(y[3] == 0.0);
}

TEST_CASE("per-op gradients match central differences") {
  GradCheckOptions opt;
  const auto x = random_tensor({3, 6}, 21, -2, 2, true);
  const auto w = random_tensor({6, 4}, 22, -1, 1, true);
  const auto bias = random_tensor({4}, 23, -1, 1, true);
  const auto g = random_tensor({6}, 24, 0.5, 1.5, true);
  const auto target = softmax(random_tensor({3, 6}, 25), 1.0);
  const auto weights = random_tensor({3, 6}, 26);
  const auto wsum = [&](const Tensor<double>& t) { return sum(mul(t, weights)); };

  CHECK(grad_check_leaves([&] { return wsum(softmax(x, 0.5)); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(log_softmax(x, 0.5)); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(gelu(x)); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(l2_normalize(x, 1e-12)); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(layer_norm(x, g, Tensor<double>::zeros({6}), 1e-6)); }, {x, g}, opt) <
        1e-5);
  CHECK(grad_check_leaves([&] { return sum(mul(linear(x, w, bias), linear(x, w, bias))); }, {x, w, bias}, opt) <
        1e-5);
  CHECK(grad_check_leaves([&] { return soft_cross_entropy(x, target, 0.1); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(transpose(transpose(x))); }, {x}, opt) < 1e-5);
  const std::size_t idx[] = {2, 0, 2};
  CHECK(grad_check_leaves([&] { return wsum(gather_rows(x, idx)); }, {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return sum(mul(concat_cols<double>({x, x}), concat_cols<double>({weights, x}))); },
                          {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return mean(mul(concat_rows<double>({x, x}), concat_rows<double>({x, weights}))); },
                          {x}, opt) < 1e-5);
  CHECK(grad_check_leaves([&] { return wsum(add_rowwise(x, reshape(g, {1, 6}))); }, {x, g}, opt) < 1e-5);
}

TEST_CASE("multi-head attention gradient and row-stochastic weights") {
  const std::size_t batch = 2, tokens = 3, dim = 4, heads = 2;
  const auto qkv = random_tensor({batch * tokens, 3 * dim}, 31, -1, 1, true);
  const auto weights = random_tensor({batch * tokens, dim}, 32);
  std::vector<double> attn;
  (void)multi_head_attention(qkv, batch, tokens, heads, &attn);
  REQUIRE(attn.size() == batch * heads * tokens * tokens);
  for (std::size_t r = 0; r < batch * heads * tokens; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < tokens; ++c) s += attn[r * tokens + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  GradCheckOptions opt;
  CHECK(grad_check_leaves([&] { return sum(mul(multi_head_attention(qkv, batch, tokens, heads), weights)); }, {qkv},
                          opt) < 1e-5);
}

TEST_CASE("tape: topological order, single visit, no-grad leaves untouched") {
  const auto a = random_tensor({2, 2}, 41, -1, 1, true);
  const auto c = random_tensor({2, 2}, 42);  // constant
  const auto loss = sum(mul(matmul(a, c), matmul(a, a)));
  const auto tape = Tape<double>::build(loss);
  const auto records = tape.records();
  for (std::size_t i = 0; i < records.size(); ++i)
    for (auto in : records[i].inputs) CHECK(in < records[i].output);
  backward(loss);
  CHECK(a.has_grad());
  CHECK_FALSE(c.has_grad());
  // Second backward accumulates: gradient doubles.
  const std::vector<double> g1(a.grad().begin(), a.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.grad()[i] == doctest::Approx(2 * g1[i]));
}

TEST_CASE("NoGradGuard records nothing") {
  const auto a = random_tensor({2, 2}, 51, -1, 1, true);
  Tensor<double> y;
  {
    NoGradGuard guard;
    y = matmul(a, a);
  }
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("invalid shapes raise dimension errors") {
  const auto a = random_tensor({2, 3}, 1);
  CHECK_THROWS_AS(add(a, random_tensor({3, 2}, 2)), DimensionError);
  CHECK_THROWS_AS(reshape(a, {5}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), DimensionError);
}
