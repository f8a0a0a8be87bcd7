#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dino/errors.hpp"
#include "dino/eval.hpp"
#include "dino/rng.hpp"

using namespace dino;
using namespace dino::eval;

namespace {

FeatureBank random_bank(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed, 1);
  std::vector<double> rows(n * d);
  for (auto& v : rows) v = rng.normal();
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng.below(classes);
  return FeatureBank::from_rows(d, std::move(rows), std::move(labels), classes);
}

// Exhaustive reference: score every row, pick k by full stable sort.
std::size_t brute_knn(const FeatureBank& bank, std::span<const double> q, std::size_t k, double tau) {
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < bank.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < bank.dim; ++j) s += bank.row(i)[j] * q[j];
    sims.push_back({s, i});
  }
  std::stable_sort(sims.begin(), sims.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::vector<double> score(bank.num_classes, 0.0);
  for (std::size_t i = 0; i < k; ++i) score[bank.labels[sims[i].second]] += std::exp(sims[i].first / tau);
  std::size_t best = 0;
  for (std::size_t c = 1; c < score.size(); ++c)
    if (score[c] > score[best]) best = c;
  return best;
}

// AP straight from the definition, using a full ranking.
double brute_ap(const FeatureBank& bank, std::span<const double> q, const std::vector<std::size_t>& rel) {
  std::vector<std::size_t> order(bank.rows());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sim(bank.rows());
  for (std::size_t i = 0; i < bank.rows(); ++i)
    for (std::size_t j = 0; j < bank.dim; ++j) sim[i] += bank.row(i)[j] * q[j];
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  double ap = 0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (std::find(rel.begin(), rel.end(), order[r]) != rel.end()) ap += double(++hits) / double(r + 1);
  }
  return ap / double(rel.size());
}

}  // namespace

TEST_CASE("feature bank rows are unit norm") {
  const auto b = random_bank(30, 7, 3, 1);
  for (std::size_t i = 0; i < b.rows(); ++i) {
    double n = 0;
    for (double v : b.row(i)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("knn: self match, defaults, errors") {
  const auto b = random_bank(20, 5, 4, 2);
  for (std::size_t i = 0; i < b.rows(); ++i) CHECK(knn_classify(b, b.row(i), 1).label == b.labels[i]);
  CHECK(knn_eval(b, b, 1) == 1.0);
  FeatureBank empty;
  empty.dim = 5;
  empty.num_classes = 2;
  CHECK_THROWS(knn_classify(empty, b.row(0)));
  CHECK_THROWS(knn_classify(b, b.row(0), 0));
  CHECK_THROWS(knn_classify(b, b.row(0), 21));
}

TEST_CASE("knn agrees with the exhaustive oracle on random instances") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto bank = random_bank(10 + s % 40, 2 + s % 6, 2 + s % 4, s);
    const auto q = random_bank(3, bank.dim, 2, s + 1000);
    const std::size_t k = 1 + s % bank.rows();
    for (std::size_t i = 0; i < q.rows(); ++i) CHECK(knn_classify(bank, q.row(i), k, 0.07).label == brute_knn(bank, q.row(i), k, 0.07));
  }
}

TEST_CASE("knn is scale free and near chance with shuffled labels") {
  auto b = random_bank(40, 6, 3, 5);
  std::vector<double> scaled(b.features);
  for (auto& v : scaled) v *= 7.5;
  const auto b2 = FeatureBank::from_rows(6, scaled, b.labels, 3);
  const auto q = random_bank(20, 6, 3, 6);
  for (std::size_t i = 0; i < q.rows(); ++i) CHECK(knn_classify(b, q.row(i)).label == knn_classify(b2, q.row(i)).label);

  // Labels independent of features: accuracy concentrates at 1/classes.
  const auto train = random_bank(2000, 8, 4, 7);
  const auto test = random_bank(1000, 8, 4, 8);
  CHECK(std::abs(knn_eval(train, test) - 0.25) < 0.05);
}

TEST_CASE("knn with a duplicated bank and doubled k gives the same labels") {
  const auto b = random_bank(30, 4, 3, 9);
  std::vector<double> rows;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    for (int rep = 0; rep < 2; ++rep) {
      rows.insert(rows.end(), b.row(i).begin(), b.row(i).end());
      labels.push_back(b.labels[i]);
    }
  }
  const auto dup = FeatureBank::from_rows(4, rows, labels, 3);
  const auto q = random_bank(50, 4, 3, 10);
  for (std::size_t i = 0; i < q.rows(); ++i) CHECK(knn_classify(b, q.row(i), 5).label == knn_classify(dup, q.row(i), 10).label);
}

TEST_CASE("linear probe: separable data, zero epochs, least-squares baseline") {
  Rng rng(3);
  auto gaussian_task = [&](std::size_t n, double sep) {
    std::vector<double> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = i % 2;
      rows.push_back((y ? sep : -sep) + rng.normal());
      rows.push_back(rng.normal());
      rows.push_back(1.0);
      labels.push_back(y);
    }
    return std::pair{rows, labels};
  };
  {
    std::vector<double> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 100; ++i) {
      rows.push_back(i % 2 ? 1.0 : -1.0);
      rows.push_back(0.1 * rng.normal());
      labels.push_back(i % 2);
    }
    const auto bank = FeatureBank::from_rows(2, rows, labels, 2);
    CHECK(linear_probe(bank, bank, {}) == 1.0);
    LinearProbeConfig zero;
    zero.epochs = 0;
    CHECK(std::abs(linear_probe(bank, bank, zero) - 0.5) <= 0.05);
  }
  {
    auto [tr_rows, tr_labels] = gaussian_task(400, 0.8);
    auto [te_rows, te_labels] = gaussian_task(400, 0.8);
    const auto train = FeatureBank::from_rows(3, tr_rows, tr_labels, 2);
    const auto test = FeatureBank::from_rows(3, te_rows, te_labels, 2);
    // Least squares on +-1 targets via the 3x3 normal equations.
    double A[3][4] = {};
    for (std::size_t i = 0; i < train.rows(); ++i) {
      const double t = train.labels[i] ? 1.0 : -1.0;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) A[r][c] += train.row(i)[r] * train.row(i)[c];
        A[r][3] += train.row(i)[r] * t;
      }
    }
    for (int p = 0; p < 3; ++p)
      for (int r = 0; r < 3; ++r)
        if (r != p) {
          const double f = A[r][p] / A[p][p];
          for (int c = 0; c < 4; ++c) A[r][c] -= f * A[p][c];
        }
    double correct = 0;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      double s = 0;
      for (int r = 0; r < 3; ++r) s += A[r][3] / A[r][r] * test.row(i)[r];
      correct += (s > 0) == (test.labels[i] == 1);
    }
    const double ls = correct / double(test.rows());
    CHECK(std::abs(linear_probe(train, test, {}) - ls) <= 0.05);
  }
}

TEST_CASE("retrieval mAP: definition examples and brute-force oracle") {
  // Bank of axis vectors; query along e0 ranks e0 first.
  std::vector<double> rows(9, 0.0);
  rows[0] = 1;
  rows[4] = 1;
  rows[8] = 1;
  const auto bank = FeatureBank::from_rows(3, rows, {0, 1, 2}, 3);
  const auto q = FeatureBank::from_rows(3, {1.0, 0.5, 0.1}, {0}, 3);
  CHECK(retrieval_map(bank, q, {{0}}) == doctest::Approx(1.0));
  CHECK(retrieval_map(bank, q, {{1}}) == doctest::Approx(0.5));
  CHECK(retrieval_map(bank, q, {{2}}) == doctest::Approx(1.0 / 3));
  CHECK(retrieval_map(bank, q, {{0, 1}}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(retrieval_map(bank, q, {{}}), ContractError);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto b = random_bank(50, 5, 3, s + 300);
    const auto qs = random_bank(4, 5, 3, s + 400);
    std::vector<std::vector<std::size_t>> rel(4);
    Rng rng(s);
    double expected = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 50; ++j)
        if (rng.bernoulli(0.2)) rel[i].push_back(j);
      if (rel[i].empty()) rel[i].push_back(s % 50);
      expected += brute_ap(b, qs.row(i), rel[i]);
    }
    CHECK(retrieval_map(b, qs, rel) == doctest::Approx(expected / 4).epsilon(1e-12));
  }
}

TEST_CASE("attention mask examples and minimality") {
  std::vector<double> onehot(64, 0.0);
  onehot[10] = 1.0;
  for (double m : {0.1, 0.6, 1.0}) {
    const auto r = attention_mask(onehot, 8, 8, m);
    CHECK(std::accumulate(r.mask.begin(), r.mask.end(), 0) == 1);
    CHECK(r.mask[10] == 1);
  }
  const std::vector<double> uniform(64, 1.0 / 64);
  const auto umask = attention_mask(uniform, 8, 8, 0.6).mask;
  CHECK(std::accumulate(umask.begin(), umask.end(), 0) == 39);
  // Unnormalized input gives the same mask.
  const std::vector<double> scaled(64, 3.0);
  CHECK(attention_mask(scaled, 8, 8, 0.6).mask == attention_mask(uniform, 8, 8, 0.6).mask);

  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> row(16);
    double total = 0;
    for (auto& v : row) total += (v = rng.uniform());
    for (auto& v : row) v /= total;
    const double mass = rng.uniform(0.05, 1.0);
    const auto r = attention_mask(row, 4, 4, mass);
    double kept = 0, smallest = 1;
    for (std::size_t i = 0; i < 16; ++i)
      if (r.mask[i]) {
        kept += row[i];
        smallest = std::min(smallest, row[i]);
      }
    CHECK(kept == doctest::Approx(r.kept_mass).epsilon(1e-12));
    CHECK(kept >= mass * (1 - 1e-9));
    CHECK(kept - smallest < mass);
  }
}

TEST_CASE("jaccard examples") {
  const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{0, 1, 1, 0}, z{0, 0, 0, 0}, c{0, 0, 1, 1};
  CHECK(jaccard(a, a) == 1.0);
  CHECK(jaccard(a, c) == 0.0);
  CHECK(jaccard(a, b) == doctest::Approx(1.0 / 3));
  CHECK(jaccard(z, z) == 1.0);
  const std::vector<std::uint8_t> short_mask{1, 0};
  CHECK_THROWS(jaccard(a, short_mask));
}
