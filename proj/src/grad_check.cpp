#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>

#include "dino/errors.hpp"
#include "dino/rng.hpp"
#include "dino/tensor.hpp"

namespace dino {
namespace {

// The floor is relative to the leaf's largest analytic entry: coordinates
// whose gradient sits at the difference quotient's noise level would
// otherwise dominate the maximum.
double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor, 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Neville tableau over h, h/c, h/c^2, ... extrapolated to h -> 0; stops once
// higher orders get worse by a safety factor.
template <typename F>
double ridders(const F& central, double h, std::size_t stages) {
  constexpr double con = 1.4, con2 = con * con, safe = 2.0;
  std::vector<std::vector<double>> a(stages, std::vector<double>(stages, 0.0));
  a[0][0] = central(h);
  double best = a[0][0];
  double err = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < stages; ++i) {
    h /= con;
    a[0][i] = central(h);
    double fac = con2;
    for (std::size_t j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= con2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= safe * err) break;
  }
  return best;
}

}  // namespace

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double step) {
  Tensor<double> leaf = x.detach();
  leaf.set_requires_grad(true);
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, GradCheckOptions{.step = step});
}

double grad_check_leaves(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> leaves,
                         const GradCheckOptions& options) {
  if (!(options.step > 0)) throw ParameterError("grad_check step must be positive");
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) throw ContractError("grad_check needs leaves with requires_grad");
    leaf.zero_grad();
  }
  backward(loss());

  std::vector<std::vector<double>> analytic;
  std::vector<double> floors;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const auto g = leaves[l].grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(leaves[l].numel(), 0.0);
    double peak = 0.0;
    for (double v : analytic.back()) peak = std::max(peak, std::abs(v));
    floors.push_back(options.scale_floor * peak);
    for (std::size_t i = 0; i < leaves[l].numel(); ++i) coords.emplace_back(l, i);
  }
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    // Partial Fisher-Yates: a seeded uniform subset without replacement.
    Rng rng(options.seed, 0x6772616463686bULL);
    for (std::size_t i = 0; i < options.max_coords; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coords);
  }

  double worst = 0.0;
  for (const auto& [l, i] : coords) {
    auto values = leaves[l].mutable_values();
    const double saved = values[i];
    const double h = options.step;
    double numeric = 0.0;
    {
      NoGradGuard guard;
      const auto at = [&](double offset) {
        values[i] = saved + offset;
        return loss().item();
      };
      const auto central = [&](double step) { return (at(step) - at(-step)) / (2 * step); };
      if (options.method == GradCheckOptions::Method::ridders) {
        numeric = ridders(central, h, std::max<std::size_t>(options.ridders_stages, 2));
      } else {
        numeric = central(h);
      }
      values[i] = saved;
    }
    worst = std::max(worst, relative_error(analytic[l][i], numeric, floors[l]));
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return worst;
}

}  // namespace dino
