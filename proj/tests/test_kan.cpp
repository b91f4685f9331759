#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "takand/kan.hpp"
#include "takand/kg_store.hpp"
#include "test_util.hpp"

using namespace takand;

namespace {

// Textbook recursive Cox-de Boor with half-open spans.
double cox(std::size_t i, int p, double x, const std::vector<double>& t) {
  if (p == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  const double a = (x - t[i]) / (t[i + p] - t[i]) * cox(i, p - 1, x, t);
  const double b = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox(i + 1, p - 1, x, t);
  return a + b;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Solves A x = b by Gaussian elimination with partial pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

}  // namespace

TEST_CASE("order zero basis is the span indicator") {
  auto g = KanGrid::uniform(4, 0, -1, 1);
  CHECK(g.basis_count() == 4);
  auto b = bspline_basis(0.1, g);  // span [0, 0.5)
  CHECK(b == std::vector<double>{0, 0, 1, 0});
  auto first = bspline_basis(-0.75, g);
  CHECK(first == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("cubic basis matches a recursive Cox-de Boor oracle") {
  auto g = KanGrid::uniform(5, 3, -1, 1);
  REQUIRE(g.knots.size() == 12);
  REQUIRE(g.basis_count() == 8);
  std::vector<double> probes;
  for (std::size_t i = 3; i < 8; ++i) probes.push_back(0.5 * (g.knots[i] + g.knots[i + 1]));
  probes.push_back(-1.0);
  probes.push_back(0.2);
  probes.push_back(0.999);
  for (double x : probes) {
    CAPTURE(x);
    auto b = bspline_basis(x, g);
    for (std::size_t i = 0; i < 8; ++i) CHECK(b[i] == doctest::Approx(cox(i, 3, x, g.knots)).epsilon(1e-12));
  }
}

TEST_CASE("partition of unity on 1000 in-grid points") {
  for (int order : {1, 2, 3}) {
    auto g = KanGrid::uniform(5, order, -1, 1);
    for (int i = 0; i < 1000; ++i) {
      const double x = -1.0 + 2.0 * (i + 0.5) / 1000.0;
      double s = 0;
      for (double v : bspline_basis(x, g)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("outside the grid the basis continues linearly") {
  auto g = KanGrid::uniform(5, 3, -1, 1);
  const auto edge = bspline_basis(1.0, g), slope = bspline_basis_derivative(1.0, g);
  const auto out = bspline_basis(1.3, g);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(edge[i] + 0.3 * slope[i]));
  // derivative matches finite differences inside the grid
  const double x = 0.17, h = 1e-6;
  auto d = bspline_basis_derivative(x, g);
  auto p = bspline_basis(x + h, g), m = bspline_basis(x - h, g);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx((p[i] - m[i]) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("non-monotone knots are rejected") {
  CHECK_THROWS_AS(KanGrid::from_knots({0, 1, 1, 2, 3, 4, 5, 6}, 1), InputError);
  CHECK_THROWS_AS(bspline_basis(0.5, std::vector<double>{0, 2, 1, 3}, 0), InputError);
  auto g = KanGrid::from_knots({-3, -2, -1, 0, 1, 2, 3}, 1);
  CHECK(g.intervals == 4);
  CHECK(g.lo() == -2);
  CHECK(g.hi() == 2);
}

TEST_CASE("zero coefficients give zero output") {
  auto layer = KanLayer::zeros(3, 2, 5, 3, 1.0);
  for (double v : kan_forward(layer, std::vector<double>{0.3, -0.8, 2.0})) CHECK(v == 0.0);
}

TEST_CASE("random 3 to 2 layer matches direct summation") {
  ParamStore store;
  Rng rng(1);
  auto layer = KanLayer::create(store, "kan", 3, 2, 5, 3, 1.0, rng);
  std::mt19937_64 g(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = testutil::random_values(3, g, -1.4, 1.4);
    auto out = kan_forward(layer, x);
    for (std::size_t j = 0; j < 2; ++j) {
      double want = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        want += layer.base_weight.at(j, i) * silu(x[i]);
        auto b = bspline_basis(x[i], layer.grid);
        for (std::size_t k = 0; k < b.size(); ++k) want += layer.coeff(j, i, k) * b[k];
      }
      CHECK(out[j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK_THROWS(kan_forward(layer, std::vector<double>{1.0}));
}

TEST_CASE("least-squares spline coefficients reproduce sin") {
  auto layer = KanLayer::zeros(1, 1, 5, 3, 1.0);
  const std::size_t nb = layer.grid.basis_count();
  std::vector<std::vector<double>> ata(nb, std::vector<double>(nb, 0.0));
  std::vector<double> atb(nb, 0.0);
  for (int i = 0; i <= 400; ++i) {
    const double x = -1.0 + i / 200.0;
    auto b = bspline_basis(x, layer.grid);
    for (std::size_t r = 0; r < nb; ++r) {
      atb[r] += b[r] * std::sin(std::numbers::pi * x);
      for (std::size_t c = 0; c < nb; ++c) ata[r][c] += b[r] * b[c];
    }
  }
  const auto coeffs = solve(ata, atb);
  auto v = layer.spline_coeffs.mutable_value();
  std::copy(coeffs.begin(), coeffs.end(), v.begin());
  double worst = 0;
  for (int i = 0; i < 97; ++i) {
    const double x = -0.99 + i * 0.0205;
    worst = std::max(worst, std::abs(kan_forward(layer, std::vector<double>{x})[0] - std::sin(std::numbers::pi * x)));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("a 1 to 1 layer learns sin(pi x) to MSE below 1e-3") {
  ParamStore store;
  Rng rng(3);
  auto layer = KanLayer::create(store, "kan", 1, 1, 5, 3, 1.0, rng);
  std::vector<double> xs, ys;
  for (int i = 0; i < 101; ++i) {
    xs.push_back(-1.0 + i / 50.0);
    ys.push_back(std::sin(std::numbers::pi * xs.back()));
  }
  const auto x = ad::constant(1, xs.size(), xs), y = ad::constant(1, ys.size(), ys);
  Adam adam(0.02);
  double mse = 1.0;
  for (int step = 0; step < 2000; ++step) {
    store.zero_grad();
    auto loss = ad::mean(ad::square(ad::sub(kan_forward(layer, x), y)));
    mse = loss.item();
    ad::backward(loss);
    adam.step(store);
  }
  CHECK(mse < 1e-3);
}

TEST_CASE("kan gradients match finite differences") {
  ParamStore store;
  Rng rng(4);
  auto layer = KanLayer::create(store, "kan", 3, 2, 5, 3, 1.0, rng);
  std::mt19937_64 g(5);
  // Inputs stay off the knots so the basis is smooth in x.
  auto x = ad::parameter(3, 4, {-0.91, 0.13, 0.55, 1.3, -0.27, 0.71, -1.6, 0.05, 0.33, -0.52, 0.97, -0.11});
  auto w = ad::constant(2, 4, testutil::random_values(8, g));
  auto loss = [&] { return ad::sum(ad::mul(kan_forward(layer, x), w)); };
  // linear in the parameters: exact up to rounding
  CHECK(testutil::check_gradients(loss, {layer.spline_coeffs, layer.base_weight}).max_rel < 1e-6);
  CHECK(testutil::check_gradients(loss, {x}).max_rel < 1e-4);
}

TEST_CASE("kan output is continuous across knots and grid edges") {
  ParamStore store;
  Rng rng(6);
  auto layer = KanLayer::create(store, "kan", 1, 1, 5, 3, 1.0, rng);
  const double delta = 1e-6;
  double worst = 0;
  for (int i = 0; i <= 300; ++i) {
    const double x = -1.5 + i * 0.01;
    const double a = kan_forward(layer, std::vector<double>{x})[0];
    const double b = kan_forward(layer, std::vector<double>{x + delta})[0];
    worst = std::max(worst, std::abs(a - b) / delta);
  }
  for (double knot : layer.grid.knots) {
    const double a = kan_forward(layer, std::vector<double>{knot - delta})[0];
    const double b = kan_forward(layer, std::vector<double>{knot})[0];
    worst = std::max(worst, std::abs(a - b) / delta);
  }
  CHECK(std::isfinite(worst));
  CHECK(worst < 100.0);
}
