#include "takand/kan.hpp"

#include <cmath>
#include <stdexcept>

#include "takand/kg_store.hpp"

namespace takand {

namespace {

void check_knots(std::span<const double> knots, int order) {
  if (order < 0) throw std::invalid_argument("spline order must be >= 0");
  if (knots.size() < 2 * static_cast<std::size_t>(order) + 2)
    throw std::invalid_argument("knot vector too short for the spline order");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (!(knots[i] > knots[i - 1])) throw InputError("knot vector is not strictly increasing");
}

// Basis functions of every order up to `order`, with the order-0 indicator
// placed on knot span `span`. levels[p] has knots.size() - 1 - p entries.
std::vector<std::vector<double>> cox_de_boor(double x, std::span<const double> t, int order,
                                             std::size_t span) {
  const std::size_t m = t.size() - 1;
  std::vector<std::vector<double>> levels(static_cast<std::size_t>(order) + 1);
  levels[0].assign(m, 0.0);
  levels[0][span] = 1.0;
  for (int p = 1; p <= order; ++p) {
    const auto& prev = levels[static_cast<std::size_t>(p - 1)];
    auto& cur = levels[static_cast<std::size_t>(p)];
    const std::size_t n = m - static_cast<std::size_t>(p);
    cur.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ip = i + static_cast<std::size_t>(p);
      const double left = (x - t[i]) / (t[ip] - t[i]);
      const double right = (t[ip + 1] - x) / (t[ip + 1] - t[i + 1]);
      cur[i] = left * prev[i] + right * prev[i + 1];
    }
  }
  return levels;
}

std::vector<double> derivative_from(const std::vector<std::vector<double>>& levels,
                                    std::span<const double> t, int order) {
  const std::size_t m = t.size() - 1;
  const std::size_t n = m - static_cast<std::size_t>(order);
  std::vector<double> d(n, 0.0);
  if (order == 0) return d;
  const auto& prev = levels[static_cast<std::size_t>(order - 1)];
  const double p = order;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ip = i + static_cast<std::size_t>(order);
    d[i] = p / (t[ip] - t[i]) * prev[i] - p / (t[ip + 1] - t[i + 1]) * prev[i + 1];
  }
  return d;
}

struct Evaluation {
  std::vector<double> value;
  std::vector<double> slope;
};

Evaluation evaluate(double x, std::span<const double> t, int order) {
  const auto k = static_cast<std::size_t>(order);
  const std::size_t intervals = t.size() - 1 - 2 * k;
  const double lo = t[k], hi = t[k + intervals];
  const std::size_t first = k, last = k + intervals - 1;

  double at = x;
  std::size_t span = first;
  if (x <= lo) {
    at = lo;
    span = first;
  } else if (x >= hi) {
    at = hi;
    span = last;
  } else {
    while (span < last && x >= t[span + 1]) ++span;
  }
  const auto levels = cox_de_boor(at, t, order, span);
  Evaluation ev{levels[k], derivative_from(levels, t, order)};
  if (at != x) {
    for (std::size_t i = 0; i < ev.value.size(); ++i) ev.value[i] += (x - at) * ev.slope[i];
  }
  return ev;
}

}  // namespace

KanGrid KanGrid::uniform(std::size_t intervals, int order, double lo, double hi) {
  if (intervals < 1) throw std::invalid_argument("KAN grid needs at least one interval");
  if (order < 0) throw std::invalid_argument("spline order must be >= 0");
  if (!(hi > lo)) throw std::invalid_argument("KAN grid range must have hi > lo");
  KanGrid g;
  g.order = order;
  g.intervals = intervals;
  const double h = (hi - lo) / static_cast<double>(intervals);
  const int n = static_cast<int>(intervals) + 2 * order + 1;
  for (int i = 0; i < n; ++i) g.knots.push_back(lo + (i - order) * h);
  return g;
}

KanGrid KanGrid::from_knots(std::vector<double> knots, int order) {
  check_knots(knots, order);
  KanGrid g;
  g.order = order;
  g.intervals = knots.size() - 1 - 2 * static_cast<std::size_t>(order);
  g.knots = std::move(knots);
  return g;
}

std::vector<double> bspline_basis(double x, std::span<const double> knots, int order) {
  check_knots(knots, order);
  return evaluate(x, knots, order).value;
}

std::vector<double> bspline_basis(double x, const KanGrid& grid) {
  return evaluate(x, grid.knots, grid.order).value;
}

std::vector<double> bspline_basis_derivative(double x, const KanGrid& grid) {
  return evaluate(x, grid.knots, grid.order).slope;
}

ad::Var bspline_expand(const ad::Var& x, const KanGrid& grid) {
  const std::size_t n = x.rows(), L = x.cols(), nb = grid.basis_count();
  std::vector<double> out(n * nb * L);
  std::vector<double> slope(n * nb * L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      const auto ev = evaluate(x.at(i, l), grid.knots, grid.order);
      for (std::size_t b = 0; b < nb; ++b) {
        out[(i * nb + b) * L + l] = ev.value[b];
        slope[(i * nb + b) * L + l] = ev.slope[b];
      }
    }
  return ad::make_op(n * nb, L, std::move(out), {x},
                     [n, L, nb, slope = std::move(slope)](ad::Node& self) {
                       ad::Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t b = 0; b < nb; ++b)
                           for (std::size_t l = 0; l < L; ++l) {
                             const std::size_t k = (i * nb + b) * L + l;
                             p.grad[i * L + l] += self.grad[k] * slope[k];
                           }
                     });
}

KanLayer KanLayer::create(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                          std::size_t out_dim, std::size_t intervals, int order, double range,
                          Rng& rng) {
  KanLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.grid = KanGrid::uniform(intervals, order, -range, range);
  const std::size_t nb = layer.grid.basis_count();
  layer.base_weight = store.add(prefix + ".base_weight", out_dim, in_dim,
                                fan_in_uniform(out_dim, in_dim, in_dim, rng));
  layer.spline_coeffs =
      store.add(prefix + ".spline_coeffs", out_dim, in_dim * nb,
                uniform_values(out_dim * in_dim * nb, 0.1 / std::sqrt(static_cast<double>(in_dim)), rng));
  return layer;
}

KanLayer KanLayer::zeros(std::size_t in_dim, std::size_t out_dim, std::size_t intervals, int order,
                         double range) {
  KanLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.grid = KanGrid::uniform(intervals, order, -range, range);
  const std::size_t nb = layer.grid.basis_count();
  layer.base_weight = ad::parameter(out_dim, in_dim, std::vector<double>(out_dim * in_dim, 0.0));
  layer.spline_coeffs =
      ad::parameter(out_dim, in_dim * nb, std::vector<double>(out_dim * in_dim * nb, 0.0));
  return layer;
}

double KanLayer::coeff(std::size_t out, std::size_t in, std::size_t b) const {
  return spline_coeffs.at(out, in * grid.basis_count() + b);
}

ad::Var kan_forward(const KanLayer& layer, const ad::Var& x) {
  if (x.rows() != layer.in_dim)
    throw std::invalid_argument("kan_forward: input has " + std::to_string(x.rows()) +
                                " rows, layer expects " + std::to_string(layer.in_dim));
  ad::Var base = ad::matmul(layer.base_weight, ad::silu(x));
  ad::Var spline = ad::matmul(layer.spline_coeffs, bspline_expand(x, layer.grid));
  return ad::add(ad::scale(base, layer.base_scale), ad::scale(spline, layer.spline_scale));
}

std::vector<double> kan_forward(const KanLayer& layer, std::span<const double> x) {
  ad::NoGradGuard guard;
  return kan_forward(layer, ad::column({x.begin(), x.end()})).to_vector();
}

}  // namespace takand
