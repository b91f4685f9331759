#pragma once

// Kolmogorov-Arnold layer: every (input, output) edge carries a learnable
// univariate function w_base * silu(x) + sum_b c_b * B_b(x), with B_b the
// order-k B-spline basis on a uniform grid.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "takand/autodiff.hpp"
#include "takand/params.hpp"

namespace takand {

// Knot vector already extended by `order` knots on each side of [lo, hi].
struct KanGrid {
  std::vector<double> knots;
  int order = 3;
  std::size_t intervals = 5;

  static KanGrid uniform(std::size_t intervals, int order, double lo, double hi);
  // Validates monotonicity; knots.size() must be intervals + 2*order + 1.
  static KanGrid from_knots(std::vector<double> knots, int order);

  std::size_t basis_count() const { return intervals + static_cast<std::size_t>(order); }
  double lo() const { return knots[static_cast<std::size_t>(order)]; }
  double hi() const { return knots[intervals + static_cast<std::size_t>(order)]; }
};

// All basis values at x. Outside [lo, hi] the spline continues linearly:
// B(x) = B(edge) + (x - edge) * B'(edge).
std::vector<double> bspline_basis(double x, std::span<const double> knots, int order);
std::vector<double> bspline_basis(double x, const KanGrid& grid);
std::vector<double> bspline_basis_derivative(double x, const KanGrid& grid);

// x: n x L -> (n * basis_count) x L; row i*basis_count + b holds B_b(x_i).
ad::Var bspline_expand(const ad::Var& x, const KanGrid& grid);

struct KanLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  KanGrid grid;
  ad::Var base_weight;    // out x in
  ad::Var spline_coeffs;  // out x (in * basis_count); column i*basis_count + b
  double base_scale = 1.0;
  double spline_scale = 1.0;

  static KanLayer create(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                         std::size_t out_dim, std::size_t intervals, int order, double range,
                         Rng& rng);
  // Unregistered layer with all-zero parameters.
  static KanLayer zeros(std::size_t in_dim, std::size_t out_dim, std::size_t intervals, int order,
                        double range);
  double coeff(std::size_t out, std::size_t in, std::size_t b) const;
};

// Column-wise evaluation: x is in_dim x L, result out_dim x L.
ad::Var kan_forward(const KanLayer& layer, const ad::Var& x);
std::vector<double> kan_forward(const KanLayer& layer, std::span<const double> x);

}  // namespace takand
