#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "kani/autodiff.hpp"

namespace kani {

// Uniform knots on [lo, hi] split into `grid_size` intervals, extended by
// `degree` knots on each side, giving grid_size + degree basis functions.
struct SplineConfig {
  int degree = 3;
  int grid_size = 5;
  double lo = -1.0;
  double hi = 1.0;

  void validate() const;
  std::size_t num_basis() const { return static_cast<std::size_t>(grid_size + degree); }
  double spacing() const { return (hi - lo) / grid_size; }
  std::vector<double> knots() const;
  bool operator==(const SplineConfig&) const = default;
};

// Cox-de Boor evaluation at u clamped to [lo, hi]. The right endpoint belongs
// to the last interval.
std::vector<double> bspline_basis(double u, const SplineConfig& config);

// Basis values and their derivatives with respect to the clamped input.
void bspline_basis_with_derivative(double u, const SplineConfig& config, double* values, double* derivs);

struct KanLayerParams {
  Var spline_coeffs;  // [C_out x C_in x (G + k)]
  Var base_weights;   // [C_out x C_in]
  SplineConfig config;

  std::size_t in_features() const { return base_weights.shape()[1]; }
  std::size_t out_features() const { return base_weights.shape()[0]; }
};

// Spline coefficients ~ Normal(0, 0.1 / sqrt(C_in)); base weights
// ~ Uniform(-1/sqrt(C_in), 1/sqrt(C_in)).
KanLayerParams init_kan_layer(std::size_t in, std::size_t out, const SplineConfig& config, std::mt19937_64& rng);

// out[n, q] = sum_p base[q, p] * silu(x[n, p]) + sum_p sum_j coeff[q, p, j] * B_j(x[n, p])
// Differentiable in x, the coefficients and the base weights.
Var kan_layer_forward(const Var& x, const KanLayerParams& params);

std::size_t kan_param_count(std::size_t in, std::size_t out, const SplineConfig& config);

}  // namespace kani
