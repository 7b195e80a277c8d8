#include "kani/kan.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kani {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

constexpr int kMaxDegree = 15;

}  // namespace

void SplineConfig::validate() const {
  if (degree < 0 || degree > kMaxDegree) throw std::invalid_argument("SplineConfig: degree must be in [0, 15]");
  if (grid_size < 1) throw std::invalid_argument("SplineConfig: grid_size must be >= 1");
  if (!(hi > lo)) throw std::invalid_argument("SplineConfig: empty range");
}

std::vector<double> SplineConfig::knots() const {
  const int n = grid_size + 2 * degree + 1;
  std::vector<double> t(static_cast<std::size_t>(n));
  const double h = spacing();
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = lo + (i - degree) * h;
  return t;
}

void bspline_basis_with_derivative(double u, const SplineConfig& cfg, double* values, double* derivs) {
  const int k = cfg.degree, g = cfg.grid_size;
  if (k > kMaxDegree) throw std::invalid_argument("SplineConfig: degree above " + std::to_string(kMaxDegree));
  const double h = cfg.spacing();
  u = std::clamp(u, cfg.lo, cfg.hi);
  // Knot interval holding u among the G in-range intervals; the right
  // endpoint belongs to the last one.
  int span = static_cast<int>(std::floor((u - cfg.lo) / h));
  span = std::clamp(span, 0, g - 1) + k;
  const int nb = g + k;
  const int first = span - k;
  if (k == 3) {
    // Uniform cubic in closed form on the local coordinate t in [0, 1].
    const double t = (u - cfg.lo) / h - (span - k);
    const double s = 1.0 - t, t2 = t * t, t3 = t2 * t;
    std::fill(values, values + nb, 0.0);
    values[first] = s * s * s / 6.0;
    values[first + 1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    values[first + 2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    values[first + 3] = t3 / 6.0;
    if (!derivs) return;
    std::fill(derivs, derivs + nb, 0.0);
    derivs[first] = -0.5 * s * s / h;
    derivs[first + 1] = (1.5 * t2 - 2.0 * t) / h;
    derivs[first + 2] = (-1.5 * t2 + t + 0.5) / h;
    derivs[first + 3] = 0.5 * t2 / h;
    return;
  }
  auto knot = [&](int i) { return cfg.lo + (i - k) * h; };

  // Local Cox-de Boor: n[r] ends as B_{span-k+r}; prev keeps degree k-1.
  double n[kMaxDegree + 1], prev[kMaxDegree + 1], left[kMaxDegree + 1], right[kMaxDegree + 1];
  n[0] = 1.0;
  prev[0] = 1.0;
  for (int j = 1; j <= k; ++j) {
    if (j == k) std::copy(n, n + k, prev);
    left[j] = u - knot(span + 1 - j);
    right[j] = knot(span + j) - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  std::fill(values, values + nb, 0.0);
  for (int r = 0; r <= k; ++r) values[first + r] = n[r];
  if (!derivs) return;
  std::fill(derivs, derivs + nb, 0.0);
  if (k == 0) return;
  // dB_{i,k}/du = (B_{i,k-1} - B_{i+1,k-1}) / h on uniform knots; the
  // degree k-1 functions present are B_{first+1} .. B_{span}.
  for (int r = 0; r <= k; ++r) {
    const double lo_term = r >= 1 ? prev[r - 1] : 0.0;
    const double hi_term = r <= k - 1 ? prev[r] : 0.0;
    derivs[first + r] = (lo_term - hi_term) / h;
  }
}

std::vector<double> bspline_basis(double u, const SplineConfig& config) {
  config.validate();
  std::vector<double> v(config.num_basis());
  bspline_basis_with_derivative(u, config, v.data(), nullptr);
  return v;
}

KanLayerParams init_kan_layer(std::size_t in, std::size_t out, const SplineConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t nb = config.num_basis();
  std::normal_distribution<double> coeff_dist(0.0, 0.1 / std::sqrt(static_cast<double>(in)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> base_dist(-bound, bound);
  Tensor coeffs({out, in, nb});
  for (double& v : coeffs.values()) v = coeff_dist(rng);
  Tensor base({out, in});
  for (double& v : base.values()) v = base_dist(rng);
  return KanLayerParams{parameter(std::move(coeffs)), parameter(std::move(base)), config};
}

std::size_t kan_param_count(std::size_t in, std::size_t out, const SplineConfig& config) {
  return out * in * config.num_basis() + out * in;
}

Var kan_layer_forward(const Var& x, const KanLayerParams& params) {
  const auto& cfg = params.config;
  cfg.validate();
  if (x.shape().size() != 2) throw ShapeError("kan_layer: expected [N x C_in] input, got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], in = x.shape()[1];
  const std::size_t out = params.base_weights.shape().at(0);
  const std::size_t nb = cfg.num_basis();
  if (params.base_weights.shape() != Shape{out, in}) throw ShapeError("kan_layer (base weights)", x.shape(), params.base_weights.shape());
  if (params.spline_coeffs.shape() != Shape{out, in, nb}) throw ShapeError("kan_layer (spline coeffs)", x.shape(), params.spline_coeffs.shape());

  const std::size_t stride = nb + 1;  // per input feature: silu then the basis
  const std::size_t width = in * stride;

  // Features and their input derivatives.
  auto feats = std::make_shared<RowMat>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  auto dfeats = std::make_shared<RowMat>(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    double* f = feats->data() + r * width;
    double* df = dfeats->data() + r * width;
    for (std::size_t p = 0; p < in; ++p) {
      const double z = xv[r * in + p];
      const double s = 1.0 / (1.0 + std::exp(-z));
      f[p * stride] = z * s;
      df[p * stride] = s * (1.0 + z * (1.0 - s));
      bspline_basis_with_derivative(z, cfg, f + p * stride + 1, df + p * stride + 1);
      if (!(z > cfg.lo && z < cfg.hi)) std::fill(df + p * stride + 1, df + p * stride + 1 + nb, 0.0);
    }
  }

  // Packed weights [C_out x C_in*(G+k+1)] in the same feature order.
  auto pack = [out, in, nb, stride, width](const Tensor& base, const Tensor& coeffs) {
    RowMat w(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(width));
    for (std::size_t q = 0; q < out; ++q) {
      for (std::size_t p = 0; p < in; ++p) {
        w(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(p * stride)) = base[q * in + p];
        for (std::size_t j = 0; j < nb; ++j)
          w(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(p * stride + 1 + j)) = coeffs[(q * in + p) * nb + j];
      }
    }
    return w;
  };
  const RowMat w = pack(params.base_weights.value(), params.spline_coeffs.value());

  Tensor y({n, out});
  MatMap(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out)).noalias() = (*feats) * w.transpose();

  return make_node("kan_layer", std::move(y), {x, params.spline_coeffs, params.base_weights},
                   [n, in, out, nb, stride, width, feats, dfeats, pack](Node& self) {
                     const CMatMap gy(self.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
                     auto& coeff_node = self.inputs[1];
                     auto& base_node = self.inputs[2];
                     const bool want_coeffs = coeff_node && coeff_node->requires_grad;
                     const bool want_base = base_node && base_node->requires_grad;
                     if (want_coeffs || want_base) {
                       const RowMat gw = gy.transpose() * (*feats);
                       double* gb = want_base ? base_node->ensure_grad().data() : nullptr;
                       double* gc = want_coeffs ? coeff_node->ensure_grad().data() : nullptr;
                       for (std::size_t q = 0; q < out; ++q) {
                         const double* row = gw.data() + q * width;
                         for (std::size_t p = 0; p < in; ++p) {
                           if (gb) gb[q * in + p] += row[p * stride];
                           if (gc) {
                             double* c = gc + (q * in + p) * nb;
                             for (std::size_t j = 0; j < nb; ++j) c[j] += row[p * stride + 1 + j];
                           }
                         }
                       }
                     }
                     auto& x_node = self.inputs[0];
                     if (x_node && x_node->requires_grad) {
                       const RowMat w = pack(base_node->value, coeff_node->value);
                       const RowMat gf = gy * w;
                       Tensor& gx = x_node->ensure_grad();
                       for (std::size_t r = 0; r < n; ++r) {
                         const double* a = gf.data() + r * width;
                         const double* d = dfeats->data() + r * width;
                         for (std::size_t p = 0; p < in; ++p) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < stride; ++j) acc += a[p * stride + j] * d[p * stride + j];
                           gx[r * in + p] += acc;
                         }
                       }
                     }
                   });
}

}  // namespace kani
