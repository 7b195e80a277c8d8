#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kani/gradcheck.hpp"
#include "kani/kan.hpp"
#include "kani/ops.hpp"
#include "oracles.hpp"

using namespace kani;
using namespace kani::oracle;

TEST(Spline, KnotsStrictlyIncreasing) {
  SplineConfig cfg;
  const auto t = cfg.knots();
  ASSERT_EQ(t.size(), 12u);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_GT(t[i], t[i - 1]);
  EXPECT_DOUBLE_EQ(t[3], -1.0);
  EXPECT_DOUBLE_EQ(t[8], 1.0);
  SplineConfig bad;
  bad.grid_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = SplineConfig{};
  bad.degree = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Spline, PartitionOfUnity) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SplineConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto b = bspline_basis(u(rng), cfg);
    double s = 0.0;
    for (double v : b) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  for (double edge : {-1.0, 1.0, -1.5, 2.0}) {
    const auto b = bspline_basis(edge, cfg);
    double s = 0.0;
    for (double v : b) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Spline, CubicInteriorKnotValues) {
  SplineConfig cfg;  // knots at -1, -0.6, ..., 1
  for (double knot : {-0.6, -0.2, 0.2, 0.6}) {
    const auto b = bspline_basis(knot, cfg);
    const auto o = oracle_basis(cfg, knot);
    std::vector<double> nz;
    for (std::size_t j = 0; j < b.size(); ++j) {
      EXPECT_NEAR(b[j], o[j], 1e-12);
      if (b[j] > 1e-15) nz.push_back(b[j]);
    }
    ASSERT_EQ(nz.size(), 3u);
    EXPECT_NEAR(nz[0], 1.0 / 6.0, 1e-12);
    EXPECT_NEAR(nz[1], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(nz[2], 1.0 / 6.0, 1e-12);
  }
}

TEST(Spline, MatchesRecursiveOracleAcrossDegrees) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int k : {0, 1, 2, 3, 4, 5}) {
    for (int g : {1, 3, 5, 8}) {
      SplineConfig cfg{k, g, -1.0, 1.0};
      for (int i = 0; i < 200; ++i) {
        const double x = u(rng);
        const auto b = bspline_basis(x, cfg), o = oracle_basis(cfg, x);
        for (std::size_t j = 0; j < b.size(); ++j) ASSERT_NEAR(b[j], o[j], 1e-12) << "k=" << k << " G=" << g << " u=" << x;
      }
    }
  }
}

TEST(Spline, DegreeZeroIsIntervalIndicator) {
  SplineConfig cfg{0, 4, -1.0, 1.0};
  EXPECT_EQ(bspline_basis(-0.9, cfg), (std::vector<double>{1, 0, 0, 0}));
  EXPECT_EQ(bspline_basis(0.1, cfg), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(bspline_basis(1.0, cfg), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Spline, LocalSupportHasDegreePlusOneEntries) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-0.999, 0.999);
  for (int k : {1, 2, 3, 4}) {
    SplineConfig cfg{k, 5, -1.0, 1.0};
    for (int i = 0; i < 500; ++i) {
      const auto b = bspline_basis(u(rng), cfg);
      EXPECT_EQ(std::count_if(b.begin(), b.end(), [](double v) { return v != 0.0; }), k + 1);
    }
  }
}

TEST(Spline, DerivativesMatchFiniteDifferencesAndAreLipschitz) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(-0.99, 0.99);
  for (int k : {1, 2, 3, 4}) {
    SplineConfig cfg{k, 5, -1.0, 1.0};
    const std::size_t nb = cfg.num_basis();
    std::vector<double> v(nb), d(nb), vp(nb), vm(nb);
    for (int i = 0; i < 300; ++i) {
      const double x = u(rng), h = 1e-6;
      bspline_basis_with_derivative(x, cfg, v.data(), d.data());
      bspline_basis_with_derivative(x + h, cfg, vp.data(), nullptr);
      bspline_basis_with_derivative(x - h, cfg, vm.data(), nullptr);
      for (std::size_t j = 0; j < nb; ++j) {
        // |B_j'| <= 2/h_knot for every degree, so 2 / 0.4 bounds the slope.
        EXPECT_LE(std::abs(vp[j] - v[j]), 5.0 * h * (1 + 1e-6));
        if (k >= 2) EXPECT_NEAR(d[j], (vp[j] - vm[j]) / (2 * h), 1e-6);
      }
    }
  }
}

TEST(KanLayer, ParamCountFormula) {
  SplineConfig cfg;
  EXPECT_EQ(kan_param_count(1, 1, cfg), 9u);
  EXPECT_EQ(kan_param_count(64, 64, cfg), 36864u);
  SplineConfig linear{0, 1, -1.0, 1.0};
  EXPECT_EQ(kan_param_count(7, 5, linear), 2u * 7u * 5u);
  std::mt19937_64 rng(0);
  const auto p = init_kan_layer(7, 5, cfg, rng);
  EXPECT_EQ(p.spline_coeffs.size() + p.base_weights.size(), kan_param_count(7, 5, cfg));
}

TEST(KanLayer, ZeroParametersGiveZeroMap) {
  SplineConfig cfg;
  KanLayerParams p{parameter(Tensor({3, 4, cfg.num_basis()})), parameter(Tensor({3, 4})), cfg};
  std::mt19937_64 rng(25);
  std::normal_distribution<double> nd;
  Tensor x({6, 4});
  for (double& v : x.values()) v = nd(rng);
  const Var y = kan_layer_forward(constant(x), p);
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(KanLayer, MatchesExplicitFormula) {
  SplineConfig cfg;
  std::mt19937_64 rng(26);
  const auto p = init_kan_layer(3, 2, cfg, rng);
  std::uniform_real_distribution<double> u(-1.4, 1.4);
  Tensor x({5, 3});
  for (double& v : x.values()) v = u(rng);
  const auto y = kan_layer_forward(constant(x), p).value();
  const std::size_t nb = cfg.num_basis();
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t q = 0; q < 2; ++q) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        const double z = x.at(n, i);
        acc += p.base_weights.value()[q * 3 + i] * z / (1 + std::exp(-z));
        const auto b = oracle_basis(cfg, z);
        for (std::size_t j = 0; j < nb; ++j) acc += p.spline_coeffs.value()[(q * 3 + i) * nb + j] * b[j];
      }
      EXPECT_NEAR(y.at(n, q), acc, 1e-12);
    }
}

TEST(KanLayer, FittedIdentityReproducesInput) {
  // Least-squares fit of the coefficients to g(u) = u on a dense sample.
  SplineConfig cfg;
  const std::size_t nb = cfg.num_basis();
  std::vector<std::vector<double>> ata(nb, std::vector<double>(nb, 0.0));
  std::vector<double> atb(nb, 0.0);
  for (int i = 0; i <= 400; ++i) {
    const double uu = -1.0 + 2.0 * i / 400.0;
    const auto b = oracle_basis(cfg, uu);
    for (std::size_t r = 0; r < nb; ++r) {
      atb[r] += b[r] * uu;
      for (std::size_t c = 0; c < nb; ++c) ata[r][c] += b[r] * b[c];
    }
  }
  for (std::size_t c = 0; c < nb; ++c) {  // Gauss-Jordan, SPD so no pivoting
    const double piv = ata[c][c];
    for (std::size_t j = 0; j < nb; ++j) ata[c][j] /= piv;
    atb[c] /= piv;
    for (std::size_t r = 0; r < nb; ++r) {
      if (r == c) continue;
      const double f = ata[r][c];
      for (std::size_t j = 0; j < nb; ++j) ata[r][j] -= f * ata[c][j];
      atb[r] -= f * atb[c];
    }
  }
  KanLayerParams p{parameter(Tensor({1, 1, nb}, atb)), parameter(Tensor({1, 1}, 0.0)), cfg};
  Tensor x({41, 1});
  for (std::size_t i = 0; i < 41; ++i) x[i] = -1.0 + 0.05 * static_cast<double>(i);
  const auto y = kan_layer_forward(constant(x), p).value();
  for (std::size_t i = 0; i < 41; ++i) EXPECT_NEAR(y[i], x[i], 2e-2);
}

// GEMM blocking depends on row position, so equality is up to summation order.
TEST(KanLayer, RowPermutationEquivariance) {
  SplineConfig cfg;
  std::mt19937_64 rng(27);
  const auto p = init_kan_layer(4, 3, cfg, rng);
  std::normal_distribution<double> nd(0, 0.7);
  Tensor x({6, 4});
  for (double& v : x.values()) v = nd(rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor xp({6, 4});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) xp.at(r, c) = x.at(perm[r], c);
  const auto y = kan_layer_forward(constant(x), p).value(), yp = kan_layer_forward(constant(xp), p).value();
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(yp.at(r, c), y.at(perm[r], c), 1e-13);
}

TEST(KanLayer, GradientsMatchFiniteDifferences) {
  SplineConfig cfg;
  std::mt19937_64 rng(28);
  auto p = init_kan_layer(3, 4, cfg, rng);
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  Tensor xt({5, 3});
  for (double& v : xt.values()) v = u(rng);
  xt.at(0, 0) = 1.6;  // outside the spline range
  Var x = parameter(xt);
  Tensor w({5, 4});
  for (double& v : w.values()) v = u(rng);
  auto report = grad_check([&] { return ops::sum(ops::mul(kan_layer_forward(x, p), constant(w))); },
                           {{"x", x}, {"spline_coeffs", p.spline_coeffs}, {"base_weights", p.base_weights}});
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}
