#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstring>
#include <functional>
#include <random>

#include "kani/gridio.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace kani;
using namespace kani::oracle;

namespace {

IoErrc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const IoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no IoError thrown";
  return IoErrc::kOpen;
}

}  // namespace

TEST(Grid, CoordinateGridCounts) {
  EXPECT_EQ(make_coordinate_grid({0, 10, 0, 10}, 0.03125).geometry.height, 320u);
  EXPECT_EQ(make_coordinate_grid({0, 10, 0, 10}, 0.015625).geometry.width, 640u);
  const auto g = make_coordinate_grid({0, 1, 0, 1}, 0.5);
  ASSERT_EQ(g.geometry.cells(), 4u);
  EXPECT_DOUBLE_EQ(g.geometry.cell_lon(0), 0.25);
  EXPECT_DOUBLE_EQ(g.geometry.cell_lon(1), 0.75);
  EXPECT_DOUBLE_EQ(g.geometry.cell_lat(0), 0.75);  // north row first
  EXPECT_DOUBLE_EQ(g.geometry.cell_lat(1), 0.25);
}

TEST(Grid, NonDivisibleResolutionRejected) {
  EXPECT_THROW(make_coordinate_grid({0, 1, 0, 1}, 0.3), std::invalid_argument);
  EXPECT_THROW(make_coordinate_grid({0, 1, 0, 1}, 0.0), std::invalid_argument);
}

TEST(Interp, TwoByTwoCentroid) {
  const GriddedField f({0, 1, 0, 1}, 0.5, "x", 0, {1, 2, 3, 4});
  const std::vector<LatLon> p{{0.5, 0.5}};
  EXPECT_DOUBLE_EQ(bilinear_interp(f, p).values[0], 2.5);
}

TEST(Interp, ExactAtCentresAndAgreesWithNearest) {
  std::mt19937_64 rng(11);
  const auto f = random_field(rng, {0, 2, 0, 2}, 0.25);
  std::vector<LatLon> centres;
  for (std::size_t r = 0; r < f.height(); ++r)
    for (std::size_t c = 0; c < f.width(); ++c) centres.push_back({f.geometry().cell_lat(r), f.geometry().cell_lon(c)});
  const auto b = bilinear_interp(f, centres), n = nearest_interp(f, centres);
  for (std::size_t i = 0; i < centres.size(); ++i) {
    EXPECT_EQ(b.values[i], f.values()[i]);
    EXPECT_EQ(n.values[i], f.values()[i]);
  }
  EXPECT_TRUE(b.warnings.empty());
}

TEST(Interp, ConstantReproduction) {
  const GriddedField f({0, 2, 0, 2}, 0.5, "x", 0, std::vector<double>(16, 7.25));
  const std::vector<LatLon> p{{0.3, 1.1}, {1.74, 0.26}, {1.0, 1.0}};
  for (double v : bilinear_interp(f, p).values) EXPECT_NEAR(v, 7.25, 1e-14);
}

TEST(Interp, NearestTieGoesToSmallerRowCol) {
  const GriddedField f({0, 1, 0, 1}, 0.5, "x", 0, {1, 2, 3, 4});
  const std::vector<LatLon> tie{{0.75, 0.5}, {0.5, 0.5}};  // (0,0)|(0,1), then all four
  const auto n = nearest_interp(f, tie);
  EXPECT_EQ(n.values[0], 1.0);
  EXPECT_EQ(n.values[1], 1.0);
  const std::vector<LatLon> near00{{0.7, 0.3}};
  EXPECT_EQ(nearest_interp(f, near00).values[0], 1.0);
}

TEST(Interp, BruteForceOracleOnRandomFields) {
  std::mt19937_64 rng(12);
  const BBox bbox{10, 12, 20, 22};
  std::uniform_real_distribution<double> lat(10.125, 11.875), lon(20.125, 21.875);
  double worst_b = 0.0, worst_n = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto f = random_field(rng, bbox, 0.25);  // 8x8
    std::vector<LatLon> pts(100);
    for (auto& p : pts) p = {lat(rng), lon(rng)};
    const auto b = bilinear_interp(f, pts), n = nearest_interp(f, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      worst_b = std::max(worst_b, std::abs(b.values[i] - hat_bilinear(f, pts[i].lat, pts[i].lon)));
      worst_n = std::max(worst_n, std::abs(n.values[i] - brute_nearest(f, pts[i].lat, pts[i].lon)));
    }
  }
  EXPECT_LE(worst_b, 1e-12);
  EXPECT_LE(worst_n, 1e-12);
}

TEST(Interp, AffineReproductionAndLocalBounds) {
  std::mt19937_64 rng(13);
  const auto geom = GridGeometry::from_bbox({30, 32, -100, -98}, 0.25);
  std::uniform_real_distribution<double> coef(-5, 5), lat(30.125, 31.875), lon(-99.875, -98.125);
  for (int k = 0; k < 20; ++k) {
    const double a = coef(rng), b = coef(rng), c = coef(rng);
    std::vector<double> v(geom.cells());
    for (std::size_t r = 0; r < geom.height; ++r)
      for (std::size_t q = 0; q < geom.width; ++q) v[r * geom.width + q] = a * geom.cell_lat(r) + b * geom.cell_lon(q) + c;
    const GriddedField f(geom, "x", 0, v);
    std::vector<LatLon> pts(50);
    for (auto& p : pts) p = {lat(rng), lon(rng)};
    const auto out = bilinear_interp(f, pts).values;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_NEAR(out[i], a * pts[i].lat + b * pts[i].lon + c, 1e-10);
    }
  }
  const auto f = random_field(rng, {30, 32, -100, -98}, 0.25);
  for (int k = 0; k < 200; ++k) {
    const double la = lat(rng), lo = lon(rng);
    const std::vector<LatLon> p{{la, lo}};
    const double v = bilinear_interp(f, p).values[0];
    const auto r0 = static_cast<std::size_t>(std::floor(geom.frac_row(la)));
    const auto c0 = static_cast<std::size_t>(std::floor(geom.frac_col(lo)));
    const double vals[4] = {f(r0, c0), f(r0 + 1, c0), f(r0, c0 + 1), f(r0 + 1, c0 + 1)};
    EXPECT_GE(v, *std::min_element(vals, vals + 4) - 1e-12);
    EXPECT_LE(v, *std::max_element(vals, vals + 4) + 1e-12);
  }
}

TEST(Interp, OutOfHullClampsWithWarning) {
  const GriddedField f({0, 1, 0, 1}, 0.5, "x", 0, {1, 2, 3, 4});
  const std::vector<LatLon> p{{0.9, 0.25}, {0.5, 0.5}};
  const auto b = bilinear_interp(f, p);
  EXPECT_EQ(b.values[0], 1.0);
  ASSERT_EQ(b.warnings.size(), 1u);
  EXPECT_EQ(nearest_interp(f, p).warnings.size(), 1u);
}

TEST(Normalize, RoundTripAndExamples) {
  const NormStats s{"t2m", 285.0, 4.0};
  const std::vector<double> v{285.0, 289.0, 251.3, 300.125};
  const auto n = normalize(v, s);
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[1], 1.0);
  const auto back = denormalize(n, s);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(back[i] - v[i]), 1e-6 * std::abs(v[i]));
  EXPECT_THROW(normalize(v, NormStats{"t2m", 0.0, 0.0}), std::invalid_argument);
}

TEST(GridIo, FieldRoundTripIsByteIdentical) {
  ScratchDir dir("gridio");
  const GriddedField f({30, 31, -100, -99}, 0.5, "t2m", 42, {280.5, 281.25, 279.0, 290.75});
  write_field(f, dir / "a.nfg");
  const auto g = read_field(dir / "a.nfg");
  EXPECT_EQ(g.variable(), "t2m");
  EXPECT_EQ(g.time(), 42);
  EXPECT_EQ(g.bbox(), f.bbox());
  EXPECT_EQ(std::vector<double>(g.values().begin(), g.values().end()),
            std::vector<double>(f.values().begin(), f.values().end()));
  write_field(g, dir / "b.nfg");
  EXPECT_EQ(slurp(dir / "a.nfg"), slurp(dir / "b.nfg"));
  const std::string bytes = slurp(dir / "a.nfg");
  EXPECT_EQ(bytes.rfind("NFGRID 1\n", 0), 0u);
}

TEST(GridIo, DistinctErrorCodes) {
  ScratchDir dir("gridio_err");
  const GriddedField f({0, 1, 0, 1}, 0.5, "x", 0, {1, 2, 3, 4});
  write_field(f, dir / "ok.nfg");
  const std::string ok = slurp(dir / "ok.nfg");
  auto write_raw = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(dir / name, std::ios::binary) << bytes;
    return dir / name;
  };

  auto truncated = write_raw("short.nfg", ok.substr(0, ok.size() - 4));
  EXPECT_EQ(code_of([&] { read_field(truncated); }), IoErrc::kShapeMismatch);

  std::string magic = ok;
  magic.replace(0, 6, "XXGRID");
  auto bad_magic = write_raw("magic.nfg", magic);
  EXPECT_EQ(code_of([&] { read_field(bad_magic); }), IoErrc::kBadMagic);

  std::string version = ok;
  version[7] = '2';
  auto bad_version = write_raw("version.nfg", version);
  EXPECT_EQ(code_of([&] { read_field(bad_version); }), IoErrc::kBadVersion);

  std::string nan = ok;
  const float q = std::nanf("");
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  auto bad_value = write_raw("nan.nfg", nan);
  EXPECT_EQ(code_of([&] { read_field(bad_value); }), IoErrc::kNonFinite);

  EXPECT_EQ(code_of([&] { read_field(dir / "missing.nfg"); }), IoErrc::kOpen);
}

TEST(GridIo, DeclaredShapeLargerThanPayload) {
  ScratchDir dir("gridio_shape");
  std::ofstream out(dir / "f.nfg", std::ios::binary);
  out << "NFGRID 1\nvar=x\ntime=0\nbbox=0 10 0 10\nres=0.03125\nshape=320 320\n";
  std::vector<float> payload(319 * 320, 1.0f);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
  out.close();
  EXPECT_EQ(code_of([&] { read_field(dir / "f.nfg"); }), IoErrc::kShapeMismatch);
}

TEST(GridIo, StationRoundTripAndDomainCheck) {
  ScratchDir dir("stations");
  const StationSet s({{"A1", 30.4, -99.2, 812.5, 281.125, 3}, {"B2", 30.9, -99.9, 100.0, 279.5, 3}});
  write_stations(s, dir / "s.csv");
  const auto back = read_stations(dir / "s.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, "B2");
  EXPECT_EQ(back[0].value, 281.125);
  write_stations(back, dir / "t.csv");
  EXPECT_EQ(slurp(dir / "s.csv"), slurp(dir / "t.csv"));

  std::ofstream(dir / "out.csv") << "id,lat,lon,elev_m,value,time\nIN,30.5,-99.5,0,1,0\nFAR,35.0,-99.5,0,1,0\n";
  try {
    read_stations(dir / "out.csv", BBox{30, 31, -100, -99});
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.code(), IoErrc::kOutOfDomain);
    EXPECT_NE(std::string(e.what()).find("FAR"), std::string::npos);
  }
  std::ofstream(dir / "dup.csv") << "id,lat,lon,elev_m,value,time\nA,30.5,-99.5,0,1,0\nA,30.6,-99.5,0,1,0\n";
  EXPECT_EQ(code_of([&] { read_stations(dir / "dup.csv"); }), IoErrc::kDuplicateId);
}

TEST(GridIo, NormStatsRoundTrip) {
  ScratchDir dir("norm");
  const std::vector<NormStats> s{{"t2m", 284.123456789, 3.25}, {"elevation", 1200.5, 410.0}};
  write_norm_stats(s, dir / "n.csv");
  const auto back = read_norm_stats(dir / "n.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].mean, s[0].mean);
  EXPECT_EQ(back[1].std, s[1].std);
  EXPECT_EQ(parse_double(format_double(0.1 + 0.2), "x"), 0.1 + 0.2);
}
