#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kani/config.hpp"
#include "kani/grid.hpp"

namespace kani {

enum class VariableMode { kAdditiveBias, kMultiplicativeGust };

const char* to_string(VariableMode mode);
VariableMode variable_mode_from_string(const std::string& text);

// A seeded analytic world: Gaussian-bump terrain, a smooth background field
// with a lapse-rate term, and a systematic grid bias tied to the terrain.
// Everything is determined by these fields.
struct SyntheticScenario {
  std::uint64_t seed = 7;
  std::string variable = "t2m";
  BBox bbox{30.0, 38.0, -110.0, -102.0};
  double resolution = 0.25;
  int n_stations = 40;
  double station_margin_cells = 1.0;

  int n_bumps = 24;
  double terrain_amp_min = 200.0;  // metres
  double terrain_amp_max = 1500.0;
  double terrain_sigma_min = 0.15;  // degrees
  double terrain_sigma_max = 0.5;

  int n_smooth_bumps = 6;
  double smooth_amp = 4.0;
  double smooth_sigma_min = 1.5;
  double smooth_sigma_max = 3.0;
  double base_level = 285.0;

  double lapse_rate = -6.5;  // units per km
  // bias = b0 + b1 * elev_km + b2 * slope
  std::array<double, 3> bias_coeffs{1.0, 6.5, 0.5};
  double obs_noise_std = 0.1;
  double diurnal_amp = 3.0;
  VariableMode mode = VariableMode::kAdditiveBias;
  // Gaussian blur of the gridded input, in cells; 0 disables it.
  double input_blur_cells = 0.0;

  void validate() const;
};

// Reads the keys named after the scenario fields; bbox is
// "lat_min, lat_max, lon_min, lon_max" and ranges are "min, max".
SyntheticScenario scenario_from_config(const KeyValueConfig& kv);

struct GaussianBump {
  double amplitude;
  double lat;
  double lon;
  double sigma;
};

class Oracle {
 public:
  explicit Oracle(const SyntheticScenario& scenario);

  const SyntheticScenario& scenario() const { return scenario_; }
  const std::vector<GaussianBump>& terrain() const { return terrain_; }
  const std::vector<GaussianBump>& background() const { return background_; }

  double elev(double lat, double lon) const;
  // d elev / d lat, d elev / d lon in metres per degree.
  std::array<double, 2> elev_gradient(double lat, double lon) const;
  // Gradient magnitude in kilometres of rise per degree.
  double slope(double lat, double lon) const;
  double smooth_field(double lat, double lon) const;
  double y_true(double lat, double lon, double t_hours) const;
  double bias(double lat, double lon) const;
  double gust_factor(double lat, double lon) const;
  // Gridded-product value at a point before any blur.
  double input_value(double lat, double lon, double t_hours) const;

 private:
  SyntheticScenario scenario_;
  std::vector<GaussianBump> terrain_;
  std::vector<GaussianBump> background_;
};

struct StationSite {
  std::string id;
  double lat;
  double lon;
  double elevation;
};

// Seeded uniform draws inside the bbox shrunk by `margin_cells`, each at least
// 0.1 cells from every cell centre.
std::vector<StationSite> sample_stations(const SyntheticScenario& scenario, int n, double margin_cells);

struct SyntheticSample {
  GriddedField input;
  GriddedField truth;
  StationSet obs;
};

SyntheticSample generate_sample(const SyntheticScenario& scenario, const Oracle& oracle, const CoordinateGrid& grid,
                                const std::vector<StationSite>& stations, std::int64_t t_hours);

TopographyGrid make_dem(const Oracle& oracle, const BBox& bbox, double resolution);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SampleEntry {
  std::int64_t time = 0;
  std::string input;
  std::string truth;
  std::string stations;
};

struct DemEntry {
  double resolution = 0.0;
  std::string path;
};

struct DatasetManifest {
  SyntheticScenario scenario;
  SplitRange train, val, test;
  std::vector<SampleEntry> samples;
  std::vector<DemEntry> dems;
  NormStats variable_stats;
  NormStats elevation_stats;
};

// Contiguous temporal split; counts round to nearest, remainder to test.
std::array<SplitRange, 3> split_ranges(std::size_t n_samples, const SplitFractions& fractions);

// Writes samples at t = 0, 1, 2, ... hours plus DEMs at r, r/2, r/4 and a
// manifest.json. Normalization statistics use the training block only.
DatasetManifest generate_dataset(const SyntheticScenario& scenario, std::size_t n_samples, const SplitFractions& fractions,
                                 const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace kani
