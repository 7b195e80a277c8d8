#include "kani/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "kani/gridio.hpp"

namespace kani {
namespace {

using nlohmann::json;

double bump_sum(const std::vector<GaussianBump>& bumps, double lat, double lon) {
  double s = 0.0;
  for (const auto& b : bumps) {
    const double dl = lat - b.lat, dn = lon - b.lon;
    s += b.amplitude * std::exp(-(dl * dl + dn * dn) / (2.0 * b.sigma * b.sigma));
  }
  return s;
}

// Independent substreams for terrain, background and stations.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

std::mt19937_64 noise_stream(std::uint64_t seed, std::int64_t sample, std::size_t station) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(static_cast<std::uint64_t>(sample) >> 32),
                    static_cast<std::uint32_t>(station), 0x6f627373u};
  return std::mt19937_64(seq);
}

std::vector<double> gaussian_blur(const std::vector<double>& v, std::size_t h, std::size_t w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& k : kernel) k /= norm;
  auto clampi = [](int x, int n) { return std::max(0, std::min(n - 1, x)); };
  std::vector<double> tmp(v.size()), out(v.size());
  const int hi = static_cast<int>(h), wi = static_cast<int>(w);
  for (int r = 0; r < hi; ++r)
    for (int c = 0; c < wi; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[static_cast<std::size_t>(k + radius)] * v[static_cast<std::size_t>(r * wi + clampi(c + k, wi))];
      tmp[static_cast<std::size_t>(r * wi + c)] = s;
    }
  for (int r = 0; r < hi; ++r)
    for (int c = 0; c < wi; ++c) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(clampi(r + k, hi) * wi + c)];
      out[static_cast<std::size_t>(r * wi + c)] = s;
    }
  return out;
}

json scenario_to_json(const SyntheticScenario& s) {
  return json{{"seed", s.seed},
              {"variable", s.variable},
              {"bbox", {s.bbox.lat_min, s.bbox.lat_max, s.bbox.lon_min, s.bbox.lon_max}},
              {"resolution", s.resolution},
              {"n_stations", s.n_stations},
              {"station_margin_cells", s.station_margin_cells},
              {"n_bumps", s.n_bumps},
              {"terrain_amp", {s.terrain_amp_min, s.terrain_amp_max}},
              {"terrain_sigma", {s.terrain_sigma_min, s.terrain_sigma_max}},
              {"n_smooth_bumps", s.n_smooth_bumps},
              {"smooth_amp", s.smooth_amp},
              {"smooth_sigma", {s.smooth_sigma_min, s.smooth_sigma_max}},
              {"base_level", s.base_level},
              {"lapse_rate", s.lapse_rate},
              {"bias_coeffs", s.bias_coeffs},
              {"obs_noise_std", s.obs_noise_std},
              {"diurnal_amp", s.diurnal_amp},
              {"variable_mode", to_string(s.mode)},
              {"input_blur_cells", s.input_blur_cells}};
}

SyntheticScenario scenario_from_json(const json& j) {
  SyntheticScenario s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.variable = j.at("variable").get<std::string>();
  const auto b = j.at("bbox").get<std::vector<double>>();
  s.bbox = {b.at(0), b.at(1), b.at(2), b.at(3)};
  s.resolution = j.at("resolution").get<double>();
  s.n_stations = j.at("n_stations").get<int>();
  s.station_margin_cells = j.at("station_margin_cells").get<double>();
  s.n_bumps = j.at("n_bumps").get<int>();
  s.terrain_amp_min = j.at("terrain_amp").at(0).get<double>();
  s.terrain_amp_max = j.at("terrain_amp").at(1).get<double>();
  s.terrain_sigma_min = j.at("terrain_sigma").at(0).get<double>();
  s.terrain_sigma_max = j.at("terrain_sigma").at(1).get<double>();
  s.n_smooth_bumps = j.at("n_smooth_bumps").get<int>();
  s.smooth_amp = j.at("smooth_amp").get<double>();
  s.smooth_sigma_min = j.at("smooth_sigma").at(0).get<double>();
  s.smooth_sigma_max = j.at("smooth_sigma").at(1).get<double>();
  s.base_level = j.at("base_level").get<double>();
  s.lapse_rate = j.at("lapse_rate").get<double>();
  s.bias_coeffs = j.at("bias_coeffs").get<std::array<double, 3>>();
  s.obs_noise_std = j.at("obs_noise_std").get<double>();
  s.diurnal_amp = j.at("diurnal_amp").get<double>();
  s.mode = variable_mode_from_string(j.at("variable_mode").get<std::string>());
  s.input_blur_cells = j.at("input_blur_cells").get<double>();
  return s;
}

std::string sample_name(const char* kind, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "samples/%s_%05zu.%s", kind, i, ext);
  return buf;
}

}  // namespace

const char* to_string(VariableMode mode) {
  return mode == VariableMode::kAdditiveBias ? "additive_bias" : "multiplicative_gust";
}

VariableMode variable_mode_from_string(const std::string& text) {
  if (text == "additive_bias") return VariableMode::kAdditiveBias;
  if (text == "multiplicative_gust") return VariableMode::kMultiplicativeGust;
  throw std::invalid_argument("unknown variable_mode '" + text + "' (expected additive_bias or multiplicative_gust)");
}

void SyntheticScenario::validate() const {
  if (obs_noise_std < 0.0) throw std::invalid_argument("scenario: obs_noise_std must be >= 0");
  if (n_bumps < 1) throw std::invalid_argument("scenario: n_bumps must be >= 1");
  if (n_smooth_bumps < 0) throw std::invalid_argument("scenario: n_smooth_bumps must be >= 0");
  if (n_stations < 1) throw std::invalid_argument("scenario: n_stations must be >= 1");
  if (terrain_sigma_min <= 0.0 || terrain_sigma_max < terrain_sigma_min) throw std::invalid_argument("scenario: bad terrain sigma range");
  if (terrain_amp_max < terrain_amp_min) throw std::invalid_argument("scenario: bad terrain amplitude range");
  if (n_smooth_bumps > 0 && (smooth_sigma_min <= 0.0 || smooth_sigma_max < smooth_sigma_min)) {
    throw std::invalid_argument("scenario: bad smooth sigma range");
  }
  if (input_blur_cells < 0.0) throw std::invalid_argument("scenario: input_blur_cells must be >= 0");
  if (station_margin_cells < 0.0) throw std::invalid_argument("scenario: station_margin_cells must be >= 0");
  GridGeometry::from_bbox(bbox, resolution);
}

Oracle::Oracle(const SyntheticScenario& scenario) : scenario_(scenario) {
  scenario_.validate();
  const auto& b = scenario_.bbox;
  auto rng = stream(scenario_.seed, 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int k = 0; k < scenario_.n_bumps; ++k) {
    GaussianBump g{};
    g.amplitude = scenario_.terrain_amp_min + (scenario_.terrain_amp_max - scenario_.terrain_amp_min) * u01(rng);
    g.lat = b.lat_min + b.lat_span() * u01(rng);
    g.lon = b.lon_min + b.lon_span() * u01(rng);
    g.sigma = scenario_.terrain_sigma_min + (scenario_.terrain_sigma_max - scenario_.terrain_sigma_min) * u01(rng);
    terrain_.push_back(g);
  }
  auto rng2 = stream(scenario_.seed, 2);
  for (int k = 0; k < scenario_.n_smooth_bumps; ++k) {
    GaussianBump g{};
    g.amplitude = scenario_.smooth_amp * (2.0 * u01(rng2) - 1.0);
    g.lat = b.lat_min + b.lat_span() * u01(rng2);
    g.lon = b.lon_min + b.lon_span() * u01(rng2);
    g.sigma = scenario_.smooth_sigma_min + (scenario_.smooth_sigma_max - scenario_.smooth_sigma_min) * u01(rng2);
    background_.push_back(g);
  }
}

double Oracle::elev(double lat, double lon) const { return bump_sum(terrain_, lat, lon); }

std::array<double, 2> Oracle::elev_gradient(double lat, double lon) const {
  std::array<double, 2> g{0.0, 0.0};
  for (const auto& b : terrain_) {
    const double dl = lat - b.lat, dn = lon - b.lon;
    const double s2 = b.sigma * b.sigma;
    const double e = b.amplitude * std::exp(-(dl * dl + dn * dn) / (2.0 * s2));
    g[0] -= e * dl / s2;
    g[1] -= e * dn / s2;
  }
  return g;
}

double Oracle::slope(double lat, double lon) const {
  const auto g = elev_gradient(lat, lon);
  return std::hypot(g[0], g[1]) / 1000.0;
}

double Oracle::smooth_field(double lat, double lon) const {
  return scenario_.base_level + bump_sum(background_, lat, lon);
}

double Oracle::y_true(double lat, double lon, double t_hours) const {
  return scenario_.diurnal_amp * std::sin(2.0 * std::numbers::pi * t_hours / 24.0) + smooth_field(lat, lon) +
         scenario_.lapse_rate * elev(lat, lon) / 1000.0;
}

double Oracle::bias(double lat, double lon) const {
  const auto& c = scenario_.bias_coeffs;
  return c[0] + c[1] * elev(lat, lon) / 1000.0 + c[2] * slope(lat, lon);
}

double Oracle::gust_factor(double lat, double lon) const { return 1.3 + 0.2 * std::tanh(slope(lat, lon)); }

double Oracle::input_value(double lat, double lon, double t_hours) const {
  if (scenario_.mode == VariableMode::kAdditiveBias) return y_true(lat, lon, t_hours) + bias(lat, lon);
  return gust_factor(lat, lon) * y_true(lat, lon, t_hours);
}

std::vector<StationSite> sample_stations(const SyntheticScenario& scenario, int n, double margin_cells) {
  if (n < 1) throw std::invalid_argument("sample_stations: n must be >= 1");
  const Oracle oracle(scenario);
  const auto geom = GridGeometry::from_bbox(scenario.bbox, scenario.resolution);
  const double margin = margin_cells * scenario.resolution;
  const BBox& b = scenario.bbox;
  if (b.lat_span() <= 2.0 * margin || b.lon_span() <= 2.0 * margin) {
    throw std::invalid_argument("sample_stations: margin leaves no interior");
  }
  auto rng = stream(scenario.seed, 3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<StationSite> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double lat = b.lat_min + margin + (b.lat_span() - 2.0 * margin) * u01(rng);
      const double lon = b.lon_min + margin + (b.lon_span() - 2.0 * margin) * u01(rng);
      if (!b.strictly_contains(lat, lon)) continue;
      const double fr = geom.frac_row(lat), fc = geom.frac_col(lon);
      const double dr = fr - std::round(fr), dc = fc - std::round(fc);
      // Distance to the nearest cell centre, in cells.
      if (std::hypot(dr, dc) < 0.1) continue;
      char id[16];
      std::snprintf(id, sizeof(id), "S%03d", i);
      out.push_back({id, lat, lon, oracle.elev(lat, lon)});
      placed = true;
    }
    if (!placed) throw std::runtime_error("sample_stations: could not place station " + std::to_string(i) + " off-grid after 1000 draws");
  }
  return out;
}

SyntheticSample generate_sample(const SyntheticScenario& scenario, const Oracle& oracle, const CoordinateGrid& grid,
                                const std::vector<StationSite>& stations, std::int64_t t_hours) {
  const double t = static_cast<double>(t_hours);
  const std::size_t n = grid.lat.size();
  std::vector<double> input(n), truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    input[i] = oracle.input_value(grid.lat[i], grid.lon[i], t);
    truth[i] = oracle.y_true(grid.lat[i], grid.lon[i], t);
  }
  if (scenario.input_blur_cells > 0.0) {
    input = gaussian_blur(input, grid.geometry.height, grid.geometry.width, scenario.input_blur_cells);
  }
  std::vector<Station> obs;
  obs.reserve(stations.size());
  for (std::size_t k = 0; k < stations.size(); ++k) {
    const auto& s = stations[k];
    if (!scenario.bbox.strictly_contains(s.lat, s.lon)) {
      throw std::invalid_argument("generate_sample: station '" + s.id + "' outside bbox");
    }
    double value = oracle.y_true(s.lat, s.lon, t);
    if (scenario.obs_noise_std > 0.0) {
      auto rng = noise_stream(scenario.seed, t_hours, k);
      std::normal_distribution<double> noise(0.0, scenario.obs_noise_std);
      value += noise(rng);
    }
    obs.push_back({s.id, s.lat, s.lon, s.elevation, value, t_hours});
  }
  return SyntheticSample{GriddedField(grid.geometry, scenario.variable, t_hours, std::move(input)),
                         GriddedField(grid.geometry, scenario.variable, t_hours, std::move(truth)),
                         StationSet(std::move(obs))};
}

TopographyGrid make_dem(const Oracle& oracle, const BBox& bbox, double resolution) {
  const auto grid = make_coordinate_grid(bbox, resolution);
  std::vector<double> v(grid.lat.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = oracle.elev(grid.lat[i], grid.lon[i]);
  return TopographyGrid(GriddedField(grid.geometry, "elevation", 0, std::move(v)));
}

std::array<SplitRange, 3> split_ranges(std::size_t n_samples, const SplitFractions& f) {
  if (f.train < 0.0 || f.val < 0.0 || f.test < 0.0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n_samples)));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n_samples)));
  if (n_train + n_val > n_samples) throw std::invalid_argument("split fractions exceed sample count");
  return {SplitRange{0, n_train}, SplitRange{n_train, n_train + n_val}, SplitRange{n_train + n_val, n_samples}};
}

DatasetManifest generate_dataset(const SyntheticScenario& scenario, std::size_t n_samples, const SplitFractions& fractions,
                                 const std::filesystem::path& out_dir) {
  const auto splits = split_ranges(n_samples, fractions);
  const Oracle oracle(scenario);
  std::filesystem::create_directories(out_dir / "samples");
  const auto grid = make_coordinate_grid(scenario.bbox, scenario.resolution);
  const auto stations = sample_stations(scenario, scenario.n_stations, scenario.station_margin_cells);

  DatasetManifest m;
  m.scenario = scenario;
  m.train = splits[0];
  m.val = splits[1];
  m.test = splits[2];

  std::vector<double> train_values;
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto sample = generate_sample(scenario, oracle, grid, stations, static_cast<std::int64_t>(i));
    SampleEntry e{static_cast<std::int64_t>(i), sample_name("input", i, "nfg"), sample_name("truth", i, "nfg"),
                  sample_name("stations", i, "csv")};
    write_field(sample.input, out_dir / e.input);
    write_field(sample.truth, out_dir / e.truth);
    write_stations(sample.obs, out_dir / e.stations);
    if (i >= m.train.begin && i < m.train.end) {
      // Statistics from the stored float32 payload, as training will see it.
      for (double v : sample.input.values()) train_values.push_back(static_cast<float>(v));
    }
    m.samples.push_back(std::move(e));
  }
  if (train_values.empty()) throw std::invalid_argument("generate_dataset: training split is empty");

  const int factors[] = {1, 2, 4};
  for (int f : factors) {
    const double res = scenario.resolution / f;
    const auto dem = make_dem(oracle, scenario.bbox, res);
    DemEntry d{res, "dem_r" + std::to_string(f) + ".nfg"};
    write_field(dem.field(), out_dir / d.path);
    m.dems.push_back(std::move(d));
  }
  const auto base_dem = read_field(out_dir / m.dems.front().path);
  m.variable_stats = compute_norm_stats(scenario.variable, train_values);
  m.elevation_stats = compute_norm_stats("elevation", base_dem.values());
  write_norm_stats({m.variable_stats, m.elevation_stats}, out_dir / "norm.csv");
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j;
  j["format"] = "kani-dataset";
  j["version"] = 1;
  j["scenario"] = scenario_to_json(m.scenario);
  j["splits"] = {{"train", {m.train.begin, m.train.end}}, {"val", {m.val.begin, m.val.end}}, {"test", {m.test.begin, m.test.end}}};
  json samples = json::array();
  for (const auto& s : m.samples) samples.push_back({{"time", s.time}, {"input", s.input}, {"truth", s.truth}, {"stations", s.stations}});
  j["samples"] = samples;
  json dems = json::array();
  for (const auto& d : m.dems) dems.push_back({{"resolution", d.resolution}, {"path", d.path}});
  j["dems"] = dems;
  j["norm_stats"] = json::array({{{"variable", m.variable_stats.variable}, {"mean", m.variable_stats.mean}, {"std", m.variable_stats.std}},
                                 {{"variable", m.elevation_stats.variable}, {"mean", m.elevation_stats.mean}, {"std", m.elevation_stats.std}}});
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kOpen, "cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::kOpen, "cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
    if (j.at("format") != "kani-dataset" || j.at("version") != 1) throw IoError(IoErrc::kBadMagic, path.string() + ": not a kani dataset manifest");
    DatasetManifest m;
    m.scenario = scenario_from_json(j.at("scenario"));
    auto range = [&](const char* key) {
      const auto& r = j.at("splits").at(key);
      return SplitRange{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
    };
    m.train = range("train");
    m.val = range("val");
    m.test = range("test");
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("time").get<std::int64_t>(), s.at("input").get<std::string>(), s.at("truth").get<std::string>(),
                           s.at("stations").get<std::string>()});
    }
    for (const auto& d : j.at("dems")) m.dems.push_back({d.at("resolution").get<double>(), d.at("path").get<std::string>()});
    const auto& ns = j.at("norm_stats");
    m.variable_stats = {ns.at(0).at("variable").get<std::string>(), ns.at(0).at("mean").get<double>(), ns.at(0).at("std").get<double>()};
    m.elevation_stats = {ns.at(1).at("variable").get<std::string>(), ns.at(1).at("mean").get<double>(), ns.at(1).at("std").get<double>()};
    return m;
  } catch (const json::exception& e) {
    throw IoError(IoErrc::kParse, path.string() + ": " + e.what());
  }
}

}  // namespace kani

namespace kani {
namespace {

std::array<double, 2> range_of(const KeyValueConfig& kv, const char* key, double lo, double hi) {
  const auto v = kv.get_doubles(key, {lo, hi});
  if (v.size() != 2) throw std::invalid_argument(std::string("config key '") + key + "' needs 2 values");
  return {v[0], v[1]};
}

}  // namespace

SyntheticScenario scenario_from_config(const KeyValueConfig& kv) {
  SyntheticScenario s;
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(s.seed)));
  s.variable = kv.get_string("variable", s.variable);
  const auto b = kv.get_doubles("bbox", {s.bbox.lat_min, s.bbox.lat_max, s.bbox.lon_min, s.bbox.lon_max});
  if (b.size() != 4) throw std::invalid_argument("config key 'bbox' needs 4 values");
  s.bbox = {b[0], b[1], b[2], b[3]};
  if (!(s.bbox.lat_max > s.bbox.lat_min) || !(s.bbox.lon_max > s.bbox.lon_min)) throw std::invalid_argument("config key 'bbox': empty box");
  s.resolution = kv.get_double("resolution", s.resolution);
  s.n_stations = static_cast<int>(kv.get_int("n_stations", s.n_stations));
  s.station_margin_cells = kv.get_double("station_margin_cells", s.station_margin_cells);
  s.n_bumps = static_cast<int>(kv.get_int("n_bumps", s.n_bumps));
  {
    const auto r = range_of(kv, "terrain_amp", s.terrain_amp_min, s.terrain_amp_max);
    s.terrain_amp_min = r[0];
    s.terrain_amp_max = r[1];
  }
  {
    const auto r = range_of(kv, "terrain_sigma", s.terrain_sigma_min, s.terrain_sigma_max);
    s.terrain_sigma_min = r[0];
    s.terrain_sigma_max = r[1];
  }
  s.n_smooth_bumps = static_cast<int>(kv.get_int("n_smooth_bumps", s.n_smooth_bumps));
  s.smooth_amp = kv.get_double("smooth_amp", s.smooth_amp);
  {
    const auto r = range_of(kv, "smooth_sigma", s.smooth_sigma_min, s.smooth_sigma_max);
    s.smooth_sigma_min = r[0];
    s.smooth_sigma_max = r[1];
  }
  s.base_level = kv.get_double("base_level", s.base_level);
  s.lapse_rate = kv.get_double("lapse_rate", s.lapse_rate);
  const auto bc = kv.get_doubles("bias_coeffs", {s.bias_coeffs[0], s.bias_coeffs[1], s.bias_coeffs[2]});
  if (bc.size() != 3) throw std::invalid_argument("config key 'bias_coeffs' needs 3 values");
  s.bias_coeffs = {bc[0], bc[1], bc[2]};
  s.obs_noise_std = kv.get_double("obs_noise_std", s.obs_noise_std);
  s.diurnal_amp = kv.get_double("diurnal_amp", s.diurnal_amp);
  s.mode = variable_mode_from_string(kv.get_string("variable_mode", to_string(s.mode)));
  s.input_blur_cells = kv.get_double("input_blur_cells", s.input_blur_cells);
  s.validate();
  return s;
}

}  // namespace kani
