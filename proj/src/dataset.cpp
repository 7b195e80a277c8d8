#include "kani/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "kani/gridio.hpp"

namespace kani {

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + text + "' (expected train, val or test)");
}

std::span<const Sample> Dataset::split(Split s) const {
  const SplitRange& r = s == Split::kTrain ? manifest.train : s == Split::kVal ? manifest.val : manifest.test;
  return std::span<const Sample>(samples).subspan(r.begin, r.size());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.root = dir;
  ds.manifest = read_manifest(dir / "manifest.json");
  const auto& m = ds.manifest;
  if (m.samples.empty()) throw IoError(IoErrc::kBadHeader, dir.string() + ": dataset has no samples");
  if (m.test.end != m.samples.size()) throw IoError(IoErrc::kBadHeader, dir.string() + ": split ranges do not cover the samples");
  for (const auto& e : m.samples) {
    auto input = read_field(dir / e.input);
    auto truth = read_field(dir / e.truth);
    auto obs = read_stations(dir / e.stations, m.scenario.bbox);
    if (!(input.geometry() == truth.geometry())) throw IoError(IoErrc::kShapeMismatch, e.truth + ": grid differs from " + e.input);
    if (!ds.samples.empty() && !(input.geometry() == ds.samples.front().input.geometry())) {
      throw IoError(IoErrc::kShapeMismatch, e.input + ": grid differs from the first sample");
    }
    ds.samples.push_back(Sample{e.time, std::move(input), std::move(truth), std::move(obs)});
  }
  std::vector<TopographyGrid> dems;
  for (const auto& d : m.dems) dems.emplace_back(read_field(dir / d.path));
  ds.topo = TopographySet(std::move(dems));

  const auto stats = read_norm_stats(dir / "norm.csv");
  auto find = [&](const std::string& name) {
    for (const auto& s : stats) {
      if (s.variable == name) return s;
    }
    throw IoError(IoErrc::kBadHeader, (dir / "norm.csv").string() + ": no statistics for '" + name + "'");
  };
  ds.normalizer.variable = find(m.scenario.variable);
  ds.normalizer.elevation = find("elevation");
  ds.normalizer.bbox = m.scenario.bbox;
  ds.normalizer.train_resolution = m.scenario.resolution;
  return ds;
}

std::set<std::string> holdout_station_ids(const StationSet& stations, double frac, std::uint64_t seed) {
  if (!(frac >= 0.0 && frac < 1.0)) throw std::invalid_argument("holdout fraction must be in [0, 1)");
  std::vector<std::string> ids;
  for (const auto& s : stations.stations()) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the library's shuffle.
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  }
  const auto n = static_cast<std::size_t>(std::llround(frac * static_cast<double>(ids.size())));
  return std::set<std::string>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
}

StationSet filter_stations(const StationSet& stations, const std::set<std::string>& ids, bool keep_listed) {
  std::vector<Station> out;
  for (const auto& s : stations.stations()) {
    if ((ids.count(s.id) != 0) == keep_listed) out.push_back(s);
  }
  return StationSet(std::move(out));
}

}  // namespace kani
