#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kani/grid.hpp"
#include "kani/model.hpp"
#include "kani/synth.hpp"

namespace kani {

struct Sample {
  std::int64_t time = 0;
  GriddedField input;
  GriddedField truth;
  StationSet obs;
};

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
Split split_from_string(const std::string& text);

struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<Sample> samples;
  TopographySet topo;
  Normalizer normalizer;

  std::span<const Sample> split(Split s) const;
  std::size_t field_height() const { return samples.front().input.height(); }
  std::size_t field_width() const { return samples.front().input.width(); }
};

// Reads manifest.json, every sample, the DEMs and norm.csv. Stations must lie
// strictly inside the scenario bbox.
Dataset load_dataset(const std::filesystem::path& dir);

// Deterministic spatial holdout: round(frac * n) station ids chosen by a
// seeded shuffle of the ids of `stations`.
std::set<std::string> holdout_station_ids(const StationSet& stations, double frac, std::uint64_t seed);

// Stations whose id is (keep_listed) or is not (!keep_listed) in `ids`.
StationSet filter_stations(const StationSet& stations, const std::set<std::string>& ids, bool keep_listed);

}  // namespace kani
