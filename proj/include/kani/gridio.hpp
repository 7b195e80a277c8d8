#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "kani/grid.hpp"

namespace kani {

enum class IoErrc {
  kOpen,
  kBadMagic,
  kBadVersion,
  kBadHeader,
  kShapeMismatch,
  kNonFinite,
  kOutOfDomain,
  kDuplicateId,
  kParse,
  kWrite,
};

const char* to_string(IoErrc code);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrc code, const std::string& what);
  IoErrc code() const { return code_; }

 private:
  IoErrc code_;
};

// Grid file: six ASCII header lines
//   NFGRID 1 / var=<id> / time=<hours> / bbox=<latmin> <latmax> <lonmin> <lonmax>
//   res=<degrees> / shape=<h> <w>
// followed by h*w little-endian float32 values, row-major, north row first.
GriddedField read_field(const std::filesystem::path& path);
void write_field(const GriddedField& field, const std::filesystem::path& path);

// Station CSV with header id,lat,lon,elev_m,value,time.
StationSet read_stations(const std::filesystem::path& path);
// Also rejects stations not strictly inside `bbox` (kOutOfDomain).
StationSet read_stations(const std::filesystem::path& path, const BBox& bbox);
void write_stations(const StationSet& stations, const std::filesystem::path& path);

// CSV with header variable,mean,std.
std::vector<NormStats> read_norm_stats(const std::filesystem::path& path);
void write_norm_stats(const std::vector<NormStats>& stats, const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& context);

}  // namespace kani
