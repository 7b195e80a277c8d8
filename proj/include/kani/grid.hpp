#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kani/ops.hpp"

namespace kani {

struct BBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  double lat_span() const { return lat_max - lat_min; }
  double lon_span() const { return lon_max - lon_min; }
  bool strictly_contains(double lat, double lon) const {
    return lat > lat_min && lat < lat_max && lon > lon_min && lon < lon_max;
  }
  bool operator==(const BBox&) const = default;
};

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

// Number of cells along a span; throws std::invalid_argument unless the
// resolution divides the span to within 1e-9 cells.
std::size_t cells_along(double span, double resolution);

// Cell-centred lat-lon raster layout. Row 0 is the northernmost row, column 0
// the westernmost column; storage is row-major.
struct GridGeometry {
  BBox bbox;
  double resolution = 0.0;
  std::size_t height = 0;  // rows (latitude)
  std::size_t width = 0;   // columns (longitude)

  static GridGeometry from_bbox(const BBox& bbox, double resolution);

  std::size_t cells() const { return height * width; }
  double cell_lat(std::size_t row) const { return bbox.lat_max - (static_cast<double>(row) + 0.5) * resolution; }
  double cell_lon(std::size_t col) const { return bbox.lon_min + (static_cast<double>(col) + 0.5) * resolution; }
  // Fractional (row, col) position of a point relative to the cell centres.
  double frac_row(double lat) const { return (bbox.lat_max - 0.5 * resolution - lat) / resolution; }
  double frac_col(double lon) const { return (lon - bbox.lon_min - 0.5 * resolution) / resolution; }
  bool operator==(const GridGeometry&) const = default;
};

class GriddedField {
 public:
  GriddedField(const BBox& bbox, double resolution, std::string variable, std::int64_t time, std::vector<double> values);
  GriddedField(const GridGeometry& geometry, std::string variable, std::int64_t time, std::vector<double> values);

  const GridGeometry& geometry() const { return geom_; }
  const BBox& bbox() const { return geom_.bbox; }
  double resolution() const { return geom_.resolution; }
  std::size_t height() const { return geom_.height; }
  std::size_t width() const { return geom_.width; }
  const std::string& variable() const { return variable_; }
  std::int64_t time() const { return time_; }

  double operator()(std::size_t row, std::size_t col) const { return values_[row * geom_.width + col]; }
  std::span<const double> values() const { return values_; }

 private:
  GridGeometry geom_;
  std::string variable_;
  std::int64_t time_;
  std::vector<double> values_;
};

struct CoordinateGrid {
  GridGeometry geometry;
  std::vector<double> lat;  // height x width
  std::vector<double> lon;  // height x width

  double resolution() const { return geometry.resolution; }
  std::vector<LatLon> points() const;
};

CoordinateGrid make_coordinate_grid(const BBox& bbox, double resolution);

class TopographyGrid {
 public:
  explicit TopographyGrid(GriddedField elevation);

  const GriddedField& field() const { return elevation_; }
  const GridGeometry& geometry() const { return elevation_.geometry(); }
  double resolution() const { return elevation_.resolution(); }

 private:
  GriddedField elevation_;
};

struct Station {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  double elevation = 0.0;  // metres
  double value = 0.0;
  std::int64_t time = 0;
};

class StationSet {
 public:
  // Requires at least one station, unique ids and finite numbers.
  explicit StationSet(std::vector<Station> stations);

  std::size_t size() const { return stations_.size(); }
  const Station& operator[](std::size_t i) const { return stations_[i]; }
  const std::vector<Station>& stations() const { return stations_; }
  std::vector<LatLon> points() const;
  std::vector<double> values() const;

  // Id of the first station not strictly inside `bbox`, or empty.
  std::string first_outside(const BBox& bbox) const;

 private:
  std::vector<Station> stations_;
};

struct NormStats {
  std::string variable;
  double mean = 0.0;
  double std = 1.0;
};

std::vector<double> normalize(std::span<const double> values, const NormStats& stats);
std::vector<double> denormalize(std::span<const double> values, const NormStats& stats);
NormStats compute_norm_stats(std::string variable, std::span<const double> values);

struct InterpResult {
  std::vector<double> values;
  std::vector<std::string> warnings;  // one per point clamped onto the hull
};

// Bilinear weights over the four surrounding cell centres. Points outside the
// hull of cell centres are clamped onto it and reported in `warnings`.
ops::GatherStencil bilinear_stencil(const GridGeometry& geom, std::span<const LatLon> points,
                                    std::vector<std::string>* warnings = nullptr);
// Stencil selecting each cell exactly (weight 1 on the cell itself).
ops::GatherStencil identity_stencil(const GridGeometry& geom);

InterpResult bilinear_interp(const GriddedField& field, std::span<const LatLon> points);
// Nearest cell centre; equidistant ties go to the smaller (row, col).
InterpResult nearest_interp(const GriddedField& field, std::span<const LatLon> points);

}  // namespace kani
