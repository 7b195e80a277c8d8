#include "kani/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace kani {

std::size_t cells_along(double span, double resolution) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw std::invalid_argument("grid: resolution must be positive, got " + std::to_string(resolution));
  }
  if (!(span > 0.0)) throw std::invalid_argument("grid: bbox span must be positive");
  const double ratio = span / resolution;
  const double n = std::round(ratio);
  if (std::abs(ratio - n) > 1e-9) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "grid: resolution " << resolution << " does not divide span " << span << " (ratio " << ratio << ")";
    throw std::invalid_argument(msg.str());
  }
  return static_cast<std::size_t>(n);
}

GridGeometry GridGeometry::from_bbox(const BBox& bbox, double resolution) {
  GridGeometry g;
  g.bbox = bbox;
  g.resolution = resolution;
  g.height = cells_along(bbox.lat_span(), resolution);
  g.width = cells_along(bbox.lon_span(), resolution);
  return g;
}

GriddedField::GriddedField(const BBox& bbox, double resolution, std::string variable, std::int64_t time,
                           std::vector<double> values)
    : GriddedField(GridGeometry::from_bbox(bbox, resolution), std::move(variable), time, std::move(values)) {}

GriddedField::GriddedField(const GridGeometry& geometry, std::string variable, std::int64_t time,
                           std::vector<double> values)
    : geom_(geometry), variable_(std::move(variable)), time_(time), values_(std::move(values)) {
  if (geom_.height < 2 || geom_.width < 2) {
    throw std::invalid_argument("GriddedField: need at least 2x2 cells, got " + std::to_string(geom_.height) + "x" +
                                std::to_string(geom_.width));
  }
  if (values_.size() != geom_.cells()) {
    throw std::invalid_argument("GriddedField: " + std::to_string(values_.size()) + " values for a " +
                                std::to_string(geom_.height) + "x" + std::to_string(geom_.width) + " grid");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("GriddedField: non-finite value in '" + variable_ + "'");
  }
}

std::vector<LatLon> CoordinateGrid::points() const {
  std::vector<LatLon> pts(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) pts[i] = {lat[i], lon[i]};
  return pts;
}

CoordinateGrid make_coordinate_grid(const BBox& bbox, double resolution) {
  CoordinateGrid grid;
  grid.geometry = GridGeometry::from_bbox(bbox, resolution);
  const auto& g = grid.geometry;
  grid.lat.resize(g.cells());
  grid.lon.resize(g.cells());
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) {
      grid.lat[r * g.width + c] = g.cell_lat(r);
      grid.lon[r * g.width + c] = g.cell_lon(c);
    }
  }
  return grid;
}

TopographyGrid::TopographyGrid(GriddedField elevation) : elevation_(std::move(elevation)) {}

StationSet::StationSet(std::vector<Station> stations) : stations_(std::move(stations)) {
  if (stations_.empty()) throw std::invalid_argument("StationSet: at least one station required");
  std::set<std::string> ids;
  for (const auto& s : stations_) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("StationSet: duplicate station id '" + s.id + "'");
    if (!std::isfinite(s.lat) || !std::isfinite(s.lon) || !std::isfinite(s.elevation) || !std::isfinite(s.value)) {
      throw std::invalid_argument("StationSet: non-finite field in station '" + s.id + "'");
    }
  }
}

std::vector<LatLon> StationSet::points() const {
  std::vector<LatLon> pts;
  pts.reserve(stations_.size());
  for (const auto& s : stations_) pts.push_back({s.lat, s.lon});
  return pts;
}

std::vector<double> StationSet::values() const {
  std::vector<double> v;
  v.reserve(stations_.size());
  for (const auto& s : stations_) v.push_back(s.value);
  return v;
}

std::string StationSet::first_outside(const BBox& bbox) const {
  for (const auto& s : stations_) {
    if (!bbox.strictly_contains(s.lat, s.lon)) return s.id;
  }
  return {};
}

namespace {

void check_stats(const NormStats& stats) {
  if (!(stats.std > 0.0)) throw std::invalid_argument("NormStats '" + stats.variable + "': std must be positive");
}

// Fractional grid position snapped onto a node when within 1e-9 cells of it,
// so queries at cell centres select that cell exactly.
double snap(double f) {
  const double r = std::round(f);
  return std::abs(f - r) < 1e-9 ? r : f;
}

std::string clamp_warning(std::size_t i, const LatLon& p) {
  std::ostringstream msg;
  msg.precision(10);
  msg << "point " << i << " (" << p.lat << ", " << p.lon << ") outside interpolation hull; clamped";
  return msg.str();
}

}  // namespace

std::vector<double> normalize(std::span<const double> values, const NormStats& stats) {
  check_stats(stats);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - stats.mean) / stats.std;
  return out;
}

std::vector<double> denormalize(std::span<const double> values, const NormStats& stats) {
  check_stats(stats);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * stats.std + stats.mean;
  return out;
}

NormStats compute_norm_stats(std::string variable, std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("compute_norm_stats: no values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return NormStats{std::move(variable), mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

ops::GatherStencil bilinear_stencil(const GridGeometry& geom, std::span<const LatLon> points,
                                    std::vector<std::string>* warnings) {
  if (geom.height < 2 || geom.width < 2) throw std::invalid_argument("bilinear_stencil: need at least 2x2 cells");
  const double max_r = static_cast<double>(geom.height - 1);
  const double max_c = static_cast<double>(geom.width - 1);
  ops::GatherStencil st;
  st.index.reserve(points.size());
  st.weight.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double fr = snap(geom.frac_row(points[i].lat));
    double fc = snap(geom.frac_col(points[i].lon));
    if (fr < 0.0 || fr > max_r || fc < 0.0 || fc > max_c || !std::isfinite(fr) || !std::isfinite(fc)) {
      if (warnings) warnings->push_back(clamp_warning(i, points[i]));
      fr = std::clamp(std::isfinite(fr) ? fr : 0.0, 0.0, max_r);
      fc = std::clamp(std::isfinite(fc) ? fc : 0.0, 0.0, max_c);
    }
    const auto r0 = std::min(static_cast<std::size_t>(fr), geom.height - 2);
    const auto c0 = std::min(static_cast<std::size_t>(fc), geom.width - 2);
    const double tr = fr - static_cast<double>(r0);
    const double tc = fc - static_cast<double>(c0);
    const auto base = static_cast<std::uint32_t>(r0 * geom.width + c0);
    const auto w = static_cast<std::uint32_t>(geom.width);
    st.push_back({base, base + 1, base + w, base + w + 1},
                 {(1.0 - tr) * (1.0 - tc), (1.0 - tr) * tc, tr * (1.0 - tc), tr * tc});
  }
  return st;
}

ops::GatherStencil identity_stencil(const GridGeometry& geom) {
  ops::GatherStencil st;
  st.index.reserve(geom.cells());
  st.weight.reserve(geom.cells());
  for (std::uint32_t i = 0; i < geom.cells(); ++i) st.push_back({i, i, i, i}, {1.0, 0.0, 0.0, 0.0});
  return st;
}

InterpResult bilinear_interp(const GriddedField& field, std::span<const LatLon> points) {
  InterpResult res;
  const auto st = bilinear_stencil(field.geometry(), points, &res.warnings);
  res.values = ops::apply_stencil(field.values(), st);
  return res;
}

InterpResult nearest_interp(const GriddedField& field, std::span<const LatLon> points) {
  const auto& geom = field.geometry();
  const double max_r = static_cast<double>(geom.height - 1);
  const double max_c = static_cast<double>(geom.width - 1);
  InterpResult res;
  res.values.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double fr = geom.frac_row(points[i].lat);
    double fc = geom.frac_col(points[i].lon);
    if (fr < 0.0 || fr > max_r || fc < 0.0 || fc > max_c) {
      res.warnings.push_back(clamp_warning(i, points[i]));
      fr = std::clamp(fr, 0.0, max_r);
      fc = std::clamp(fc, 0.0, max_c);
    }
    // ceil(f - 0.5) rounds halves down, giving the lexicographic tie-break.
    const auto r = static_cast<std::size_t>(std::ceil(fr - 0.5));
    const auto c = static_cast<std::size_t>(std::ceil(fc - 0.5));
    res.values.push_back(field(std::min(r, geom.height - 1), std::min(c, geom.width - 1)));
  }
  return res;
}

}  // namespace kani
