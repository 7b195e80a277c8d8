#include "kani/gridio.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace kani {
namespace {

static_assert(std::endian::native == std::endian::little, "grid payloads assume a little-endian host");

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string header_value(std::istream& in, const std::string& key, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(IoErrc::kBadHeader, path.string() + ": missing '" + key + "' header line");
  const std::string prefix = key + "=";
  if (line.rfind(prefix, 0) != 0) {
    throw IoError(IoErrc::kBadHeader, path.string() + ": expected '" + prefix + "...', got '" + line + "'");
  }
  return line.substr(prefix.size());
}

std::int64_t parse_int(const std::string& text, const std::string& context) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw IoError(IoErrc::kParse, context + ": cannot parse integer '" + text + "'");
  return v;
}

}  // namespace

const char* to_string(IoErrc code) {
  switch (code) {
    case IoErrc::kOpen: return "open";
    case IoErrc::kBadMagic: return "bad-magic";
    case IoErrc::kBadVersion: return "bad-version";
    case IoErrc::kBadHeader: return "bad-header";
    case IoErrc::kShapeMismatch: return "shape-mismatch";
    case IoErrc::kNonFinite: return "non-finite";
    case IoErrc::kOutOfDomain: return "out-of-domain";
    case IoErrc::kDuplicateId: return "duplicate-id";
    case IoErrc::kParse: return "parse";
    case IoErrc::kWrite: return "write";
  }
  return "unknown";
}

IoError::IoError(IoErrc code, const std::string& what)
    : std::runtime_error(std::string("[") + to_string(code) + "] " + what), code_(code) {}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& context) {
  double v = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  while (begin < end && *begin == ' ') ++begin;
  if (begin < end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw IoError(IoErrc::kParse, context + ": cannot parse number '" + text + "'");
  return v;
}

GriddedField read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrc::kOpen, "cannot open grid file " + path.string());
  std::string line;
  std::getline(in, line);
  {
    std::istringstream magic(line);
    std::string tag;
    int version = 0;
    magic >> tag >> version;
    if (tag != "NFGRID") throw IoError(IoErrc::kBadMagic, path.string() + ": not an NFGRID file");
    if (version != 1) throw IoError(IoErrc::kBadVersion, path.string() + ": unsupported NFGRID version " + std::to_string(version));
  }
  const std::string ctx = path.string();
  const std::string var = header_value(in, "var", path);
  const std::int64_t time = parse_int(header_value(in, "time", path), ctx);

  BBox bbox;
  {
    std::istringstream s(header_value(in, "bbox", path));
    std::string a, b, c, d;
    if (!(s >> a >> b >> c >> d)) throw IoError(IoErrc::kBadHeader, ctx + ": bbox needs four numbers");
    bbox = {parse_double(a, ctx), parse_double(b, ctx), parse_double(c, ctx), parse_double(d, ctx)};
  }
  const double res = parse_double(header_value(in, "res", path), ctx);
  std::size_t h = 0, w = 0;
  {
    std::istringstream s(header_value(in, "shape", path));
    std::string a, b;
    if (!(s >> a >> b)) throw IoError(IoErrc::kBadHeader, ctx + ": shape needs two integers");
    h = static_cast<std::size_t>(parse_int(a, ctx));
    w = static_cast<std::size_t>(parse_int(b, ctx));
  }

  GridGeometry geom;
  try {
    geom = GridGeometry::from_bbox(bbox, res);
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrc::kBadHeader, ctx + ": " + e.what());
  }
  if (geom.height != h || geom.width != w) {
    throw IoError(IoErrc::kShapeMismatch, ctx + ": shape " + std::to_string(h) + "x" + std::to_string(w) +
                                              " inconsistent with bbox/res (" + std::to_string(geom.height) + "x" +
                                              std::to_string(geom.width) + ")");
  }

  std::vector<float> payload(h * w);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != payload.size() * sizeof(float)) {
    throw IoError(IoErrc::kShapeMismatch, ctx + ": header declares " + std::to_string(h) + "x" + std::to_string(w) +
                                              " values but payload holds " + std::to_string(got / sizeof(float)));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(IoErrc::kShapeMismatch, ctx + ": payload longer than declared " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<double> values(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) throw IoError(IoErrc::kNonFinite, ctx + ": non-finite value at index " + std::to_string(i));
    values[i] = payload[i];
  }
  return GriddedField(geom, var, time, std::move(values));
}

void write_field(const GriddedField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrc::kOpen, "cannot open " + path.string() + " for writing");
  const auto& b = field.bbox();
  out << "NFGRID 1\n"
      << "var=" << field.variable() << "\n"
      << "time=" << field.time() << "\n"
      << "bbox=" << format_double(b.lat_min) << ' ' << format_double(b.lat_max) << ' ' << format_double(b.lon_min) << ' '
      << format_double(b.lon_max) << "\n"
      << "res=" << format_double(field.resolution()) << "\n"
      << "shape=" << field.height() << ' ' << field.width() << "\n";
  std::vector<float> payload(field.values().begin(), field.values().end());
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) throw IoError(IoErrc::kNonFinite, path.string() + ": value " + std::to_string(i) + " overflows float32");
  }
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError(IoErrc::kWrite, "write failed for " + path.string());
}

StationSet read_stations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::kOpen, "cannot open station file " + path.string());
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "id,lat,lon,elev_m,value,time") {
    throw IoError(IoErrc::kBadHeader, path.string() + ": expected header 'id,lat,lon,elev_m,value,time'");
  }
  std::vector<Station> stations;
  std::set<std::string> ids;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 6) throw IoError(IoErrc::kParse, ctx + ": expected 6 columns, got " + std::to_string(cells.size()));
    Station s;
    s.id = cells[0];
    s.lat = parse_double(cells[1], ctx);
    s.lon = parse_double(cells[2], ctx);
    s.elevation = parse_double(cells[3], ctx);
    s.value = parse_double(cells[4], ctx);
    s.time = parse_int(cells[5], ctx);
    if (!std::isfinite(s.lat) || !std::isfinite(s.lon) || !std::isfinite(s.elevation) || !std::isfinite(s.value)) {
      throw IoError(IoErrc::kNonFinite, ctx + ": non-finite value for station '" + s.id + "'");
    }
    if (!ids.insert(s.id).second) throw IoError(IoErrc::kDuplicateId, ctx + ": duplicate station id '" + s.id + "'");
    stations.push_back(std::move(s));
  }
  if (stations.empty()) throw IoError(IoErrc::kParse, path.string() + ": no stations");
  return StationSet(std::move(stations));
}

StationSet read_stations(const std::filesystem::path& path, const BBox& bbox) {
  StationSet set = read_stations(path);
  const std::string bad = set.first_outside(bbox);
  if (!bad.empty()) throw IoError(IoErrc::kOutOfDomain, path.string() + ": station '" + bad + "' lies outside the field bbox");
  return set;
}

void write_stations(const StationSet& stations, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kOpen, "cannot open " + path.string() + " for writing");
  out << "id,lat,lon,elev_m,value,time\n";
  for (const auto& s : stations.stations()) {
    out << s.id << ',' << format_double(s.lat) << ',' << format_double(s.lon) << ',' << format_double(s.elevation) << ','
        << format_double(s.value) << ',' << s.time << '\n';
  }
  if (!out) throw IoError(IoErrc::kWrite, "write failed for " + path.string());
}

std::vector<NormStats> read_norm_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrc::kOpen, "cannot open norm stats file " + path.string());
  std::string line;
  std::getline(in, line);
  if (strip_cr(line) != "variable,mean,std") throw IoError(IoErrc::kBadHeader, path.string() + ": expected header 'variable,mean,std'");
  std::vector<NormStats> out;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw IoError(IoErrc::kParse, path.string() + ": expected 3 columns");
    NormStats s{cells[0], parse_double(cells[1], path.string()), parse_double(cells[2], path.string())};
    if (!std::isfinite(s.mean) || !std::isfinite(s.std)) throw IoError(IoErrc::kNonFinite, path.string() + ": non-finite stats");
    if (!(s.std > 0.0)) throw IoError(IoErrc::kParse, path.string() + ": std must be positive for '" + s.variable + "'");
    out.push_back(std::move(s));
  }
  return out;
}

void write_norm_stats(const std::vector<NormStats>& stats, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kOpen, "cannot open " + path.string() + " for writing");
  out << "variable,mean,std\n";
  for (const auto& s : stats) out << s.variable << ',' << format_double(s.mean) << ',' << format_double(s.std) << '\n';
  if (!out) throw IoError(IoErrc::kWrite, "write failed for " + path.string());
}

}  // namespace kani
