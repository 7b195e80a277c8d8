#include "kani/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kani {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::string read_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
  return line;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out << "NFCKPT 1\n" << "records " << records.size() << "\n";
  for (const auto& r : records) {
    if (r.name.empty() || r.name.find_first_of(" \n\t") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid record name '" + r.name + "'");
    }
    out << r.name << ' ' << r.tensor.rank();
    for (std::size_t d : r.tensor.shape()) out << ' ' << d;
    out << '\n';
    out.write(reinterpret_cast<const char*>(r.tensor.data()), static_cast<std::streamsize>(r.tensor.size() * sizeof(double)));
    out << '\n';
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  if (read_line(in, path) != "NFCKPT 1") throw std::runtime_error("checkpoint " + path.string() + ": bad magic or version");
  std::istringstream count_line(read_line(in, path));
  std::string tag;
  std::size_t n = 0;
  if (!(count_line >> tag >> n) || tag != "records") throw std::runtime_error("checkpoint " + path.string() + ": bad record count");

  std::vector<NamedTensor> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream header(read_line(in, path));
    NamedTensor r;
    std::size_t rank = 0;
    if (!(header >> r.name >> rank)) throw std::runtime_error("checkpoint " + path.string() + ": bad record header");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(header >> d)) throw std::runtime_error("checkpoint " + path.string() + ": bad shape for " + r.name);
    }
    std::vector<double> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in || in.get() != '\n') throw std::runtime_error("checkpoint " + path.string() + ": truncated payload for " + r.name);
    r.tensor = Tensor(std::move(shape), std::move(data));
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace kani
