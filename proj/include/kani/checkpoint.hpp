#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kani/tensor.hpp"

namespace kani {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Layout: the line "NFCKPT 1", the line "records <n>", then per record the
// line "<name> <rank> <d0> ... <d(rank-1)>" followed by the little-endian
// float64 payload and a newline.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace kani
