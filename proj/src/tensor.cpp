#include "kani/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace kani {
namespace {

// Training allocates and frees multi-megabyte buffers every step. glibc hands
// those to mmap by default, so each step pays for fresh zeroed pages; keep
// them on the heap instead.
#if defined(__GLIBC__)
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not hold " +
                                std::to_string(data_.size()) + " values");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("Tensor::item on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

}  // namespace kani
