#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "kani/autodiff.hpp"

namespace kani::ops {

// y = x W^T + b for x [N x in], W [out x in], b [out] (b may be undefined).
// Both x and W are differentiable, so W may itself be a generated tensor.
Var linear(const Var& x, const Var& w, const Var& b = Var());

// [m x k] * [k x n]; gradients reach both operands.
Var matmul(const Var& a, const Var& b);

// x [C x H x W], w [O x C x K x K], b [O]; odd K, zero "same" padding.
// stride 2 halves each spatial axis (rounding up).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride);

// x [C x L], w [O x C x K], b [O]; stride 1, odd K, zero "same" padding.
Var conv1d(const Var& x, const Var& w, const Var& b);

// relu'(0) = 0.
Var relu(const Var& x);
Var silu(const Var& x);

// Normalizes each row of x [N x D], then applies per-column scale and shift.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);

Var transpose(const Var& x);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var reshape(const Var& x, Shape shape);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);

Var sum(const Var& x);
Var mean(const Var& x);
// mean((a - b)^2) over all elements.
Var mse(const Var& a, const Var& b);

// Each output is a fixed 4-term weighted sum of entries of the flattened input.
struct GatherStencil {
  std::vector<std::array<std::uint32_t, 4>> index;
  std::vector<std::array<double, 4>> weight;

  std::size_t size() const { return index.size(); }
  void push_back(const std::array<std::uint32_t, 4>& idx, const std::array<double, 4>& w) {
    index.push_back(idx);
    weight.push_back(w);
  }
  void append(const GatherStencil& other);
};

Var gather(const Var& x, const GatherStencil& stencil);
std::vector<double> apply_stencil(std::span<const double> x, const GatherStencil& stencil);

}  // namespace kani::ops
