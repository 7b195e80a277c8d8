#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kani/autodiff.hpp"

namespace kani {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every element; otherwise a seeded sample of this many per input.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
  // An element failing at h is re-measured at h/10, h/100, ... this many
  // times and scored by its best step. A wrong gradient fails at every step;
  // a relu or clamp kink inside [x - h, x + h] only at the larger ones.
  int refine_steps = 3;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. `fn` must rebuild its graph from the leaf variables in
// `inputs` on every call; their values are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Var()>& fn, std::vector<NamedVar> inputs, const GradCheckOptions& options = {});

}  // namespace kani
