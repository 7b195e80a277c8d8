#include "kani/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace kani {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Var()>& fn, std::vector<NamedVar> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) in.var.zero_grad();
  Var out = fn();
  backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.var.grad());
  out = Var();

  auto eval = [&fn]() { return fn().value().item(); };

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& value = inputs[i].var.mutable_value();
    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_elements && idx.size() > options.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry entry;
    entry.name = inputs[i].name;
    for (std::size_t j : idx) {
      const double saved = value[j];
      const double a = analytic[i][j];
      double numeric = 0.0, rel = INFINITY, h = options.h;
      for (int attempt = 0; attempt <= options.refine_steps && !(rel <= options.tol); ++attempt, h /= 10.0) {
        value[j] = saved + h;
        const double fp = eval();
        value[j] = saved - h;
        const double fm = eval();
        value[j] = saved;
        const double n = (fp - fm) / (2.0 * h);
        const double r = std::abs(a - n) / std::max({std::abs(a), std::abs(n), options.floor});
        if (!(r >= rel)) {
          rel = r;
          numeric = n;
        }
      }
      ++entry.checked;
      if (rel > entry.max_rel_error || !std::isfinite(rel)) {
        entry.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        entry.analytic_at_max = a;
        entry.numeric_at_max = numeric;
      }
    }
    entry.passed = entry.max_rel_error <= options.tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace kani
