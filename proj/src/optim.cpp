#include "kani/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kani {

Adam::Adam(std::vector<NamedVar> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape(), 0.0);
    v_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    if (!p.var.node()->has_grad()) continue;
    // inf * 0 and NaN * 0 are NaN, so one pass flags any non-finite entry.
    double probe = 0.0;
    for (double g : p.var.node()->grad.values()) probe += g * 0.0;
    if (std::isnan(probe)) throw NumericalError("adam: non-finite gradient in parameter '" + p.name + "'");
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double step = lr / (1.0 - std::pow(b1, static_cast<double>(t_)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(t_)));
  const double eps = options_.eps;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node* node = params_[i].var.node();
    const std::size_t n = node->value.size();
    double* __restrict value = params_[i].var.mutable_value().data();
    double* __restrict m = m_[i].data();
    double* __restrict v = v_[i].data();
    if (node->has_grad()) {
      const double* __restrict g = node->grad.data();
      for (std::size_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
        value[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j];
        v[j] = b2 * v[j];
        value[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

LrSchedule::LrSchedule(double base_lr, std::vector<int> milestones, double factor)
    : base_lr_(base_lr), milestones_(std::move(milestones)), factor_(factor) {
  for (std::size_t i = 1; i < milestones_.size(); ++i) {
    if (milestones_[i] <= milestones_[i - 1]) throw std::invalid_argument("LrSchedule: milestones must be strictly increasing");
  }
}

double LrSchedule::lr_at(int epoch) const {
  if (epoch < 0) throw std::invalid_argument("LrSchedule: negative epoch");
  const auto passed = std::count_if(milestones_.begin(), milestones_.end(), [epoch](int m) { return m <= epoch; });
  return base_lr_ * std::pow(factor_, static_cast<double>(passed));
}

}  // namespace kani
