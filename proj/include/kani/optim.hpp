#pragma once

#include <vector>

#include "kani/autodiff.hpp"

namespace kani {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps).
class Adam {
 public:
  Adam(std::vector<NamedVar> params, AdamOptions options = {});

  // Applies one update using the gradients currently accumulated on the
  // parameters. Throws NumericalError naming the first non-finite gradient.
  void step(double lr);
  void step() { step(options_.lr); }
  void zero_grad();

  long steps() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<NamedVar> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

// Step decay: base_lr * factor^(number of milestones <= epoch).
class LrSchedule {
 public:
  LrSchedule(double base_lr, std::vector<int> milestones, double factor = 0.5);

  double lr_at(int epoch) const;
  double base_lr() const { return base_lr_; }
  const std::vector<int>& milestones() const { return milestones_; }

 private:
  double base_lr_;
  std::vector<int> milestones_;
  double factor_;
};

}  // namespace kani
