#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tcace/params.hpp"

namespace tcace {

struct Schedule {
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 20;
  double base_lr = 1e-4;

  void validate() const;
};

// Constant base_lr during warmup, then base_lr * (1 + cos(pi * (e - w) / (E - w))) / 2.
double lr_at(std::size_t epoch, const Schedule& schedule);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig config = {});

  // grads[i] must match params[i] in size. Throws NumericalError on a
  // non-finite gradient before touching any parameter.
  void step(std::span<const std::vector<double>> grads, double lr);

  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace tcace
