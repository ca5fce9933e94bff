#include "tcace/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace tcace {

void Schedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("schedule: base_lr must be positive");
  if (epochs == 0) throw ConfigError("schedule: epochs must be positive");
  if (warmup_epochs >= epochs) {
    throw ConfigError("schedule: warmup_epochs (" + std::to_string(warmup_epochs) + ") must be below epochs (" +
                      std::to_string(epochs) + ")");
  }
}

double lr_at(std::size_t epoch, const Schedule& schedule) {
  schedule.validate();
  if (epoch >= schedule.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.epochs) +
                        ")");
  }
  if (epoch < schedule.warmup_epochs) return schedule.base_lr;
  const double progress = static_cast<double>(epoch - schedule.warmup_epochs) /
                          static_cast<double>(schedule.epochs - schedule.warmup_epochs);
  return schedule.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(std::span<const std::vector<double>> grads, double lr) {
  if (grads.size() != params_.size()) {
    throw ContractError("adam: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params_[i].size()) {
      throw ContractError("adam: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                          " values for " + std::to_string(params_[i].size()) + " parameters");
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NumericalError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
    }
  }
}

}  // namespace tcace
