#pragma once

// Temporal classification consistency: a small signal-intensity predictor
// f_theta(x_NC latent, t_i), a threshold labeling rule, and the squared-error
// coupling between per-phase classification probabilities and those labels.

#include <array>
#include <random>
#include <span>

#include "tcace/params.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

struct SignalNetConfig {
  std::size_t feature_width = 64;  // pooled encoder feature width (D)
  std::size_t latent_width = 256;  // C
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  double tau = 0.5;

  void validate() const;
};

class SignalNet {
 public:
  SignalNet(const SignalNetConfig& config, ParamStore& params, std::mt19937_64& rng);

  // Pooled {D} encoder features of x_NC -> {C} latent.
  Tensor latent(const Tensor& pooled_features) const;

  // Three fully connected layers on [latent ; time embedding], sigmoid output.
  // Returns a {1} tensor in [0, 1].
  Tensor predict(const Tensor& latent, const Tensor& time_embedding) const;

  const SignalNetConfig& config() const { return config_; }

 private:
  SignalNetConfig config_;
  Tensor latent_weight_, latent_bias_;
  Tensor fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_, fc3_weight_, fc3_bias_;
};

// 1 iff signal > tau.
int signal_label(double signal, double tau);

// sum_i (p_i - label_i)^2 over the three phases. Labels are constants.
Tensor tcc_loss(const Tensor& per_phase_probs, std::span<const int> labels);

}  // namespace tcace
