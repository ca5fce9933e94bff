#include "tcace/tcc.hpp"

#include <string>

namespace tcace {

void SignalNetConfig::validate() const {
  if (latent_width == 0 || hidden1 == 0 || hidden2 == 0) throw ConfigError("signal net: widths must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("signal net: tau must lie in (0, 1)");
}

SignalNet::SignalNet(const SignalNetConfig& config, ParamStore& params, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto& c = config_;
  latent_weight_ = params.add("tcc.latent.weight", xavier_uniform(c.feature_width, c.latent_width, rng));
  latent_bias_ = params.add("tcc.latent.bias", Tensor::zeros({c.latent_width}));
  fc1_weight_ = params.add("tcc.fc1.weight", xavier_uniform(c.latent_width + 2, c.hidden1, rng));
  fc1_bias_ = params.add("tcc.fc1.bias", Tensor::zeros({c.hidden1}));
  fc2_weight_ = params.add("tcc.fc2.weight", xavier_uniform(c.hidden1, c.hidden2, rng));
  fc2_bias_ = params.add("tcc.fc2.bias", Tensor::zeros({c.hidden2}));
  fc3_weight_ = params.add("tcc.fc3.weight", xavier_uniform(c.hidden2, 1, rng));
  fc3_bias_ = params.add("tcc.fc3.bias", Tensor::zeros({1}));
}

Tensor SignalNet::latent(const Tensor& pooled_features) const {
  if (pooled_features.rank() != 1 || pooled_features.shape()[0] != config_.feature_width) {
    throw ContractError("signal net: pooled features " + shape_str(pooled_features.shape()) + " expected (" +
                        std::to_string(config_.feature_width) + ",)");
  }
  return linear(pooled_features, latent_weight_, latent_bias_);
}

Tensor SignalNet::predict(const Tensor& latent, const Tensor& time_embedding) const {
  if (latent.rank() != 1 || latent.shape()[0] != config_.latent_width) {
    throw ContractError("predict_signal: latent " + shape_str(latent.shape()) + " expected (" +
                        std::to_string(config_.latent_width) + ",)");
  }
  if (time_embedding.rank() != 1 || time_embedding.shape()[0] != 2) {
    throw ContractError("predict_signal: time embedding must be (2,), got " + shape_str(time_embedding.shape()));
  }
  Tensor h = relu(linear(concat({latent, time_embedding}, 0), fc1_weight_, fc1_bias_));
  h = relu(linear(h, fc2_weight_, fc2_bias_));
  return sigmoid(linear(h, fc3_weight_, fc3_bias_));
}

int signal_label(double signal, double tau) { return signal > tau ? 1 : 0; }

Tensor tcc_loss(const Tensor& per_phase_probs, std::span<const int> labels) {
  if (per_phase_probs.rank() != 1 || per_phase_probs.shape()[0] != 3 || labels.size() != 3) {
    throw ContractError("tcc_loss: expected 3 probabilities and 3 labels, got " +
                        shape_str(per_phase_probs.shape()) + " and " + std::to_string(labels.size()));
  }
  std::vector<double> target(labels.begin(), labels.end());
  return sum(square(sub(per_phase_probs, Tensor::from(std::move(target)))));
}

}  // namespace tcace
