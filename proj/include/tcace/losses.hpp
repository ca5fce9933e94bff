#pragma once

#include <span>
#include <string>

#include "json.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

struct LossWeights {
  double dice = 1.0;
  double ce = 1.0;
  double cls = 1.0;
  double tcc = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

inline constexpr double kDiceEpsilon = 1e-6;
inline constexpr double kProbClamp = 1e-7;

// Sum over phases of the per-pixel mean absolute error.
Tensor syn_loss(std::span<const Tensor> predicted, std::span<const Tensor> target);

struct SegLoss {
  Tensor dice;  // mean over phases of 1 - (2 sum pq + eps) / (sum p + sum q + eps)
  Tensor ce;    // mean over phases of the pixel-mean binary cross-entropy
};

// Per-phase logits against one binary target mask.
SegLoss seg_loss(std::span<const Tensor> logits, const Tensor& target);

Tensor soft_dice_loss(const Tensor& probs, const Tensor& target);
Tensor bce_loss(const Tensor& probs, const Tensor& target);

// -log(max(p[label], 1e-7)) for a {2} distribution.
Tensor cls_loss(const Tensor& class_probs, int label);

struct LossParts {
  Tensor syn, dice, ce, cls, tcc;
};

// syn + w.dice dice + w.ce ce + w.cls cls + w.tcc tcc. Throws NumericalError
// naming the first non-finite part.
Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace tcace
