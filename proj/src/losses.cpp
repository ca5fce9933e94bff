#include "tcace/losses.hpp"

#include <cmath>

namespace tcace {

namespace {

void check_binary_target(const Tensor& target, const char* op) {
  for (double v : target.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(op) + ": ground truth is not binary");
  }
}

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                        " differ");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(dice >= 0.0) || !(ce >= 0.0) || !(cls >= 0.0) || !(tcc >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"dice", dice}, {"ce", ce}, {"cls", cls}, {"tcc", tcc}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "dice" && key != "ce" && key != "cls" && key != "tcc") {
        throw ConfigError("loss_weights: unknown field '" + key + "'");
      }
    }
    w.dice = j.value("dice", w.dice);
    w.ce = j.value("ce", w.ce);
    w.cls = j.value("cls", w.cls);
    w.tcc = j.value("tcc", w.tcc);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("loss_weights: ") + e.what());
  }
  w.validate();
  return w;
}

Tensor syn_loss(std::span<const Tensor> predicted, std::span<const Tensor> target) {
  if (predicted.size() != target.size() || predicted.empty()) {
    throw ContractError("syn_loss: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(target.size()) + " targets");
  }
  Tensor total;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    check_pair(predicted[i], target[i], "syn_loss");
    const Tensor term = mean(abs(sub(predicted[i], target[i])));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

Tensor soft_dice_loss(const Tensor& probs, const Tensor& target) {
  check_pair(probs, target, "soft_dice_loss");
  const Tensor inter = sum(mul(probs, target));
  const double target_sum = [&] {
    double s = 0.0;
    for (double v : target.data()) s += v;
    return s;
  }();
  const Tensor num = add_scalar(scale(inter, 2.0), kDiceEpsilon);
  const Tensor den = add_scalar(sum(probs), target_sum + kDiceEpsilon);
  return add_scalar(scale(div(num, den), -1.0), 1.0);
}

Tensor bce_loss(const Tensor& probs, const Tensor& target) {
  check_pair(probs, target, "bce_loss");
  const Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  const Tensor one_minus_p = add_scalar(scale(p, -1.0), 1.0);
  std::vector<double> inv(target.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - target[i];
  const Tensor one_minus_t(target.shape(), std::move(inv));
  const Tensor ll = add(mul(target, log(p)), mul(one_minus_t, log(one_minus_p)));
  return scale(mean(ll), -1.0);
}

SegLoss seg_loss(std::span<const Tensor> logits, const Tensor& target) {
  if (logits.empty()) throw ContractError("seg_loss: no phases");
  check_binary_target(target, "seg_loss");
  Tensor dice_total, ce_total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Tensor probs = sigmoid(logits[i]);
    const Tensor d = soft_dice_loss(probs, target);
    const Tensor c = bce_loss(probs, target);
    dice_total = i == 0 ? d : add(dice_total, d);
    ce_total = i == 0 ? c : add(ce_total, c);
  }
  const double inv = 1.0 / static_cast<double>(logits.size());
  return {scale(dice_total, inv), scale(ce_total, inv)};
}

Tensor cls_loss(const Tensor& class_probs, int label) {
  if (class_probs.rank() != 1 || class_probs.size() != 2) {
    throw ContractError("cls_loss: expected a {2} distribution, got " + shape_str(class_probs.shape()));
  }
  if (label != 0 && label != 1) throw ContractError("cls_loss: label must be 0 or 1, got " + std::to_string(label));
  const Tensor p = clamp(slice(class_probs, 0, static_cast<std::size_t>(label), static_cast<std::size_t>(label) + 1),
                         kProbClamp, 1.0);
  return scale(sum(log(p)), -1.0);
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
  const std::pair<const char*, const Tensor*> named[] = {
      {"syn", &parts.syn}, {"dice", &parts.dice}, {"ce", &parts.ce}, {"cls", &parts.cls}, {"tcc", &parts.tcc}};
  for (const auto& [name, t] : named) {
    if (t->size() != 1) throw ContractError(std::string("total_loss: term '") + name + "' is not a scalar");
    if (!std::isfinite(t->item())) {
      throw NumericalError(std::string("total_loss: term '") + name + "' is not finite (" +
                           std::to_string(t->item()) + ")");
    }
  }
  Tensor total = parts.syn;
  if (weights.dice != 0.0) total = add(total, scale(parts.dice, weights.dice));
  if (weights.ce != 0.0) total = add(total, scale(parts.ce, weights.ce));
  if (weights.cls != 0.0) total = add(total, scale(parts.cls, weights.cls));
  if (weights.tcc != 0.0) total = add(total, scale(parts.tcc, weights.tcc));
  return reshape(total, {});
}

}  // namespace tcace
