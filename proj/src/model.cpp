#include "tcace/model.hpp"

#include <algorithm>
#include <cmath>

namespace tcace {

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kBaseline: return "baseline";
    case Ablation::kNoDtam: return "no_dtam";
    case Ablation::kNoCte: return "no_cte";
    case Ablation::kNoTEncoding: return "no_t_encoding";
    case Ablation::kFull: return "full";
  }
  return "full";
}

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : kAblationOrder) {
    if (ablation_name(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(name) +
                    "' (expected full, no_dtam, no_cte, no_t_encoding, baseline)");
}

// --- ModelConfig ----------------------------------------------------------------

void ModelConfig::validate() const {
  encoder().validate();
  dtam().validate();
  signal().validate();
  if (!(omega > 0.0)) throw ConfigError("model: omega must be positive");
}

EncoderConfig ModelConfig::encoder() const { return {image_size, patch_size, embed_dim, depth}; }

DtamConfig ModelConfig::dtam() const {
  const bool decay = ablation != Ablation::kNoDtam && ablation != Ablation::kBaseline;
  return {embed_dim, head_count, sigma, decay};
}

SignalNetConfig ModelConfig::signal() const {
  return {embed_dim, signal_latent, signal_hidden1, signal_hidden2, tau};
}

ConditionSwitches ModelConfig::switches() const {
  switch (ablation) {
    case Ablation::kNoCte:
    case Ablation::kBaseline: return {false, false};
    case Ablation::kNoTEncoding: return {true, false};
    default: return {true, true};
  }
}

std::size_t ModelConfig::block_len() const {
  const auto s = switches();
  return encoder().token_count() + ((s.phase_token || s.time_token) ? 1 : 0);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},       {"patch_size", patch_size},
          {"embed_dim", embed_dim},         {"depth", depth},
          {"head_count", head_count},       {"sigma", sigma},
          {"omega", omega},                 {"signal_latent", signal_latent},
          {"signal_hidden", {signal_hidden1, signal_hidden2}},
          {"tau", tau},                     {"ablation", std::string(ablation_name(ablation))}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depth = j.value("depth", c.depth);
    c.head_count = j.value("head_count", c.head_count);
    c.sigma = j.value("sigma", c.sigma);
    c.omega = j.value("omega", c.omega);
    c.signal_latent = j.value("signal_latent", c.signal_latent);
    if (j.contains("signal_hidden")) {
      const auto& h = j.at("signal_hidden");
      if (!h.is_array() || h.size() != 2) throw ConfigError("model: signal_hidden must be [h1, h2]");
      c.signal_hidden1 = h[0].get<std::size_t>();
      c.signal_hidden2 = h[1].get<std::size_t>();
    }
    c.tau = j.value("tau", c.tau);
    if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- aggregation ------------------------------------------------------------------

Tensor aggregate_segmentation(const Tensor& s_art, const Tensor& s_pv, const Tensor& s_delay) {
  if (s_art.shape() != s_pv.shape() || s_art.shape() != s_delay.shape()) {
    throw ContractError("aggregate_segmentation: shapes " + shape_str(s_art.shape()) + ", " +
                        shape_str(s_pv.shape()) + ", " + shape_str(s_delay.shape()) + " differ");
  }
  NoGradScope no_grad;
  const Tensor maps[] = {sigmoid(s_art), sigmoid(s_pv), sigmoid(s_delay)};
  std::vector<double> out(s_art.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    int votes = 0;
    for (const auto& m : maps) votes += m[i] > 0.5 ? 1 : 0;
    out[i] = votes >= 2 ? 1.0 : 0.0;
  }
  return Tensor(s_art.shape(), std::move(out));
}

// --- TcaceModel -------------------------------------------------------------------

TcaceModel::TcaceModel(const ModelConfig& config, std::uint64_t seed)
    : config_((config.validate(), config)),
      init_rng_(seed),
      encoder_(config_.encoder(), params_, init_rng_),
      cte_(config_.embed_dim, config_.omega, params_, init_rng_),
      mmhsa_(config_.dtam(), config_.block_len(), kPhaseCount, params_, init_rng_),
      signal_(config_.signal(), params_, init_rng_) {
  const std::size_t d = config_.embed_dim;
  const std::size_t pp = config_.encoder().patch_pixels();
  image_weight_ = params_.add("decoder.image.weight", xavier_uniform(d, pp, init_rng_));
  image_bias_ = params_.add("decoder.image.bias", Tensor::zeros({pp}));
  seg_weight_ = params_.add("decoder.seg.weight", xavier_uniform(d, pp, init_rng_));
  seg_bias_ = params_.add("decoder.seg.bias", Tensor::zeros({pp}));
  cls_weight_ = params_.add("classifier.fused.weight", xavier_uniform(4 * d, 2, init_rng_));
  cls_bias_ = params_.add("classifier.fused.bias", Tensor::zeros({2}));
  phase_cls_weight_ = params_.add("classifier.phase.weight", xavier_uniform(d, 1, init_rng_));
  phase_cls_bias_ = params_.add("classifier.phase.bias", Tensor::zeros({1}));
}

Tensor TcaceModel::encode(const Tensor& ncmri, const Tensor& mask) const { return encoder_.encode(ncmri, mask); }

PhaseOutput TcaceModel::decode(const Tensor& tokens) const {
  const std::size_t n = config_.encoder().token_count();
  if (tokens.rank() != 2 || tokens.shape()[0] < n || tokens.shape()[1] != config_.embed_dim) {
    throw DimensionError("decode: tokens " + shape_str(tokens.shape()) + " carry fewer than " +
                         std::to_string(n) + " image tokens of width " + std::to_string(config_.embed_dim));
  }
  const Tensor image_tokens = tokens.shape()[0] == n ? tokens : slice(tokens, 0, 0, n);
  PhaseOutput out;
  out.image = unpatchify(sigmoid(linear(image_tokens, image_weight_, image_bias_)), config_.image_size,
                         config_.patch_size);
  out.seg_logits = unpatchify(linear(image_tokens, seg_weight_, seg_bias_), config_.image_size, config_.patch_size);
  out.feature = reduce_mean(image_tokens, 0);
  return out;
}

TcaceModel::PhaseStep TcaceModel::synthesize_phase(std::size_t phase_index, const Tensor& image_tokens,
                                                   std::span<const Tensor> prior_tokens, const PhaseTimes& times,
                                                   AttentionTrace* trace) const {
  if (phase_index >= kPhaseCount) throw ContractError("synthesize_phase: phase index out of range");
  if (prior_tokens.size() != phase_index) {
    throw ContractError("synthesize_phase: phase " + std::to_string(phase_index) + " needs " +
                        std::to_string(phase_index) + " prior blocks, got " + std::to_string(prior_tokens.size()));
  }
  const ConditionalToken cond =
      cte_.build(image_tokens, static_cast<Phase>(phase_index), times[phase_index], config_.switches());
  PhaseTokenState state;
  state.conditional = {cond.assembled, times[phase_index]};
  for (std::size_t k = 0; k < prior_tokens.size(); ++k) state.prior.push_back({prior_tokens[k], times[k]});

  PhaseStep step;
  step.tokens = mmhsa_.forward_conditional(state);
  step.output = decode(step.tokens);
  if (trace) {
    NoGradScope no_grad;
    mmhsa_.forward(state, trace);
  }
  return step;
}

ClassifierOutput TcaceModel::fuse_and_classify(const Tensor& image_tokens, std::span<const PhaseOutput> phases) const {
  if (phases.size() != kPhaseCount) {
    throw ContractError("fuse_and_classify: need 3 phase outputs, got " + std::to_string(phases.size()));
  }
  std::vector<Tensor> parts{reduce_mean(image_tokens, 0)};
  std::vector<Tensor> per_phase;
  for (const auto& p : phases) {
    parts.push_back(p.feature);
    per_phase.push_back(sigmoid(linear(p.feature, phase_cls_weight_, phase_cls_bias_)));
  }
  const Tensor joint = concat(parts, 0);
  ClassifierOutput out;
  out.class_probs = softmax_last_axis(linear(joint, cls_weight_, cls_bias_));
  out.per_phase_probs = concat(per_phase, 0);
  return out;
}

PredictionBundle TcaceModel::run(const Tensor& ncmri, const Tensor& mask, const PhaseTimes& times,
                                 const RunOptions& options) const {
  if (options.phase_count == 0 || options.phase_count > kPhaseCount) {
    throw ContractError("run: phase_count must be 1..3");
  }
  PredictionBundle bundle;
  const Tensor image_tokens = encode(ncmri, mask);
  std::vector<Tensor> generated;
  if (options.traces) options.traces->assign(options.phase_count, {});
  for (std::size_t i = 0; i < options.phase_count; ++i) {
    auto step = synthesize_phase(i, image_tokens, generated, times,
                                 options.traces ? &(*options.traces)[i] : nullptr);
    bundle.phases.push_back(std::move(step.output));
    generated.push_back(std::move(step.tokens));
  }
  if (options.phase_count < kPhaseCount) return bundle;

  bundle.aggregated_mask =
      aggregate_segmentation(bundle.phases[0].seg_logits, bundle.phases[1].seg_logits, bundle.phases[2].seg_logits);
  bundle.classifier = fuse_and_classify(image_tokens, bundle.phases);

  // Signal labels are constants for the TCC term, so no tape is needed here.
  NoGradScope no_grad;
  const Tensor latent = signal_.latent(reduce_mean(image_tokens.detach(), 0));
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    const auto enc = time_encoding(times[i], config_.omega);
    bundle.signal[i] = signal_.predict(latent, Tensor::from({enc[0], enc[1]})).item();
    bundle.signal_labels[i] = signal_label(bundle.signal[i], config_.tau);
  }
  return bundle;
}

}  // namespace tcace
