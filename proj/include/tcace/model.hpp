#pragma once

// Time-conditioned autoregressive synthesis: encode (NCMRI, mask) once, then
// for Art -> PV -> Delay attend over [conditional block, previously generated
// blocks] with DTAM, decode each phase into image / segmentation / features,
// vote the three masks, and classify from the fused features.

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tcace/dtam.hpp"
#include "tcace/encoder.hpp"
#include "tcace/params.hpp"
#include "tcace/phantom.hpp"
#include "tcace/tcc.hpp"

namespace tcace {

enum class Ablation { kBaseline, kNoDtam, kNoCte, kNoTEncoding, kFull };

// Row order of the ablation comparison table.
inline constexpr std::array<Ablation, 5> kAblationOrder{Ablation::kBaseline, Ablation::kNoDtam, Ablation::kNoCte,
                                                        Ablation::kNoTEncoding, Ablation::kFull};

std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t head_count = 4;
  double sigma = 0.7;
  double omega = std::numbers::pi;
  std::size_t signal_latent = 256;
  std::size_t signal_hidden1 = 128;
  std::size_t signal_hidden2 = 64;
  double tau = 0.5;
  Ablation ablation = Ablation::kFull;

  void validate() const;
  EncoderConfig encoder() const;
  DtamConfig dtam() const;
  SignalNetConfig signal() const;
  ConditionSwitches switches() const;
  std::size_t block_len() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct PhaseOutput {
  Tensor image;       // {H, W}, sigmoid-bounded
  Tensor seg_logits;  // {H, W}
  Tensor feature;     // {D}, mean of the decoded image tokens
};

struct ClassifierOutput {
  Tensor class_probs;      // {2}: benign, malignant
  Tensor per_phase_probs;  // {3}: auxiliary per-phase malignancy probabilities
};

struct PredictionBundle {
  std::vector<PhaseOutput> phases;  // in Art, PV, Delay order
  Tensor aggregated_mask;           // {H, W} binary; empty unless all phases ran
  std::optional<ClassifierOutput> classifier;
  std::array<double, kPhaseCount> signal{};  // S_i from the signal net
  std::array<int, kPhaseCount> signal_labels{};
};

struct RunOptions {
  std::size_t phase_count = kPhaseCount;
  // When set, receives one block-level attention matrix per phase.
  std::vector<AttentionTrace>* traces = nullptr;
};

// Pixelwise majority of the three per-phase masks, each binarised at
// probability 0.5.
Tensor aggregate_segmentation(const Tensor& s_art, const Tensor& s_pv, const Tensor& s_delay);

class TcaceModel {
 public:
  TcaceModel(const ModelConfig& config, std::uint64_t seed);
  TcaceModel(const TcaceModel&) = delete;
  TcaceModel& operator=(const TcaceModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor encode(const Tensor& ncmri, const Tensor& mask) const;

  struct PhaseStep {
    PhaseOutput output;
    Tensor tokens;  // generated block, retained for later phases
  };

  // One autoregressive step. prior_tokens holds exactly the phase_index
  // blocks generated for earlier phases.
  PhaseStep synthesize_phase(std::size_t phase_index, const Tensor& image_tokens,
                             std::span<const Tensor> prior_tokens, const PhaseTimes& times,
                             AttentionTrace* trace = nullptr) const;

  PhaseOutput decode(const Tensor& tokens) const;

  ClassifierOutput fuse_and_classify(const Tensor& image_tokens, std::span<const PhaseOutput> phases) const;

  PredictionBundle run(const Tensor& ncmri, const Tensor& mask, const PhaseTimes& times,
                       const RunOptions& options = {}) const;

  const ConditionalTokenBuilder& condition_builder() const { return cte_; }
  const MmhsaBlock& attention() const { return mmhsa_; }
  const SignalNet& signal_net() const { return signal_; }

 private:
  ModelConfig config_;
  ParamStore params_;
  std::mt19937_64 init_rng_;
  FeatureEncoder encoder_;
  ConditionalTokenBuilder cte_;
  MmhsaBlock mmhsa_;
  SignalNet signal_;
  Tensor image_weight_, image_bias_, seg_weight_, seg_bias_;
  Tensor cls_weight_, cls_bias_, phase_cls_weight_, phase_cls_bias_;
};

}  // namespace tcace
