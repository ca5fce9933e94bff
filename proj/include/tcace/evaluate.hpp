#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcace/metrics.hpp"
#include "tcace/model.hpp"
#include "tcace/phantom.hpp"

namespace tcace {

inline constexpr int kReportSchemaVersion = 1;

struct ImageMetrics {
  double mse = 0, psnr = 0, ssim = 0;
};

struct CaseMetrics {
  std::string id;
  int label = 0;
  int predicted = 0;
  double prob_malignant = 0;
  std::array<ImageMetrics, kPhaseCount> phases{};
  double copy_ncmri_psnr = 0;  // Delay phase
  double dice = 0, iou = 0;
  SurfaceDistances surface;
  std::array<double, kPhaseCount> signal{};
  std::array<int, kPhaseCount> signal_labels{};
  std::array<double, kPhaseCount> per_phase_probs{};
};

struct EvaluationReport {
  std::string split;
  std::vector<CaseMetrics> cases;
  std::array<ImageMetrics, kPhaseCount> phases{};  // means over cases
  double copy_ncmri_psnr = 0;
  double dice = 0, iou = 0;
  double hd95 = 0, asd = 0;  // means over cases with defined distances
  std::size_t undefined_surface_cases = 0;
  ClassificationMetrics classification;
  nlohmann::json context;  // config echo, manifest hash, checkpoint path

  nlohmann::json to_json() const;
};

struct EvalCase {
  std::string id;
  const CaseRecord* record = nullptr;
};

// With model == nullptr the ground-truth phases, mask and label stand in for
// the predictions (oracle self-check). When attention_dir is set, writes one
// CSV of block-level attention per (case, phase).
EvaluationReport evaluate_cases(const TcaceModel* model, std::span<const EvalCase> cases, const std::string& split,
                                const std::optional<std::filesystem::path>& attention_dir = std::nullopt);

// Block-level attention of one phase as CSV: header "query_block,key_block,weight".
void write_attention_csv(const std::filesystem::path& path, const AttentionTrace& trace);

}  // namespace tcace
