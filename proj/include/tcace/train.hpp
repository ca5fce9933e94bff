#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcace/losses.hpp"
#include "tcace/model.hpp"
#include "tcace/optim.hpp"
#include "tcace/phantom.hpp"

namespace tcace {

struct TrainConfig {
  Schedule schedule;
  std::size_t batch_size = 1;
  std::uint64_t seed = 42;
  LossWeights weights;
  ModelConfig model;
  std::string data_dir;  // optional; the CLI --data flag takes precedence

  void validate() const;
  // Loss weights actually applied: the baseline variant trains without TCC.
  LossWeights effective_weights() const;

  nlohmann::json to_json() const;
  // Unknown top-level fields are rejected; missing ones keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossValues {
  double syn = 0, dice = 0, ce = 0, cls = 0, tcc = 0, total = 0;
  double seg(const LossWeights& w) const { return w.dice * dice + w.ce * ce; }
};

struct CaseForward {
  Tensor total;
  LossValues values;
  PredictionBundle bundle;
};

// Full autoregressive forward plus every loss term for one case. Records on
// the calling thread's active tape, if any.
CaseForward case_forward(const TcaceModel& model, const CaseRecord& record, const LossWeights& weights);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double l_syn = 0, l_seg = 0, l_cls = 0, l_tcc = 0, l_total = 0;
  double val_loss = 0;
  double val_psnr = 0, val_dice = 0, val_acc = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
};

struct TrainData {
  std::vector<CaseRecord> train;
  std::vector<CaseRecord> val;
};

// Trains in place. Per-case gradients are computed on separate tapes (in
// parallel when allowed) and summed in case order, so results do not depend
// on the thread count. On return the model holds the parameters of the epoch
// with the lowest validation loss. Throws NumericalError naming the last
// finite epoch when a loss turns non-finite.
TrainResult train_model(TcaceModel& model, const TrainConfig& config, const TrainData& data,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

// Gradient of the mean case loss over `cases` with respect to every
// parameter, in ParamStore order. Also returns the mean loss values.
std::vector<std::vector<double>> batch_gradient(const TcaceModel& model, std::span<const CaseRecord* const> cases,
                                                const LossWeights& weights, LossValues* mean_values = nullptr);

struct ValidationSummary {
  double loss = 0;
  double psnr = 0;  // Delay phase
  double dice = 0;  // voted mask
  double accuracy = 0;
};
ValidationSummary validate_model(const TcaceModel& model, std::span<const CaseRecord> cases,
                                 const LossWeights& weights);

// --- on-disk training --------------------------------------------------------

inline constexpr const char* kCheckpointDir = "checkpoint";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  TrainResult result;
};

// Loads the train/val splits from data_dir, trains, and writes the best
// checkpoint (metadata: config, epoch, manifest hash) and a JSON-lines log.
TrainArtifacts train_to_disk(const TrainConfig& config, const std::filesystem::path& data_dir,
                             const std::filesystem::path& out_dir);

std::vector<CaseRecord> load_split(const std::filesystem::path& data_dir, const Manifest& manifest,
                                   const std::string& split);

struct LoadedCheckpoint {
  std::unique_ptr<TcaceModel> model;
  TrainConfig config;
  std::size_t epoch = 0;
  std::string manifest_hash;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace tcace
