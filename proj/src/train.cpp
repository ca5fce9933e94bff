#include "tcace/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "tcace/metrics.hpp"
#include "tcace/parallel.hpp"

namespace fs = std::filesystem;

namespace tcace {

namespace {

const char* const kTrainFields[] = {"epochs",  "warmup_epochs", "base_lr", "batch_size", "seed",
                                    "ablation", "loss_weights", "model",   "data_dir"};

}  // namespace

// --- TrainConfig ----------------------------------------------------------------

void TrainConfig::validate() const {
  schedule.validate();
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  weights.validate();
  model.validate();
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (model.ablation == Ablation::kBaseline) w.tcc = 0.0;
  return w;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json model_json = model.to_json();
  model_json.erase("ablation");
  return {{"epochs", schedule.epochs},
          {"warmup_epochs", schedule.warmup_epochs},
          {"base_lr", schedule.base_lr},
          {"batch_size", batch_size},
          {"seed", seed},
          {"ablation", std::string(ablation_name(model.ablation))},
          {"loss_weights", weights.to_json()},
          {"model", model_json},
          {"data_dir", data_dir}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kTrainFields), std::end(kTrainFields), key) == std::end(kTrainFields)) {
      throw ConfigError("train config: unknown field '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.schedule.epochs = j.value("epochs", c.schedule.epochs);
    c.schedule.warmup_epochs = j.value("warmup_epochs", c.schedule.warmup_epochs);
    c.schedule.base_lr = j.value("base_lr", c.schedule.base_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.data_dir = j.value("data_dir", c.data_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (j.contains("loss_weights")) c.weights = LossWeights::from_json(j.at("loss_weights"));
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("ablation")) {
    if (!j.at("ablation").is_string()) throw ConfigError("train config: ablation must be a string");
    c.model.ablation = parse_ablation(j.at("ablation").get<std::string>());
  }
  c.validate();
  return c;
}

// --- one case ------------------------------------------------------------------

CaseForward case_forward(const TcaceModel& model, const CaseRecord& record, const LossWeights& weights) {
  CaseForward out;
  out.bundle = model.run(record.ncmri, record.mask, record.times);
  const auto& phases = out.bundle.phases;
  std::vector<Tensor> images, logits;
  for (const auto& p : phases) {
    images.push_back(p.image);
    logits.push_back(p.seg_logits);
  }
  LossParts parts;
  parts.syn = syn_loss(images, record.phases);
  const SegLoss seg = seg_loss(logits, record.mask);
  parts.dice = seg.dice;
  parts.ce = seg.ce;
  parts.cls = cls_loss(out.bundle.classifier->class_probs, static_cast<int>(record.label));
  parts.tcc = tcc_loss(out.bundle.classifier->per_phase_probs, out.bundle.signal_labels);
  out.total = total_loss(parts, weights);
  out.values = {parts.syn.item(), parts.dice.item(), parts.ce.item(),
                parts.cls.item(), parts.tcc.item(), out.total.item()};
  return out;
}

std::vector<std::vector<double>> batch_gradient(const TcaceModel& model, std::span<const CaseRecord* const> cases,
                                                const LossWeights& weights, LossValues* mean_values) {
  if (cases.empty()) throw ContractError("batch_gradient: empty batch");
  const auto& entries = model.params().entries();
  std::vector<std::vector<std::vector<double>>> per_case(cases.size());
  std::vector<LossValues> values(cases.size());
  parallel_for(cases.size(), [&](std::size_t c) {
    Tape tape;
    TapeScope scope(tape);
    const CaseForward fwd = case_forward(model, *cases[c], weights);
    tape.backward(fwd.total);
    values[c] = fwd.values;
    auto& grads = per_case[c];
    grads.reserve(entries.size());
    for (const auto& [_, p] : entries) grads.push_back(tape.grad(p));
  });

  // Summed in case order so the result is independent of scheduling.
  const double inv = 1.0 / static_cast<double>(cases.size());
  std::vector<std::vector<double>> total(entries.size());
  LossValues mean;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (c == 0) total[k].assign(per_case[c][k].size(), 0.0);
      for (std::size_t j = 0; j < total[k].size(); ++j) total[k][j] += per_case[c][k][j];
    }
    mean.syn += values[c].syn;
    mean.dice += values[c].dice;
    mean.ce += values[c].ce;
    mean.cls += values[c].cls;
    mean.tcc += values[c].tcc;
    mean.total += values[c].total;
  }
  for (auto& g : total)
    for (double& v : g) v *= inv;
  if (mean_values) {
    mean.syn *= inv;
    mean.dice *= inv;
    mean.ce *= inv;
    mean.cls *= inv;
    mean.tcc *= inv;
    mean.total *= inv;
    *mean_values = mean;
  }
  return total;
}

ValidationSummary validate_model(const TcaceModel& model, std::span<const CaseRecord> cases,
                                 const LossWeights& weights) {
  ValidationSummary s;
  if (cases.empty()) return s;
  struct Row {
    double loss, psnr, dice;
    bool correct;
  };
  std::vector<Row> rows(cases.size());
  parallel_for(cases.size(), [&](std::size_t c) {
    NoGradScope no_grad;
    const CaseForward fwd = case_forward(model, cases[c], weights);
    const auto& probs = fwd.bundle.classifier->class_probs;
    const int predicted = probs[1] > probs[0] ? 1 : 0;
    rows[c] = {fwd.values.total, psnr(fwd.bundle.phases[2].image, cases[c].phases[2]),
               dice(fwd.bundle.aggregated_mask, cases[c].mask), predicted == static_cast<int>(cases[c].label)};
  });
  for (const auto& r : rows) {
    s.loss += r.loss;
    s.psnr += r.psnr;
    s.dice += r.dice;
    s.accuracy += r.correct ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(rows.size());
  s.loss /= n;
  s.psnr /= n;
  s.dice /= n;
  s.accuracy /= n;
  return s;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},     {"lr", lr},           {"l_syn", l_syn},       {"l_seg", l_seg},
          {"l_cls", l_cls},     {"l_tcc", l_tcc},     {"l_total", l_total},   {"val_loss", val_loss},
          {"val_psnr", val_psnr}, {"val_dice", val_dice}, {"val_acc", val_acc}};
}

TrainResult train_model(TcaceModel& model, const TrainConfig& config, const TrainData& data,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (data.train.empty()) throw ContractError("train: empty training split");
  const LossWeights weights = config.effective_weights();

  std::vector<Tensor> params;
  for (const auto& [_, p] : model.params().entries()) params.push_back(p);
  Adam adam(params);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5bd1e9955bd1e995ULL);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best;
  std::optional<std::size_t> last_finite;

  for (std::size_t epoch = 0; epoch < config.schedule.epochs; ++epoch) {
    const double lr = lr_at(epoch, config.schedule);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    LossValues sum_values;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const CaseRecord*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data.train[order[i]]);
      LossValues mean;
      std::vector<std::vector<double>> grads;
      try {
        grads = batch_gradient(model, batch, weights, &mean);
        if (!std::isfinite(mean.total)) throw NumericalError("train: non-finite batch loss");
        adam.step(grads, lr);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + "; last finite epoch: " +
                             (last_finite ? std::to_string(*last_finite) : std::string("none")));
      }
      const double w = static_cast<double>(batch.size());
      sum_values.syn += mean.syn * w;
      sum_values.dice += mean.dice * w;
      sum_values.ce += mean.ce * w;
      sum_values.cls += mean.cls * w;
      sum_values.tcc += mean.tcc * w;
      sum_values.total += mean.total * w;
    }
    const double n = static_cast<double>(order.size());
    rec.l_syn = sum_values.syn / n;
    rec.l_seg = (weights.dice * sum_values.dice + weights.ce * sum_values.ce) / n;
    rec.l_cls = sum_values.cls / n;
    rec.l_tcc = sum_values.tcc / n;
    rec.l_total = sum_values.total / n;

    const ValidationSummary val =
        validate_model(model, data.val.empty() ? std::span<const CaseRecord>(data.train) : data.val, weights);
    if (!std::isfinite(val.loss)) {
      throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch) +
                           "; last finite epoch: " + (last_finite ? std::to_string(*last_finite) : "none"));
    }
    rec.val_loss = val.loss;
    rec.val_psnr = val.psnr;
    rec.val_dice = val.dice;
    rec.val_acc = val.accuracy;
    last_finite = epoch;

    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.data().begin(), p.data().end());
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].mutable_data();
    std::copy(best[k].begin(), best[k].end(), dst.begin());
  }
  return result;
}

// --- disk ------------------------------------------------------------------------

std::vector<CaseRecord> load_split(const fs::path& data_dir, const Manifest& manifest, const std::string& split) {
  std::vector<CaseRecord> out;
  for (const auto& entry : manifest.split(split)) {
    CaseRecord rec = load_case(data_dir, entry);
    if (rec.ncmri.rank() != 2 || rec.ncmri.shape()[0] != manifest.config.image_size) {
      throw ConfigError("case " + entry.id + ": image shape " + shape_str(rec.ncmri.shape()) +
                        " disagrees with manifest image_size " + std::to_string(manifest.config.image_size));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

TrainArtifacts train_to_disk(const TrainConfig& config, const fs::path& data_dir, const fs::path& out_dir) {
  config.validate();
  const Manifest manifest = load_manifest(data_dir);
  if (manifest.config.image_size != config.model.image_size) {
    throw ConfigError("dataset image_size " + std::to_string(manifest.config.image_size) +
                      " does not match model image_size " + std::to_string(config.model.image_size));
  }
  TrainData data{load_split(data_dir, manifest, "train"), load_split(data_dir, manifest, "val")};

  fs::create_directories(out_dir);
  TrainArtifacts art;
  art.checkpoint = out_dir / kCheckpointDir;
  art.log = out_dir / kTrainLogFile;
  std::ofstream log(art.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + art.log.string());

  TcaceModel model(config.model, config.seed);
  art.result = train_model(model, config, data, [&](const EpochRecord& rec) {
    log << rec.to_json().dump() << '\n';
    log.flush();
  });
  if (!log) throw IoError("write failed: " + art.log.string());

  const nlohmann::json meta{{"config", config.to_json()},
                            {"epoch", art.result.best_epoch},
                            {"val_loss", art.result.best_val_loss},
                            {"manifest_hash", manifest.hash()}};
  save_archive(art.checkpoint, model.params(), meta);
  return art;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const nlohmann::json meta = read_archive_metadata(dir);
  LoadedCheckpoint out;
  try {
    out.config = TrainConfig::from_json(meta.at("config"));
    out.epoch = meta.at("epoch").get<std::size_t>();
    out.manifest_hash = meta.value("manifest_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata: ") + e.what());
  }
  out.model = std::make_unique<TcaceModel>(out.config.model, out.config.seed);
  load_archive(dir, out.model->params());
  return out;
}

}  // namespace tcace
