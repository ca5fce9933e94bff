#include "tcace/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tcace/train.hpp"

#ifndef TCACE_BUILD_ID
#define TCACE_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;

namespace tcace {

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& value) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << value.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

class RunRecord {
 public:
  RunRecord(std::string command, nlohmann::json config, std::uint64_t seed)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed), started_(utc_now()) {}

  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write(const fs::path& path) const {
    for (const auto& o : outputs_) {
      if (!fs::exists(o)) throw IoError("run record names missing output " + o);
    }
    write_json_atomic(path, {{"command", command_},
                             {"config", config_},
                             {"build_id", TCACE_BUILD_ID},
                             {"seed", seed_},
                             {"started", started_},
                             {"finished", utc_now()},
                             {"outputs", outputs_}});
  }

 private:
  std::string command_;
  nlohmann::json config_;
  std::uint64_t seed_;
  std::string started_;
  std::vector<std::string> outputs_;
};

struct DataCheck {
  Manifest manifest;
  std::string hash;
};

DataCheck check_data(const LoadedCheckpoint& ckpt, const fs::path& data_dir, bool allow_other_data) {
  DataCheck d{load_manifest(data_dir), ""};
  d.hash = d.manifest.hash();
  if (d.manifest.config.image_size != ckpt.config.model.image_size) {
    throw ConfigError("checkpoint expects " + std::to_string(ckpt.config.model.image_size) + "x" +
                      std::to_string(ckpt.config.model.image_size) + " images but dataset has " +
                      std::to_string(d.manifest.config.image_size));
  }
  if (!allow_other_data && !ckpt.manifest_hash.empty() && ckpt.manifest_hash != d.hash) {
    throw ConfigError("checkpoint was trained on dataset " + ckpt.manifest_hash + " but " + data_dir.string() +
                      " has manifest " + d.hash + " (pass --allow-other-data to evaluate anyway)");
  }
  return d;
}

EvaluationReport evaluate_split(const TcaceModel* model, const fs::path& data_dir, const Manifest& manifest,
                                const std::string& split, const std::optional<fs::path>& attention_dir) {
  const auto entries = manifest.split(split);
  if (entries.empty()) throw ConfigError("split '" + split + "' is empty or unknown");
  const auto records = load_split(data_dir, manifest, split);
  std::vector<EvalCase> cases;
  for (std::size_t i = 0; i < entries.size(); ++i) cases.push_back({entries[i].id, &records[i]});
  return evaluate_cases(model, cases, split, attention_dir);
}

// --- subcommands -------------------------------------------------------------

struct GenerateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> cases;
  bool force = false;
};

// A malformed or invalid config file is a usage error, not a data mismatch.
template <typename F>
auto parse_config(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

int cmd_generate(const GenerateArgs& a) {
  const PhantomConfig cfg = parse_config([&] {
    PhantomConfig c = a.config.empty() ? PhantomConfig{} : PhantomConfig::from_json(read_json_file(a.config));
    if (a.seed) c.master_seed = *a.seed;
    if (a.cases) c.case_count = *a.cases;
    c.validate();
    return c;
  });
  prepare_output_dir(a.out, a.force);
  RunRecord run("generate", cfg.to_json(), cfg.master_seed);
  const Manifest m = generate_dataset(cfg, a.out);
  const fs::path manifest = fs::path(a.out) / "manifest.json";
  run.output(manifest);
  run.write(fs::path(a.out) / "run.json");
  std::cout << manifest.string() << '\n';
  std::cout << m.cases.size() << " cases (train " << m.split("train").size() << ", val " << m.split("val").size()
            << ", test " << m.split("test").size() << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, ablation;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

TrainConfig resolve_train_config(const std::string& path, const std::optional<std::size_t>& epochs,
                                 const std::optional<std::uint64_t>& seed, const std::string& ablation) {
  return parse_config([&] {
    TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(path));
    if (epochs) {
      cfg.schedule.epochs = *epochs;
      // A shortened run keeps the warmup proportion.
      if (cfg.schedule.warmup_epochs >= cfg.schedule.epochs) cfg.schedule.warmup_epochs = cfg.schedule.epochs / 5;
    }
    if (seed) cfg.seed = *seed;
    if (!ablation.empty()) cfg.model.ablation = parse_ablation(ablation);
    cfg.validate();
    return cfg;
  });
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = resolve_train_config(a.config, a.epochs, a.seed, a.ablation);
  const std::string data = a.data.empty() ? cfg.data_dir : a.data;
  if (data.empty()) throw UsageError("train: --data is required (or data_dir in the config)");
  prepare_output_dir(a.out, a.force);
  RunRecord run("train", cfg.to_json(), cfg.seed);
  const TrainArtifacts art = train_to_disk(cfg, data, a.out);
  run.output(art.checkpoint);
  run.output(art.log);
  run.write(fs::path(a.out) / "run.json");
  const auto& last = art.result.log.back();
  std::cout << "trained " << cfg.schedule.epochs << " epochs (" << ablation_name(cfg.model.ablation)
            << "); best epoch " << art.result.best_epoch << ", final l_total " << last.l_total << ", val_psnr "
            << last.val_psnr << ", val_dice " << last.val_dice << ", val_acc " << last.val_acc << '\n';
  std::cout << art.checkpoint.string() << '\n';
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint, data, split = "test", out;
  bool oracle = false, dump_attention = false, allow_other_data = false, force = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path out(a.out);
  if (fs::exists(out) && !a.force) throw UsageError(out.string() + " exists (pass --force to overwrite)");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::optional<fs::path> attention;
  if (a.dump_attention) attention = out.parent_path() / (out.stem().string() + "_attention");

  EvaluationReport report;
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  if (a.oracle) {
    const Manifest manifest = load_manifest(a.data);
    report = evaluate_split(nullptr, a.data, manifest, a.split, std::nullopt);
    report.context = {{"mode", "oracle"}, {"manifest_hash", manifest.hash()}};
  } else {
    if (a.checkpoint.empty()) throw UsageError("evaluate: --checkpoint is required unless --oracle is given");
    const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    const DataCheck d = check_data(ckpt, a.data, a.allow_other_data);
    report = evaluate_split(ckpt.model.get(), a.data, d.manifest, a.split, attention);
    config_echo = ckpt.config.to_json();
    seed = ckpt.config.seed;
    report.context = {{"mode", "model"},
                      {"config", config_echo},
                      {"checkpoint_epoch", ckpt.epoch},
                      {"manifest_hash", d.hash}};
  }
  write_json_file(out, report.to_json());
  RunRecord run("evaluate", config_echo, seed);
  run.output(out);
  if (attention) run.output(*attention);
  run.write(out.parent_path() / (out.stem().string() + ".run.json"));
  std::cout << "split " << a.split << " (" << report.cases.size() << " cases): delay PSNR " << report.phases[2].psnr
            << " dB (copy-NCMRI " << report.copy_ncmri_psnr << "), Dice " << report.dice << ", accuracy "
            << report.classification.accuracy << '\n';
  return kExitOk;
}

struct SynthesizeArgs {
  std::string checkpoint, data, split = "test", out;
  std::optional<std::size_t> limit;
  bool dump_attention = false, allow_other_data = false, force = false;
};

int cmd_synthesize(const SynthesizeArgs& a) {
  const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const DataCheck d = check_data(ckpt, a.data, a.allow_other_data);
  auto entries = d.manifest.split(a.split);
  if (entries.empty()) throw ConfigError("split '" + a.split + "' is empty or unknown");
  if (a.limit && *a.limit < entries.size()) entries.resize(*a.limit);
  prepare_output_dir(a.out, a.force);
  RunRecord run("synthesize", ckpt.config.to_json(), ckpt.config.seed);
  const fs::path out(a.out);
  NoGradScope no_grad;
  for (const auto& e : entries) {
    const CaseRecord rec = load_case(a.data, e);
    std::vector<AttentionTrace> traces;
    RunOptions options;
    if (a.dump_attention) options.traces = &traces;
    const PredictionBundle b = ckpt.model->run(rec.ncmri, rec.mask, rec.times, options);
    const fs::path dir = out / e.id;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < kPhaseCount; ++i) write_pgm(dir / (std::string(kPhaseNames[i]) + ".pgm"), b.phases[i].image);
    write_pgm(dir / "mask.pgm", b.aggregated_mask);
    const auto& probs = b.classifier->class_probs;
    write_json_file(dir / "class.json", {{"id", e.id},
                                         {"predicted", probs[1] > probs[0] ? "malignant" : "benign"},
                                         {"prob_benign", probs[0]},
                                         {"prob_malignant", probs[1]},
                                         {"per_phase_probs", b.classifier->per_phase_probs.data()},
                                         {"signal", b.signal},
                                         {"signal_labels", b.signal_labels}});
    if (a.dump_attention) {
      for (std::size_t i = 0; i < kPhaseCount; ++i) {
        write_attention_csv(dir / ("attention_" + std::string(kPhaseNames[i]) + ".csv"), traces[i]);
      }
    }
    run.output(dir);
  }
  run.write(out / "run.json");
  std::cout << "synthesized " << entries.size() << " cases into " << out.string() << '\n';
  return kExitOk;
}

struct AblateArgs {
  std::string config, data, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int cmd_ablate(const AblateArgs& a) {
  const TrainConfig base = resolve_train_config(a.config, a.epochs, a.seed, "");
  prepare_output_dir(a.out, a.force);
  const fs::path out(a.out);
  RunRecord run("ablate", base.to_json(), base.seed);
  std::vector<AblationRow> rows;
  for (Ablation v : kAblationOrder) {
    TrainConfig cfg = base;
    cfg.model.ablation = v;
    const fs::path dir = out / std::string(ablation_name(v));
    const TrainArtifacts art = train_to_disk(cfg, a.data, dir);
    const LoadedCheckpoint ckpt = load_checkpoint(art.checkpoint);
    const DataCheck d = check_data(ckpt, a.data, false);
    EvaluationReport report = evaluate_split(ckpt.model.get(), a.data, d.manifest, "test", std::nullopt);
    report.context = {{"mode", "model"}, {"config", cfg.to_json()}, {"manifest_hash", d.hash}};
    write_json_file(dir / "report.json", report.to_json());
    rows.push_back(AblationRow::from_report(v, d.hash, report));
    std::cout << ablation_name(v) << ": delay PSNR " << rows.back().psnr << ", Dice " << rows.back().dice
              << ", accuracy " << rows.back().accuracy << '\n';
    run.output(dir / "report.json");
  }
  nlohmann::json row_json = nlohmann::json::array();
  for (const auto& r : rows) row_json.push_back(r.to_json());
  write_json_file(out / "ablation.json",
                  {{"schema_version", kReportSchemaVersion}, {"config", base.to_json()}, {"rows", row_json}});
  const std::string table = format_ablation_table(rows);
  {
    std::ofstream os(out / "ablation.txt");
    os << table;
    if (!os) throw IoError("write failed: " + (out / "ablation.txt").string());
  }
  run.output(out / "ablation.json");
  run.output(out / "ablation.txt");
  run.write(out / "run.json");
  std::cout << table;
  return kExitOk;
}

}  // namespace

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw UsageError(dir.string() + " is not empty (pass --force to overwrite)");
    }
  }
  fs::create_directories(dir);
}

void write_json_atomic(const fs::path& path, const nlohmann::json& value) {
  const fs::path tmp = path.string() + ".tmp";
  write_json_file(tmp, value);
  fs::rename(tmp, path);
}

AblationRow AblationRow::from_report(Ablation variant, const std::string& manifest_hash, const EvaluationReport& r) {
  AblationRow row;
  row.variant = variant;
  row.manifest_hash = manifest_hash;
  row.mse = r.phases[2].mse;
  row.psnr = r.phases[2].psnr;
  row.ssim = r.phases[2].ssim;
  row.dice = r.dice;
  row.iou = r.iou;
  row.hd95 = r.hd95;
  row.accuracy = r.classification.accuracy;
  row.sensitivity = r.classification.sensitivity;
  row.specificity = r.classification.specificity;
  row.f1 = r.classification.f1;
  return row;
}

nlohmann::json AblationRow::to_json() const {
  return {{"variant", std::string(ablation_name(variant))},
          {"manifest_hash", manifest_hash},
          {"mse", mse},
          {"psnr", psnr},
          {"ssim", ssim},
          {"dsc", dice},
          {"iou", iou},
          {"hd95", std::isfinite(hd95) ? nlohmann::json(hd95) : nlohmann::json(nullptr)},
          {"acc", accuracy},
          {"sens", sensitivity},
          {"spec", specificity},
          {"f1", f1}};
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(15) << "variant" << std::right;
  for (const char* h : {"MSE", "PSNR", "SSIM", "DSC", "IoU", "HD95", "Acc", "Sens", "Spec", "F1"}) {
    os << std::setw(10) << h;
  }
  os << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(15) << ablation_name(r.variant) << std::right << std::fixed;
    os << std::setw(10) << std::setprecision(5) << r.mse;
    os << std::setw(10) << std::setprecision(2) << r.psnr;
    os << std::setw(10) << std::setprecision(4) << r.ssim;
    os << std::setw(10) << std::setprecision(4) << r.dice;
    os << std::setw(10) << std::setprecision(4) << r.iou;
    if (std::isfinite(r.hd95)) os << std::setw(10) << std::setprecision(2) << r.hd95;
    else os << std::setw(10) << "inf";
    for (double v : {r.accuracy, r.sensitivity, r.specificity, r.f1}) os << std::setw(10) << std::setprecision(4) << v;
    os << '\n';
  }
  return os.str();
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"T-CACE phantom pipeline: generate, train, evaluate, synthesize, ablate"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a synthetic phantom dataset");
  g->add_option("--config", gen.config, "PhantomConfig JSON (defaults if omitted)");
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--seed", gen.seed, "Override master_seed");
  g->add_option("--cases", gen.cases, "Override case_count");
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset");
  t->add_option("--config", tr.config, "TrainConfig JSON (defaults if omitted)");
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--out", tr.out, "Output run directory")->required();
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--seed", tr.seed, "Override seed");
  t->add_option("--ablation", tr.ablation, "full | no_dtam | no_cte | no_t_encoding | baseline");
  t->add_flag("--force", tr.force, "Overwrite a non-empty output directory");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--out", ev.out, "Report JSON path")->required();
  e->add_flag("--oracle", ev.oracle, "Score ground truth against itself (self-check)");
  e->add_flag("--dump-attention", ev.dump_attention, "Write one attention CSV per (case, phase)");
  e->add_flag("--allow-other-data", ev.allow_other_data, "Skip the manifest hash check");
  e->add_flag("--force", ev.force, "Overwrite an existing report");

  SynthesizeArgs sy;
  auto* s = app.add_subcommand("synthesize", "Write synthesized phases, mask and class per case");
  s->add_option("--checkpoint", sy.checkpoint, "Checkpoint directory")->required();
  s->add_option("--data", sy.data, "Dataset directory")->required();
  s->add_option("--split", sy.split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  s->add_option("--out", sy.out, "Output directory")->required();
  s->add_option("--limit", sy.limit, "Process at most this many cases");
  s->add_flag("--dump-attention", sy.dump_attention, "Write one attention CSV per (case, phase)");
  s->add_flag("--allow-other-data", sy.allow_other_data, "Skip the manifest hash check");
  s->add_flag("--force", sy.force, "Overwrite a non-empty output directory");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate all five ablation variants");
  a->add_option("--config", ab.config, "Base TrainConfig JSON");
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_option("--epochs", ab.epochs, "Override epochs");
  a->add_option("--seed", ab.seed, "Override seed");
  a->add_flag("--force", ab.force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_evaluate(ev);
    if (*s) return cmd_synthesize(sy);
    if (*a) return cmd_ablate(ab);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitIncompatible;
  } catch (const IoError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitIncompatible;
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"tcace"};
  for (const auto& s : args) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tcace
