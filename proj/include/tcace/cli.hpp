#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcace/errors.hpp"
#include "tcace/evaluate.hpp"
#include "tcace/model.hpp"

namespace tcace {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitIncompatible = 3, kExitNumerical = 4 };

class UsageError : public Error {
 public:
  using Error::Error;
};

// Entry point of the `tcace` binary. Returns the process exit code; never
// throws.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

// Throws UsageError when dir exists, is non-empty and force is false.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

// Writes JSON to path.tmp and renames it over path.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& value);

struct AblationRow {
  Ablation variant = Ablation::kFull;
  std::string manifest_hash;
  double mse = 0, psnr = 0, ssim = 0;  // Delay phase
  double dice = 0, iou = 0, hd95 = 0;
  double accuracy = 0, sensitivity = 0, specificity = 0, f1 = 0;

  static AblationRow from_report(Ablation variant, const std::string& manifest_hash, const EvaluationReport& r);
  nlohmann::json to_json() const;
};

// Fixed-width text table with one row per variant.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace tcace
