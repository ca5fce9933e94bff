#pragma once

// Synthetic contrast-dynamics phantoms: a smooth background, one elliptical
// lesion, and three post-contrast phases whose in-lesion enhancement follows a
// class-specific time curve (malignant: wash-in/washout, benign: progressive).

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

enum class LesionClass : int { kBenign = 0, kMalignant = 1 };

enum class Phase : std::size_t { kArt = 0, kPV = 1, kDelay = 2 };
inline constexpr std::size_t kPhaseCount = 3;
inline constexpr std::array<const char*, kPhaseCount> kPhaseNames{"art", "pv", "delay"};

// 30 s / 75 s / 300 s normalized by the delayed-phase time.
inline constexpr std::array<double, kPhaseCount> kDefaultPhaseTimes{0.1, 0.25, 1.0};

using PhaseTimes = std::array<double, kPhaseCount>;

struct LesionSpec {
  double center_row = 32.0;
  double center_col = 32.0;
  double radius_row = 8.0;
  double radius_col = 8.0;
  LesionClass label = LesionClass::kBenign;
  double base_intensity = 0.6;
  double amplitude = 0.3;
  double noise_sigma = 0.0;
};

struct CaseRecord {
  Tensor ncmri;                            // {H, W} in [0, 1]
  Tensor mask;                             // {H, W} in {0, 1}
  std::array<Tensor, kPhaseCount> phases;  // Art, PV, Delay
  PhaseTimes times = kDefaultPhaseTimes;
  LesionClass label = LesionClass::kBenign;
  std::uint64_t seed = 0;
};

struct Range {
  double lo;
  double hi;
};

struct PhantomConfig {
  std::size_t image_size = 64;
  std::size_t case_count = 200;
  double class_balance = 0.5;  // fraction malignant
  Range radius{5.0, 11.0};
  Range background{0.30, 0.50};
  // NCMRI lesion intensity differs by class so the class is observable
  // before contrast: benign lesions are hyperintense, malignant hypointense.
  Range benign_base{0.55, 0.65};
  Range malignant_base{0.12, 0.22};
  Range amplitude{0.25, 0.35};
  double noise_sigma = 0.02;
  std::uint64_t master_seed = 42;
  PhaseTimes times = kDefaultPhaseTimes;

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomConfig from_json(const nlohmann::json& j);
};

// Intensity multiplier at normalized time t. Malignant lesions follow a
// gamma-variate peaking at peak_time; benign lesions fill as 1 - exp(-3t).
double enhancement_curve(LesionClass label, double t, double peak_time = kDefaultPhaseTimes[0]);

// Throws GenerationError naming the first violated constraint.
void validate_lesion(const LesionSpec& spec, std::size_t image_size);

Tensor rasterize_ellipse(const LesionSpec& spec, std::size_t image_size);

CaseRecord generate_case(const LesionSpec& spec, const PhaseTimes& times, std::uint64_t seed,
                         std::size_t image_size = 64, const Range& background = {0.30, 0.50});

LesionSpec sample_lesion(const PhantomConfig& config, LesionClass label, std::mt19937_64& rng);

// --- dataset on disk ---------------------------------------------------------

struct ManifestEntry {
  std::string id;
  LesionClass label = LesionClass::kBenign;
  std::string split;  // "train" | "val" | "test"
  std::uint64_t seed = 0;
};

struct Manifest {
  static constexpr int kSchemaVersion = 1;
  PhantomConfig config;
  std::vector<ManifestEntry> cases;

  std::vector<ManifestEntry> split(const std::string& name) const;
  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
  // FNV-1a 64 of the canonical manifest JSON, hex encoded.
  std::string hash() const;
};

// Writes one directory per case plus manifest.json; returns the manifest.
Manifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& data_dir);
CaseRecord load_case(const std::filesystem::path& data_dir, const ManifestEntry& entry);
void save_case(const std::filesystem::path& case_dir, const CaseRecord& record);

// 8-bit binary PGM (P5); values are clamped to [0, 1] then scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace tcace
