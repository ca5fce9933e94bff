#include "tcace/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <numbers>
#include <sstream>

namespace tcace {

namespace fs = std::filesystem;

namespace {

double uniform(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void check_range(const Range& r, const char* name, double lo, double hi) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi) {
    throw ConfigError(std::string("phantom config: ") + name + " must satisfy " +
                      std::to_string(lo) + " <= lo <= hi <= " + std::to_string(hi));
  }
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("phantom config: ") + key + " must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

// Sum of a few random low-frequency cosines rescaled into `range`.
std::vector<double> background_field(std::size_t n, const Range& range, std::mt19937_64& rng) {
  constexpr int kWaves = 4;
  std::uniform_real_distribution<double> freq(0.5, 2.5);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::vector<double> field(n * n, 0.0);
  for (int w = 0; w < kWaves; ++w) {
    const double fr = freq(rng), fc = freq(rng), ph = angle(rng);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c)
        field[r * n + c] += std::cos(2.0 * std::numbers::pi *
                                         (fr * static_cast<double>(r) + fc * static_cast<double>(c)) /
                                         static_cast<double>(n) + ph);
  }
  const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
  const double lo = *mn, span = std::max(*mx - *mn, 1e-12);
  for (double& v : field) v = range.lo + (range.hi - range.lo) * (v - lo) / span;
  return field;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

// --- config -------------------------------------------------------------------

void PhantomConfig::validate() const {
  if (image_size < 16) throw ConfigError("phantom config: image_size must be >= 16");
  if (case_count < 2) throw ConfigError("phantom config: case_count must be >= 2");
  if (!(class_balance > 0.0 && class_balance < 1.0)) throw ConfigError("phantom config: class_balance must lie in (0, 1)");
  if (!(noise_sigma >= 0.0 && noise_sigma <= 0.05)) throw ConfigError("phantom config: noise_sigma must lie in [0, 0.05]");
  check_range(radius, "radius", 1.0, static_cast<double>(image_size) / 2.0 - 3.0);
  check_range(background, "background", 0.0, 1.0);
  check_range(benign_base, "benign_base", 0.0, 1.0);
  check_range(malignant_base, "malignant_base", 0.0, 1.0);
  check_range(amplitude, "amplitude", 0.0, 1.0);
  if (benign_base.hi + amplitude.hi > 1.0 || malignant_base.hi + amplitude.hi > 1.0) {
    throw ConfigError("phantom config: base_intensity + amplitude may exceed 1");
  }
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    if (!(times[i] > 0.0 && times[i] <= 1.0)) throw ConfigError("phantom config: times must lie in (0, 1]");
    if (i > 0 && !(times[i] > times[i - 1])) throw ConfigError("phantom config: times must be strictly increasing");
  }
}

nlohmann::json PhantomConfig::to_json() const {
  return {{"image_size", image_size},
          {"case_count", case_count},
          {"class_balance", class_balance},
          {"radius", range_json(radius)},
          {"background", range_json(background)},
          {"benign_base", range_json(benign_base)},
          {"malignant_base", range_json(malignant_base)},
          {"amplitude", range_json(amplitude)},
          {"noise_sigma", noise_sigma},
          {"master_seed", master_seed},
          {"times", times}};
}

PhantomConfig PhantomConfig::from_json(const nlohmann::json& j) {
  static const char* kKnown[] = {"image_size", "case_count", "class_balance", "radius",
                                 "background", "benign_base", "malignant_base", "amplitude",
                                 "noise_sigma", "master_seed", "times"};
  if (!j.is_object()) throw ConfigError("phantom config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ConfigError("phantom config: unknown field '" + key + "'");
    }
  }
  PhantomConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.case_count = j.value("case_count", c.case_count);
    c.class_balance = j.value("class_balance", c.class_balance);
    c.radius = range_from(j, "radius", c.radius);
    c.background = range_from(j, "background", c.background);
    c.benign_base = range_from(j, "benign_base", c.benign_base);
    c.malignant_base = range_from(j, "malignant_base", c.malignant_base);
    c.amplitude = range_from(j, "amplitude", c.amplitude);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.master_seed = j.value("master_seed", c.master_seed);
    if (j.contains("times")) c.times = j.at("times").get<PhaseTimes>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- generation ---------------------------------------------------------------

double enhancement_curve(LesionClass label, double t, double peak_time) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("enhancement_curve: t=" + std::to_string(t) + " outside [0, 1]");
  if (label == LesionClass::kMalignant) {
    if (!(peak_time > 0.0)) throw DomainError("enhancement_curve: peak_time must be positive");
    const double u = t / peak_time;
    return u * std::exp(1.0 - u);
  }
  return 1.0 - std::exp(-3.0 * t);
}

void validate_lesion(const LesionSpec& s, std::size_t image_size) {
  constexpr double kMargin = 2.0;
  const double last = static_cast<double>(image_size) - 1.0;
  if (!(s.radius_row > 0.0 && s.radius_col > 0.0)) throw GenerationError("lesion: radii must be positive");
  if (s.center_row - s.radius_row < kMargin || s.center_row + s.radius_row > last - kMargin ||
      s.center_col - s.radius_col < kMargin || s.center_col + s.radius_col > last - kMargin) {
    throw GenerationError("lesion: ellipse violates the 2-pixel image margin");
  }
  if (!(s.base_intensity >= 0.0 && s.base_intensity <= 1.0)) throw GenerationError("lesion: base_intensity outside [0, 1]");
  if (!(s.amplitude >= 0.0 && s.amplitude <= 1.0)) throw GenerationError("lesion: amplitude outside [0, 1]");
  if (s.base_intensity + s.amplitude > 1.0) throw GenerationError("lesion: base_intensity + amplitude exceeds 1");
  if (!(s.noise_sigma >= 0.0 && s.noise_sigma <= 0.05)) throw GenerationError("lesion: noise_sigma outside [0, 0.05]");
}

Tensor rasterize_ellipse(const LesionSpec& s, std::size_t n) {
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double dr = (static_cast<double>(r) - s.center_row) / s.radius_row;
      const double dc = (static_cast<double>(c) - s.center_col) / s.radius_col;
      if (dr * dr + dc * dc <= 1.0) mask[r * n + c] = 1.0;
    }
  }
  return Tensor({n, n}, std::move(mask));
}

CaseRecord generate_case(const LesionSpec& spec, const PhaseTimes& times, std::uint64_t seed,
                         std::size_t n, const Range& background) {
  validate_lesion(spec, n);
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    if (!(times[i] > 0.0 && times[i] <= 1.0) || (i > 0 && !(times[i] > times[i - 1]))) {
      throw GenerationError("generate_case: times must be strictly increasing in (0, 1]");
    }
  }
  std::mt19937_64 rng(seed);
  CaseRecord rec;
  rec.times = times;
  rec.label = spec.label;
  rec.seed = seed;
  rec.mask = rasterize_ellipse(spec, n);
  const auto mask = rec.mask.data();

  std::vector<double> nc = background_field(n, background, rng);
  for (std::size_t i = 0; i < nc.size(); ++i) {
    if (mask[i] > 0.5) nc[i] = spec.base_intensity;
  }
  rec.ncmri = Tensor({n, n}, nc);

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    const double lesion_gain = spec.amplitude * enhancement_curve(spec.label, times[p], times[0]);
    const double parenchyma_gain = 0.1 * times[p];
    std::vector<double> img(nc.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      double v = nc[i] + (mask[i] > 0.5 ? lesion_gain : parenchyma_gain);
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
      img[i] = std::clamp(v, 0.0, 1.0);
    }
    rec.phases[p] = Tensor({n, n}, std::move(img));
  }
  return rec;
}

LesionSpec sample_lesion(const PhantomConfig& config, LesionClass label, std::mt19937_64& rng) {
  const double n = static_cast<double>(config.image_size);
  LesionSpec s;
  s.label = label;
  s.radius_row = uniform(rng, config.radius);
  s.radius_col = uniform(rng, config.radius);
  // Centers keep the whole ellipse 2 pixels inside the image.
  s.center_row = uniform(rng, {s.radius_row + 2.0, n - 3.0 - s.radius_row});
  s.center_col = uniform(rng, {s.radius_col + 2.0, n - 3.0 - s.radius_col});
  s.base_intensity = uniform(rng, label == LesionClass::kMalignant ? config.malignant_base : config.benign_base);
  s.amplitude = uniform(rng, config.amplitude);
  s.noise_sigma = config.noise_sigma;
  return s;
}

// --- dataset ------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  std::copy_if(cases.begin(), cases.end(), std::back_inserter(out),
               [&](const ManifestEntry& e) { return e.split == name; });
  return out;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : cases) {
    list.push_back({{"id", e.id}, {"dir", e.id}, {"label", static_cast<int>(e.label)}, {"split", e.split}, {"seed", e.seed}});
  }
  return {{"schema_version", kSchemaVersion}, {"config", config.to_json()}, {"cases", list}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw ConfigError("manifest: unsupported schema_version " + j.at("schema_version").dump());
    }
    m.config = PhantomConfig::from_json(j.at("config"));
    for (const auto& c : j.at("cases")) {
      ManifestEntry e;
      e.id = c.at("id").get<std::string>();
      const int label = c.at("label").get<int>();
      if (label != 0 && label != 1) throw ConfigError("manifest: invalid label for " + e.id);
      e.label = static_cast<LesionClass>(label);
      e.split = c.at("split").get<std::string>();
      e.seed = c.at("seed").get<std::uint64_t>();
      m.cases.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

std::string Manifest::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_json().dump());
  return os.str();
}

void save_case(const fs::path& dir, const CaseRecord& rec) {
  save_tnsr((dir / "ncmri.t").string(), rec.ncmri);
  save_tnsr((dir / "mask.t").string(), rec.mask);
  save_tnsr((dir / "phase_art.t").string(), rec.phases[0]);
  save_tnsr((dir / "phase_pv.t").string(), rec.phases[1]);
  save_tnsr((dir / "phase_delay.t").string(), rec.phases[2]);
  write_json(dir / "meta.json", {{"label", static_cast<int>(rec.label)}, {"times", rec.times}, {"seed", rec.seed}});
}

Manifest generate_dataset(const PhantomConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory " + out_dir.string());

  const std::size_t n = config.case_count;
  const auto malignant = static_cast<std::size_t>(std::llround(config.class_balance * static_cast<double>(n)));
  std::vector<LesionClass> labels(n, LesionClass::kBenign);
  std::fill_n(labels.begin(), std::min(malignant, n), LesionClass::kMalignant);
  std::mt19937_64 rng(config.master_seed);
  std::shuffle(labels.begin(), labels.end(), rng);

  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
  const auto n_test = n_val;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> split(n, "train");
  for (std::size_t k = 0; k < n_val + n_test && k < n; ++k) split[order[k]] = k < n_val ? "val" : "test";

  Manifest manifest;
  manifest.config = config;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    std::ostringstream id;
    id << "case_" << std::setw(4) << std::setfill('0') << i;
    e.id = id.str();
    e.label = labels[i];
    e.split = split[i];
    e.seed = config.master_seed + i;

    std::mt19937_64 case_rng(e.seed);
    const LesionSpec spec = sample_lesion(config, e.label, case_rng);
    const CaseRecord rec = generate_case(spec, config.times, e.seed, config.image_size, config.background);
    const fs::path dir = out_dir / e.id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    save_case(dir, rec);
    manifest.cases.push_back(std::move(e));
  }
  write_json(out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

Manifest load_manifest(const fs::path& data_dir) {
  const fs::path path = data_dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  return Manifest::from_json(read_json(path));
}

CaseRecord load_case(const fs::path& data_dir, const ManifestEntry& entry) {
  const fs::path dir = data_dir / entry.id;
  CaseRecord rec;
  rec.ncmri = load_tnsr((dir / "ncmri.t").string());
  rec.mask = load_tnsr((dir / "mask.t").string());
  rec.phases[0] = load_tnsr((dir / "phase_art.t").string());
  rec.phases[1] = load_tnsr((dir / "phase_pv.t").string());
  rec.phases[2] = load_tnsr((dir / "phase_delay.t").string());
  const auto meta = read_json(dir / "meta.json");
  rec.times = meta.at("times").get<PhaseTimes>();
  rec.label = static_cast<LesionClass>(meta.at("label").get<int>());
  rec.seed = meta.at("seed").get<std::uint64_t>();
  if (rec.label != entry.label) throw ConfigError("case " + entry.id + ": label disagrees with manifest");
  return rec;
}

void write_pgm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("write_pgm: expected {H, W}, got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << image.shape()[1] << ' ' << image.shape()[0] << "\n255\n";
  for (double v : image.data()) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(byte));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace tcace
