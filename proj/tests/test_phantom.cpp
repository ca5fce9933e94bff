#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "tcace/phantom.hpp"

using namespace tcace;
namespace fs = std::filesystem;

namespace {

double masked_mean(const Tensor& img, const Tensor& mask) {
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (mask[i] > 0.5) {
      s += img[i];
      n += 1.0;
    }
  }
  return s / n;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tcace_phantom_" + name);
  fs::remove_all(p);
  return p;
}

LesionSpec zero_noise(LesionSpec s) {
  s.noise_sigma = 0.0;
  return s;
}

}  // namespace

TEST_CASE("enhancement curve examples") {
  CHECK(enhancement_curve(LesionClass::kBenign, 0.0) == 0.0);
  CHECK(enhancement_curve(LesionClass::kMalignant, 0.1, 0.1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(enhancement_curve(LesionClass::kBenign, 1.0) - 0.950212931632136) < 1e-12);
  CHECK_THROWS_AS(enhancement_curve(LesionClass::kBenign, 1.5), DomainError);
  CHECK_THROWS_AS(enhancement_curve(LesionClass::kMalignant, -0.1), DomainError);
  // Washout for malignant, monotone fill for benign at the default times.
  const auto& t = kDefaultPhaseTimes;
  CHECK(enhancement_curve(LesionClass::kMalignant, t[2]) < enhancement_curve(LesionClass::kMalignant, t[1]));
  CHECK(enhancement_curve(LesionClass::kBenign, t[2]) > enhancement_curve(LesionClass::kBenign, t[1]));
}

TEST_CASE("generate_case examples") {
  LesionSpec spec;
  spec.amplitude = 0.0;
  spec.noise_sigma = 0.0;
  const CaseRecord rec = generate_case(spec, kDefaultPhaseTimes, 9);
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    for (std::size_t i = 0; i < rec.ncmri.size(); ++i) {
      const double expected = rec.mask[i] > 0.5 ? rec.ncmri[i] : std::min(1.0, rec.ncmri[i] + 0.1 * kDefaultPhaseTimes[p]);
      CHECK(rec.phases[p][i] == doctest::Approx(expected).epsilon(1e-15));
    }
  }
  const CaseRecord a = generate_case(LesionSpec{}, kDefaultPhaseTimes, 4);
  const CaseRecord b = generate_case(LesionSpec{}, kDefaultPhaseTimes, 4);
  CHECK(tcace::testing::bit_equal(a.ncmri, b.ncmri));
  for (std::size_t p = 0; p < kPhaseCount; ++p) CHECK(tcace::testing::bit_equal(a.phases[p], b.phases[p]));

  LesionSpec mal;
  mal.label = LesionClass::kMalignant;
  mal.base_intensity = 0.2;
  mal.noise_sigma = 0.0;
  const CaseRecord m = generate_case(mal, kDefaultPhaseTimes, 5);
  CHECK(masked_mean(m.phases[2], m.mask) < masked_mean(m.phases[1], m.mask));
}

TEST_CASE("generate_case errors name the constraint") {
  LesionSpec s;
  s.center_row = 3.0;
  try {
    generate_case(s, kDefaultPhaseTimes, 1);
    FAIL("expected GenerationError");
  } catch (const GenerationError& e) {
    CHECK(std::string(e.what()).find("margin") != std::string::npos);
  }
  LesionSpec bright;
  bright.base_intensity = 0.8;
  bright.amplitude = 0.3;
  CHECK_THROWS_AS(generate_case(bright, kDefaultPhaseTimes, 1), GenerationError);
  CHECK_THROWS_AS(generate_case(LesionSpec{}, PhaseTimes{0.5, 0.25, 1.0}, 1), GenerationError);
}

TEST_CASE("mask is exactly the rasterized ellipse and images lie in [0, 1]") {
  PhantomConfig cfg;
  std::mt19937_64 rng(17);
  for (int i = 0; i < 40; ++i) {
    const auto label = i % 2 ? LesionClass::kMalignant : LesionClass::kBenign;
    const LesionSpec spec = sample_lesion(cfg, label, rng);
    const CaseRecord rec = generate_case(spec, cfg.times, 100 + i);
    CHECK(tcace::testing::bit_equal(rec.mask, rasterize_ellipse(spec, 64)));
    for (const auto& img : {rec.ncmri, rec.phases[0], rec.phases[1], rec.phases[2]}) {
      for (double v : img.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_CASE("contrast signatures and Bayes separability on zero-noise phantoms") {
  PhantomConfig cfg;
  cfg.noise_sigma = 0.0;
  std::mt19937_64 rng(23);
  for (int i = 0; i < 200; ++i) {
    const auto label = i % 2 ? LesionClass::kMalignant : LesionClass::kBenign;
    const CaseRecord rec = generate_case(zero_noise(sample_lesion(cfg, label, rng)), cfg.times, 500 + i);
    const double nc = masked_mean(rec.ncmri, rec.mask);
    const double art = masked_mean(rec.phases[0], rec.mask);
    const double pv = masked_mean(rec.phases[1], rec.mask);
    const double delay = masked_mean(rec.phases[2], rec.mask);
    if (label == LesionClass::kMalignant) {
      CHECK(art > nc);
      CHECK(delay < pv);
      CHECK(art - delay > 0.0);
    } else {
      CHECK(nc <= art);
      CHECK(art <= pv);
      CHECK(pv <= delay);
      CHECK(art - delay < 0.0);
    }
  }
}

TEST_CASE("config validation and JSON round trip") {
  PhantomConfig cfg;
  cfg.case_count = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PhantomConfig{};
  cfg.class_balance = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  const PhantomConfig back = PhantomConfig::from_json(PhantomConfig{}.to_json());
  CHECK(back.to_json() == PhantomConfig{}.to_json());
  CHECK_THROWS_AS(PhantomConfig::from_json({{"case_cont", 10}}), ConfigError);
}

TEST_CASE("generate_dataset balance, splits, determinism") {
  PhantomConfig cfg;
  cfg.case_count = 10;
  const fs::path a = scratch("a"), b = scratch("b");
  const Manifest m = generate_dataset(cfg, a);
  std::size_t malignant = 0;
  for (const auto& e : m.cases) malignant += e.label == LesionClass::kMalignant ? 1 : 0;
  CHECK(malignant == 5);
  CHECK(m.split("train").size() + m.split("val").size() + m.split("test").size() == 10);

  const Manifest m2 = generate_dataset(cfg, b);
  CHECK(m.to_json() == m2.to_json());
  CHECK(m.hash() == m2.hash());
  for (const auto& e : m.cases) {
    const CaseRecord ra = load_case(a, e), rb = load_case(b, e);
    CHECK(tcace::testing::bit_equal(ra.phases[2], rb.phases[2]));
    CHECK(ra.label == e.label);
    CHECK(ra.seed == cfg.master_seed + std::stoull(e.id.substr(5)));
  }
  const Manifest loaded = load_manifest(a);
  CHECK(loaded.hash() == m.hash());
  CHECK(loaded.to_json().at("schema_version") == 1);
  fs::remove_all(a);
  fs::remove_all(b);

  PhantomConfig big;
  big.case_count = 200;
  const fs::path c = scratch("c");
  const Manifest mc = generate_dataset(big, c);
  CHECK(mc.split("train").size() == 140);
  CHECK(mc.split("val").size() == 30);
  CHECK(mc.split("test").size() == 30);
  fs::remove_all(c);
}

TEST_CASE("dataset I/O errors") {
  CHECK_THROWS_AS(load_manifest(scratch("missing")), IoError);
  const fs::path file = fs::temp_directory_path() / "tcace_phantom_file";
  std::ofstream(file) << "x";
  CHECK_THROWS_AS(generate_dataset(PhantomConfig{}, file / "sub"), IoError);
  fs::remove(file);
}

TEST_CASE("PGM export") {
  const fs::path p = fs::temp_directory_path() / "tcace_phantom.pgm";
  write_pgm(p, Tensor({2, 3}, {0.0, 0.5, 1.0, 1.5, -1.0, 0.25}));
  std::ifstream is(p, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(is)), {});
  CHECK(content.rfind("P5\n3 2\n255\n", 0) == 0);
  const std::string px = content.substr(std::string("P5\n3 2\n255\n").size());
  REQUIRE(px.size() == 6);
  CHECK(static_cast<unsigned char>(px[0]) == 0);
  CHECK(static_cast<unsigned char>(px[2]) == 255);
  CHECK(static_cast<unsigned char>(px[3]) == 255);
  CHECK(static_cast<unsigned char>(px[4]) == 0);
  fs::remove(p);
}
