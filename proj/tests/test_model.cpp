#include <cmath>

#include "doctest.h"
#include "grad_suite.hpp"
#include "support.hpp"
#include "tcace/model.hpp"
#include "tcace/train.hpp"

using namespace tcace;
using tcace::testing::bit_equal;
using tcace::testing::random_tensor;

namespace {

using tcace::testing::random_case;

ModelConfig mini(Ablation a = Ablation::kFull) { return tcace::testing::mini_model(a); }

void zero_param(TcaceModel& model, const std::string& name) {
  Tensor p = model.params().get(name);
  for (double& v : p.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("ablation names") {
  for (Ablation a : kAblationOrder) CHECK(parse_ablation(ablation_name(a)) == a);
  CHECK(ablation_name(Ablation::kNoDtam) == "no_dtam");
  CHECK_THROWS_AS(parse_ablation("nodtam"), ConfigError);
}

TEST_CASE("aggregate segmentation examples") {
  const Tensor pos = Tensor::full({1, 2}, 3.0), neg = Tensor::full({1, 2}, -3.0);
  CHECK(aggregate_segmentation(pos, pos, neg)[0] == 1.0);
  CHECK(aggregate_segmentation(neg, neg, pos)[0] == 0.0);
  CHECK(aggregate_segmentation(neg, neg, neg)[1] == 0.0);
  CHECK(aggregate_segmentation(pos, pos, pos)[1] == 1.0);
  // sigmoid(0) = 0.5 is not above the threshold.
  const Tensor zero = Tensor::zeros({1, 2});
  CHECK(aggregate_segmentation(zero, zero, pos)[0] == 0.0);
  CHECK_THROWS_AS(aggregate_segmentation(pos, pos, Tensor::zeros({2, 1})), ContractError);
}

TEST_CASE("aggregate segmentation matches a vote-count oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = random_tensor({4, 4}, rng, -4, 4), b = random_tensor({4, 4}, rng, -4, 4),
                 c = random_tensor({4, 4}, rng, -4, 4);
    const Tensor voted = aggregate_segmentation(a, b, c);
    for (std::size_t i = 0; i < 16; ++i) {
      int votes = 0;
      for (const Tensor* m : {&a, &b, &c}) votes += 1.0 / (1.0 + std::exp(-(*m)[i])) > 0.5 ? 1 : 0;
      CHECK(voted[i] == (votes >= 2 ? 1.0 : 0.0));
    }
    const Tensor same = aggregate_segmentation(a, a, a);
    for (std::size_t i = 0; i < 16; ++i) CHECK(same[i] == (a[i] > 0.0 ? 1.0 : 0.0));
  }
}

TEST_CASE("model run shapes and determinism") {
  std::mt19937_64 rng(2);
  TcaceModel model(mini(), 7);
  const CaseRecord rec = random_case(rng);
  const PredictionBundle a = model.run(rec.ncmri, rec.mask, rec.times);
  REQUIRE(a.phases.size() == 3);
  for (const auto& p : a.phases) {
    CHECK(p.image.shape() == Shape{16, 16});
    CHECK(p.seg_logits.shape() == Shape{16, 16});
    CHECK(p.feature.shape() == Shape{8});
    for (double v : p.image.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK(std::abs(a.classifier->class_probs[0] + a.classifier->class_probs[1] - 1.0) < 1e-12);
  CHECK(a.classifier->per_phase_probs.shape() == Shape{3});
  CHECK(model.params().get("classifier.fused.weight").shape() == Shape{32, 2});

  const PredictionBundle b = model.run(rec.ncmri, rec.mask, rec.times);
  for (std::size_t i = 0; i < 3; ++i) CHECK(bit_equal(a.phases[i].image, b.phases[i].image));
  CHECK(bit_equal(a.aggregated_mask, b.aggregated_mask));
  CHECK(a.signal == b.signal);

  TcaceModel twin(mini(), 7);
  CHECK(bit_equal(twin.run(rec.ncmri, rec.mask, rec.times).phases[2].image, a.phases[2].image));
}

TEST_CASE("autoregressive causality under truncation") {
  std::mt19937_64 rng(3);
  TcaceModel model(mini(), 8);
  for (int trial = 0; trial < 20; ++trial) {
    const CaseRecord rec = random_case(rng);
    const PredictionBundle full = model.run(rec.ncmri, rec.mask, rec.times);
    for (std::size_t count = 1; count < 3; ++count) {
      const PredictionBundle cut = model.run(rec.ncmri, rec.mask, rec.times, {count, nullptr});
      REQUIRE(cut.phases.size() == count);
      CHECK_FALSE(cut.classifier.has_value());
      for (std::size_t i = 0; i < count; ++i) {
        CHECK(bit_equal(cut.phases[i].image, full.phases[i].image));
        CHECK(bit_equal(cut.phases[i].seg_logits, full.phases[i].seg_logits));
      }
    }
  }
  CHECK_THROWS_AS(model.run(random_case(rng).ncmri, random_case(rng).mask, kDefaultPhaseTimes, {0, nullptr}),
                  ContractError);
}

TEST_CASE("synthesize_phase prior-count contract") {
  std::mt19937_64 rng(4);
  TcaceModel model(mini(), 9);
  const CaseRecord rec = random_case(rng);
  const Tensor tokens = model.encode(rec.ncmri, rec.mask);
  const auto art = model.synthesize_phase(0, tokens, {}, rec.times);
  CHECK(art.output.image.shape() == Shape{16, 16});
  const std::vector<Tensor> none;
  CHECK_THROWS_AS(model.synthesize_phase(1, tokens, none, rec.times), ContractError);
  const std::vector<Tensor> two{art.tokens, art.tokens};
  CHECK_THROWS_AS(model.synthesize_phase(1, tokens, two, rec.times), ContractError);
  CHECK_THROWS_AS(model.synthesize_phase(3, tokens, two, rec.times), ContractError);
}

TEST_CASE("forced degenerate outputs") {
  std::mt19937_64 rng(5);
  TcaceModel model(mini(), 10);
  zero_param(model, "decoder.image.weight");
  zero_param(model, "decoder.image.bias");
  zero_param(model, "classifier.fused.weight");
  zero_param(model, "classifier.fused.bias");
  const CaseRecord rec = random_case(rng);
  const PredictionBundle b = model.run(rec.ncmri, rec.mask, rec.times);
  for (const auto& p : b.phases) {
    for (double v : p.image.data()) CHECK(v == 0.5);
  }
  CHECK(b.classifier->class_probs[0] == 0.5);
  CHECK(b.classifier->class_probs[1] == 0.5);
  const std::vector<PhaseOutput> two(b.phases.begin(), b.phases.begin() + 2);
  CHECK_THROWS_AS(model.fuse_and_classify(model.encode(rec.ncmri, rec.mask), two), ContractError);
}

TEST_CASE("ablation switches") {
  std::mt19937_64 rng(6);
  const CaseRecord rec = random_case(rng);
  for (Ablation a : kAblationOrder) {
    TcaceModel model(mini(a), 11);
    reset_gaussian_decay_evaluations();
    (void)model.run(rec.ncmri, rec.mask, rec.times);
    const bool decays = a != Ablation::kBaseline && a != Ablation::kNoDtam;
    CHECK((gaussian_decay_evaluations() > 0) == decays);
    const bool fused = a != Ablation::kBaseline && a != Ablation::kNoCte;
    CHECK(model.config().block_len() == 16 + (fused ? 1 : 0));
  }
  TrainConfig cfg;
  cfg.model = mini(Ablation::kBaseline);
  CHECK(cfg.effective_weights().tcc == 0.0);
  cfg.model.ablation = Ablation::kNoCte;
  CHECK(cfg.effective_weights().tcc == 1.0);
}

TEST_CASE("no_t_encoding ignores acquisition times") {
  std::mt19937_64 rng(7);
  const CaseRecord rec = random_case(rng);
  const PhaseTimes shifted{0.2, 0.3, 0.9};
  // Times still enter through the decay kernel; disable it to isolate the token.
  ModelConfig no_time_no_decay = mini(Ablation::kNoTEncoding);
  no_time_no_decay.sigma = 1e300;
  TcaceModel iso(no_time_no_decay, 12);
  CHECK(tcace::testing::max_abs_diff(iso.run(rec.ncmri, rec.mask, rec.times).phases[1].image.data(),
                                     iso.run(rec.ncmri, rec.mask, shifted).phases[1].image.data()) == 0.0);
  TcaceModel full(mini(), 12);
  CHECK(tcace::testing::max_abs_diff(full.run(rec.ncmri, rec.mask, rec.times).phases[1].image.data(),
                                     full.run(rec.ncmri, rec.mask, shifted).phases[1].image.data()) > 0.0);
}

TEST_CASE("end-to-end total loss gradient on a 16x16 model") {
  const double worst = tcace::testing::end_to_end_worst(100);
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}
