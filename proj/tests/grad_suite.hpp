#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance binary. Each function returns the worst relative error seen.

#include <functional>
#include <string>
#include <vector>

#include "support.hpp"
#include "tcace/dtam.hpp"
#include "tcace/encoder.hpp"
#include "tcace/model.hpp"
#include "tcace/tcc.hpp"
#include "tcace/train.hpp"

namespace tcace::testing {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> op;
};

inline double worst_op_error(const OpCase& c, int trials, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    auto inputs = c.make_inputs(rng);
    std::mt19937_64 probe_rng(rng());
    const Tensor y0 = [&] {
      NoGradScope ng;
      return c.op(inputs);
    }();
    // Random output weights give every element a distinct adjoint.
    const Tensor weights = random_tensor(y0.shape(), probe_rng);
    const auto f = [&](const std::vector<Tensor>& x) { return sum(mul(c.op(x), weights)); };
    worst = std::max(worst, grad_check(f, inputs, rng).rel_error);
  }
  return worst;
}

inline std::vector<OpCase> op_catalog() {
  using Inputs = std::vector<Tensor>;
  auto one = [](Shape s) { return [s](std::mt19937_64& r) { return Inputs{random_tensor(s, r, -1, 1, true)}; }; };
  auto two = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& r) {
      return Inputs{random_tensor(a, r, -1, 1, true), random_tensor(b, r, -1, 1, true)};
    };
  };
  auto away = [](Shape s, std::vector<double> kinks) {
    return [s, kinks](std::mt19937_64& r) { return Inputs{random_away_from(s, r, kinks, 1e-3)}; };
  };
  const std::vector<std::size_t> index{3, 0, 0, 5, 2, 1};
  return {
      {"matmul", two({3, 4}, {4, 2}), [](auto& x) { return matmul(x[0], x[1]); }},
      {"transpose", one({3, 5}), [](auto& x) { return transpose(x[0]); }},
      {"add", two({3, 4}, {3, 4}), [](auto& x) { return add(x[0], x[1]); }},
      {"add broadcast", two({3, 4}, {4}), [](auto& x) { return add(x[0], x[1]); }},
      {"sub broadcast", two({2, 3, 4}, {3, 4}), [](auto& x) { return sub(x[0], x[1]); }},
      {"mul broadcast", two({3, 4}, {4}), [](auto& x) { return mul(x[0], x[1]); }},
      {"div",
       [](std::mt19937_64& r) {
         return Inputs{random_tensor({3, 4}, r, -1, 1, true), random_tensor({4}, r, 0.5, 2.0, true)};
       },
       [](auto& x) { return div(x[0], x[1]); }},
      {"scale", one({5}), [](auto& x) { return scale(x[0], -1.7); }},
      {"add_scalar", one({5}), [](auto& x) { return add_scalar(x[0], 0.3); }},
      {"exp", one({2, 3}), [](auto& x) { return exp(x[0]); }},
      {"log", [](std::mt19937_64& r) { return Inputs{random_tensor({6}, r, 0.2, 2.0, true)}; },
       [](auto& x) { return log(x[0]); }},
      {"sigmoid", one({2, 3}), [](auto& x) { return sigmoid(x[0]); }},
      {"relu", away({8}, {0.0}), [](auto& x) { return relu(x[0]); }},
      {"abs", away({8}, {0.0}), [](auto& x) { return abs(x[0]); }},
      {"square", one({6}), [](auto& x) { return square(x[0]); }},
      {"clamp", away({8}, {-0.5, 0.5}), [](auto& x) { return clamp(x[0], -0.5, 0.5); }},
      {"softmax", one({3, 5}), [](auto& x) { return softmax_last_axis(x[0]); }},
      {"concat axis 0", two({2, 3}, {4, 3}), [](auto& x) { return concat({x[0], x[1]}, 0); }},
      {"concat axis 1", two({2, 3}, {2, 2}), [](auto& x) { return concat({x[0], x[1]}, 1); }},
      {"slice", one({4, 6}), [](auto& x) { return slice(x[0], 1, 2, 5); }},
      {"reshape", one({4, 6}), [](auto& x) { return reshape(x[0], {6, 4}); }},
      {"reduce_sum", one({3, 4, 2}), [](auto& x) { return reduce_sum(x[0], 1); }},
      {"reduce_mean", one({3, 4}), [](auto& x) { return reduce_mean(x[0], 0); }},
      {"sum", one({3, 4}), [](auto& x) { return sum(x[0]); }},
      {"mean", one({3, 4}), [](auto& x) { return mean(x[0]); }},
      {"linear",
       [](std::mt19937_64& r) {
         return Inputs{random_tensor({5, 3}, r, -1, 1, true), random_tensor({3, 4}, r, -1, 1, true),
                       random_tensor({4}, r, -1, 1, true)};
       },
       [](auto& x) { return linear(x[0], x[1], x[2]); }},
      {"linear 1-d",
       [](std::mt19937_64& r) {
         return Inputs{random_tensor({3}, r, -1, 1, true), random_tensor({3, 4}, r, -1, 1, true),
                       random_tensor({4}, r, -1, 1, true)};
       },
       [](auto& x) { return linear(x[0], x[1], x[2]); }},
      {"embedding_lookup", one({3, 5}), [](auto& x) { return embedding_lookup(x[0], 1); }},
      {"gather", one({6}), [index](auto& x) { return gather(x[0], index, {2, 3}); }},
  };
}

inline void jitter_params(const ParamStore& params, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const auto& [_, t] : params.entries()) {
    Tensor p = t;
    for (double& v : p.mutable_data()) v += u(rng);
  }
}

inline std::vector<Tensor> leaves_of(const ParamStore& params) {
  std::vector<Tensor> out;
  for (const auto& [_, t] : params.entries()) out.push_back(t);
  return out;
}

// Scalar functional of the conditional-block output of one MMHSA/DTAM block,
// differentiated with respect to the input tokens and every block parameter.
inline double dtam_block_worst(int trials, std::uint64_t seed = 1000) {
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(seed + trial);
    ParamStore params;
    MmhsaBlock block(DtamConfig{8, 2, 0.7, true}, 5, 3, params, rng);
    jitter_params(params, rng, 0.1);
    const double times[] = {0.1, 0.25, 1.0};
    const std::size_t prior = trial % 3;
    PhaseTokenState s;
    s.conditional = {random_tensor({5, 8}, rng, -1, 1, true), times[prior]};
    for (std::size_t k = 0; k < prior; ++k) s.prior.push_back({random_tensor({5, 8}, rng, -1, 1, true), times[k]});
    const Tensor w = random_tensor({5, 8}, rng);
    std::vector<Tensor> leaves{s.conditional.tokens};
    for (auto& b : s.prior) leaves.push_back(b.tokens);
    for (const auto& p : leaves_of(params)) leaves.push_back(p);
    const auto f = [&](const std::vector<Tensor>&) { return sum(mul(block.forward_conditional(s), w)); };
    worst = std::max(worst, grad_check(f, leaves, rng, 4).rel_error);
  }
  return worst;
}

// f_theta output with respect to sampled weights and its pooled input.
inline double signal_net_worst(int trials, std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    ParamStore params;
    SignalNet net(SignalNetConfig{8, 16, 8, 4, 0.5}, params, rng);
    jitter_params(params, rng, 0.1);
    const Tensor pooled = random_tensor({8}, rng, -1, 1, true);
    const auto e = time_encoding(std::uniform_real_distribution<double>(0, 1)(rng), std::numbers::pi);
    const Tensor te = Tensor::from({e[0], e[1]});
    std::vector<Tensor> leaves{pooled};
    for (const auto& p : leaves_of(params)) leaves.push_back(p);
    const auto f = [&](const std::vector<Tensor>&) { return reshape(net.predict(net.latent(pooled), te), {}); };
    worst = std::max(worst, grad_check(f, leaves, rng, 6).rel_error);
  }
  return worst;
}

inline ModelConfig mini_model(Ablation a = Ablation::kFull) {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 1;
  c.head_count = 2;
  c.signal_latent = 8;
  c.signal_hidden1 = 8;
  c.signal_hidden2 = 4;
  c.ablation = a;
  return c;
}

inline CaseRecord random_case(std::mt19937_64& rng, std::size_t n = 16) {
  CaseRecord r;
  r.ncmri = random_tensor({n, n}, rng, 0, 1);
  for (auto& p : r.phases) p = random_tensor({n, n}, rng, 0, 1);
  std::vector<double> m(n * n);
  std::bernoulli_distribution on(0.3);
  for (double& v : m) v = on(rng) ? 1.0 : 0.0;
  r.mask = Tensor({n, n}, m);
  r.label = on(rng) ? LesionClass::kMalignant : LesionClass::kBenign;
  r.times = kDefaultPhaseTimes;
  return r;
}

// dL_total / d(one sampled coordinate of every parameter) on a 16x16 model.
inline double end_to_end_worst(int trials, std::uint64_t seed = 8) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    TcaceModel model(mini_model(), 100 + trial);
    jitter_params(model.params(), rng, 0.05);
    const CaseRecord rec = random_case(rng);
    const LossWeights w;
    const auto f = [&](const std::vector<Tensor>&) { return case_forward(model, rec, w).total; };
    worst = std::max(worst, grad_check(f, leaves_of(model.params()), rng, 1).rel_error);
  }
  return worst;
}

}  // namespace tcace::testing
