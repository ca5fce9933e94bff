#pragma once

// Dynamic time-aware attention: causal attention whose weights are scaled by a
// Gaussian of the acquisition-time distance between query and key blocks and
// then renormalised,
//
//   a_ik = G(i,k) exp(q_i . k_k) / sum_j G(i,j) exp(q_i . k_j),
//   G(i,k) = exp(-(t_i - t_k)^2 / (2 sigma^2)),
//
// evaluated as softmax(q . k + ln G) so the max-subtraction also covers ln G.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tcace/params.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

struct DtamConfig {
  std::size_t embed_dim = 64;
  std::size_t head_count = 4;
  double sigma = 0.7;
  bool use_decay = true;  // false: plain causal softmax (G == 1)

  std::size_t head_dim() const { return embed_dim / head_count; }
  void validate() const;
};

double gaussian_decay(double t_i, double t_k, double sigma);
double log_gaussian_decay(double t_i, double t_k, double sigma);

// Number of gaussian_decay / log_gaussian_decay evaluations on this thread.
std::uint64_t gaussian_decay_evaluations();
void reset_gaussian_decay_evaluations();

// Weight rows for queries {Nq, d} over keys {Nk, d}. Each key carries a time
// stamp; each query row carries its own. With no sigma the decay is omitted.
// Only keys the caller passes in are attended, so causality is structural.
Tensor dtam_weights(const Tensor& queries, const Tensor& keys, std::span<const double> query_times,
                    std::span<const double> key_times, std::optional<double> sigma);

// z = weights . values
Tensor attention_output(const Tensor& weights, const Tensor& values);

struct TokenBlock {
  Tensor tokens;  // {B, D}
  double time = 0.0;
};

// Input of one autoregressive step: the current phase's conditional block
// (stamped with that phase's time) and the previously generated blocks.
struct PhaseTokenState {
  TokenBlock conditional;
  std::vector<TokenBlock> prior;

  std::size_t block_count() const { return 1 + prior.size(); }
  void validate() const;
};

// Block-level attention summary: entry [q][k] is the attention mass query
// block q places on key block k, averaged over heads and query tokens. Block 0
// is the conditional block, block k >= 1 is prior block k.
struct AttentionTrace {
  std::vector<std::vector<double>> block_weights;
};

// Masked multi-head self-attention with DTAM weights: linear projection,
// learned per-position embeddings, head-parallel attention, output
// projection, and a residual connection.
class MmhsaBlock {
 public:
  MmhsaBlock(const DtamConfig& config, std::size_t block_len, std::size_t max_blocks, ParamStore& params,
             std::mt19937_64& rng);

  // Output for every token of the state, same shape as the concatenated input.
  // Each query block attends to blocks whose time stamp does not exceed its own.
  Tensor forward(const PhaseTokenState& state, AttentionTrace* trace = nullptr) const;

  // Output rows for the conditional block only (equal to the first block of
  // forward()), which is what the autoregressive step consumes.
  Tensor forward_conditional(const PhaseTokenState& state, AttentionTrace* trace = nullptr) const;

  const DtamConfig& config() const { return config_; }
  std::size_t block_len() const { return block_len_; }

 private:
  struct Projected {
    Tensor hidden;
    Tensor keys;
    Tensor values;
    double time;
  };

  Projected project(const TokenBlock& block, std::size_t block_index) const;
  Tensor attend(const Projected& query, std::span<const Projected* const> keys,
                std::vector<double>* block_mass) const;
  std::vector<Projected> project_all(const PhaseTokenState& state) const;

  DtamConfig config_;
  std::size_t block_len_;
  std::size_t max_blocks_;
  Tensor in_weight_, in_bias_;
  Tensor positions_;
  Tensor q_weight_, q_bias_, k_weight_, k_bias_, v_weight_, v_bias_;
  Tensor out_weight_, out_bias_;
};

}  // namespace tcace
