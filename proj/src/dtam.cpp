#include "tcace/dtam.hpp"

#include <cmath>
#include <string>

namespace tcace {

namespace {

thread_local std::uint64_t g_decay_evaluations = 0;

void check_sigma(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_decay: sigma must be positive, got " + std::to_string(sigma));
}

}  // namespace

void DtamConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("dtam: sigma must be positive");
  if (head_count == 0 || embed_dim % head_count != 0) {
    throw ConfigError("dtam: embed_dim " + std::to_string(embed_dim) + " not divisible by head_count " +
                      std::to_string(head_count));
  }
}

double gaussian_decay(double t_i, double t_k, double sigma) {
  return std::exp(log_gaussian_decay(t_i, t_k, sigma));
}

double log_gaussian_decay(double t_i, double t_k, double sigma) {
  check_sigma(sigma);
  ++g_decay_evaluations;
  const double d = t_i - t_k;
  return -(d * d) / (2.0 * sigma * sigma);
}

std::uint64_t gaussian_decay_evaluations() { return g_decay_evaluations; }
void reset_gaussian_decay_evaluations() { g_decay_evaluations = 0; }

Tensor dtam_weights(const Tensor& queries, const Tensor& keys, std::span<const double> query_times,
                    std::span<const double> key_times, std::optional<double> sigma) {
  if (keys.rank() != 2 || keys.shape()[0] == 0) throw ContractError("dtam_weights: empty key set");
  if (queries.rank() != 2 || queries.shape()[1] != keys.shape()[1]) {
    throw DimensionError("dtam_weights: queries " + shape_str(queries.shape()) + " and keys " +
                         shape_str(keys.shape()) + " disagree");
  }
  const std::size_t nq = queries.shape()[0], nk = keys.shape()[0];
  if (query_times.size() != nq || key_times.size() != nk) {
    throw ContractError("dtam_weights: one time stamp per query and per key is required");
  }
  Tensor logits = matmul(queries, transpose(keys));
  if (sigma) {
    std::vector<double> bias(nq * nk);
    // Rows sharing a time stamp share a bias row; compute each distinct row once.
    for (std::size_t r = 0; r < nq; ++r) {
      if (r > 0 && query_times[r] == query_times[r - 1]) {
        std::copy_n(bias.begin() + static_cast<std::ptrdiff_t>((r - 1) * nk), nk,
                    bias.begin() + static_cast<std::ptrdiff_t>(r * nk));
        continue;
      }
      for (std::size_t c = 0; c < nk; ++c) {
        bias[r * nk + c] = log_gaussian_decay(query_times[r], key_times[c], *sigma);
      }
    }
    logits = add(logits, Tensor({nq, nk}, std::move(bias)));
  }
  return softmax_last_axis(logits);
}

Tensor attention_output(const Tensor& weights, const Tensor& values) {
  if (weights.rank() != 2 || values.rank() != 2 || weights.shape()[1] != values.shape()[0]) {
    throw ContractError("attention_output: " + std::to_string(weights.rank() == 2 ? weights.shape()[1] : 0) +
                        " weights per row but " + std::to_string(values.rank() == 2 ? values.shape()[0] : 0) +
                        " value rows");
  }
  return matmul(weights, values);
}

void PhaseTokenState::validate() const {
  if (conditional.tokens.rank() != 2) throw ContractError("phase state: conditional block must be {B, D}");
  const std::size_t width = conditional.tokens.shape()[1];
  double last = -1.0;
  for (const auto& block : prior) {
    if (block.tokens.rank() != 2 || block.tokens.shape()[1] != width) {
      throw DimensionError("phase state: prior block " + shape_str(block.tokens.shape()) +
                           " does not match width " + std::to_string(width));
    }
    if (block.time < last) throw ContractError("phase state: prior blocks out of time order");
    if (block.time > conditional.time) throw ContractError("phase state: prior block later than current phase");
    last = block.time;
  }
}

// --- MmhsaBlock -----------------------------------------------------------------

MmhsaBlock::MmhsaBlock(const DtamConfig& config, std::size_t block_len, std::size_t max_blocks, ParamStore& params,
                       std::mt19937_64& rng)
    : config_(config), block_len_(block_len), max_blocks_(max_blocks) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  in_weight_ = params.add("dtam.in_proj.weight", xavier_uniform(d, d, rng));
  in_bias_ = params.add("dtam.in_proj.bias", Tensor::zeros({d}));
  positions_ = params.add("dtam.position_embedding", normal_init({block_len * max_blocks, d}, 0.02, rng));
  q_weight_ = params.add("dtam.query.weight", xavier_uniform(d, d, rng));
  q_bias_ = params.add("dtam.query.bias", Tensor::zeros({d}));
  k_weight_ = params.add("dtam.key.weight", xavier_uniform(d, d, rng));
  k_bias_ = params.add("dtam.key.bias", Tensor::zeros({d}));
  v_weight_ = params.add("dtam.value.weight", xavier_uniform(d, d, rng));
  v_bias_ = params.add("dtam.value.bias", Tensor::zeros({d}));
  out_weight_ = params.add("dtam.out_proj.weight", xavier_uniform(d, d, rng));
  out_bias_ = params.add("dtam.out_proj.bias", Tensor::zeros({d}));
}

MmhsaBlock::Projected MmhsaBlock::project(const TokenBlock& block, std::size_t block_index) const {
  if (block.tokens.rank() != 2 || block.tokens.shape()[0] != block_len_ ||
      block.tokens.shape()[1] != config_.embed_dim) {
    throw DimensionError("mmhsa: block " + shape_str(block.tokens.shape()) + " expected (" +
                         std::to_string(block_len_) + ", " + std::to_string(config_.embed_dim) + ")");
  }
  if (block_index >= max_blocks_) {
    throw ContractError("mmhsa: block index " + std::to_string(block_index) + " exceeds " +
                        std::to_string(max_blocks_) + " position slots");
  }
  const std::size_t offset = block_index * block_len_;
  Projected p;
  p.hidden = add(linear(block.tokens, in_weight_, in_bias_), slice(positions_, 0, offset, offset + block_len_));
  p.keys = linear(p.hidden, k_weight_, k_bias_);
  p.values = linear(p.hidden, v_weight_, v_bias_);
  p.time = block.time;
  return p;
}

std::vector<MmhsaBlock::Projected> MmhsaBlock::project_all(const PhaseTokenState& state) const {
  state.validate();
  std::vector<Projected> blocks;
  blocks.reserve(state.block_count());
  blocks.push_back(project(state.conditional, 0));
  for (std::size_t k = 0; k < state.prior.size(); ++k) blocks.push_back(project(state.prior[k], k + 1));
  return blocks;
}

Tensor MmhsaBlock::attend(const Projected& query, std::span<const Projected* const> keys,
                          std::vector<double>* block_mass) const {
  const std::size_t hd = config_.head_dim();
  const Tensor q = scale(linear(query.hidden, q_weight_, q_bias_), 1.0 / std::sqrt(static_cast<double>(hd)));

  std::vector<Tensor> key_parts, value_parts;
  std::vector<double> key_times;
  for (const Projected* k : keys) {
    key_parts.push_back(k->keys);
    value_parts.push_back(k->values);
    key_times.insert(key_times.end(), k->keys.shape()[0], k->time);
  }
  const Tensor all_keys = key_parts.size() == 1 ? key_parts[0] : concat(key_parts, 0);
  const Tensor all_values = value_parts.size() == 1 ? value_parts[0] : concat(value_parts, 0);
  const std::vector<double> query_times(q.shape()[0], query.time);
  const std::optional<double> sigma = config_.use_decay ? std::optional<double>(config_.sigma) : std::nullopt;

  if (block_mass) block_mass->assign(keys.size(), 0.0);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < config_.head_count; ++h) {
    const Tensor w = dtam_weights(slice(q, 1, h * hd, (h + 1) * hd), slice(all_keys, 1, h * hd, (h + 1) * hd),
                                  query_times, key_times, sigma);
    heads.push_back(attention_output(w, slice(all_values, 1, h * hd, (h + 1) * hd)));
    if (block_mass) {
      const auto wd = w.data();
      const std::size_t nq = w.shape()[0], nk = w.shape()[1];
      const double norm = 1.0 / static_cast<double>(nq * config_.head_count);
      for (std::size_t r = 0; r < nq; ++r) {
        std::size_t col = 0;
        for (std::size_t b = 0; b < keys.size(); ++b) {
          for (std::size_t j = 0; j < keys[b]->keys.shape()[0]; ++j, ++col) (*block_mass)[b] += wd[r * nk + col] * norm;
        }
      }
    }
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return linear(merged, out_weight_, out_bias_);
}

Tensor MmhsaBlock::forward_conditional(const PhaseTokenState& state, AttentionTrace* trace) const {
  const auto blocks = project_all(state);
  std::vector<const Projected*> keys;
  for (const auto& b : blocks) keys.push_back(&b);
  std::vector<double> mass;
  const Tensor out = attend(blocks[0], keys, trace ? &mass : nullptr);
  if (trace) trace->block_weights = {mass};
  return add(out, state.conditional.tokens);
}

Tensor MmhsaBlock::forward(const PhaseTokenState& state, AttentionTrace* trace) const {
  const auto blocks = project_all(state);
  if (trace) trace->block_weights.assign(blocks.size(), std::vector<double>(blocks.size(), 0.0));
  std::vector<Tensor> outputs;
  for (std::size_t qb = 0; qb < blocks.size(); ++qb) {
    std::vector<const Projected*> keys;
    std::vector<std::size_t> key_ids;
    for (std::size_t kb = 0; kb < blocks.size(); ++kb) {
      if (blocks[kb].time <= blocks[qb].time) {
        keys.push_back(&blocks[kb]);
        key_ids.push_back(kb);
      }
    }
    std::vector<double> mass;
    const Tensor& residual = qb == 0 ? state.conditional.tokens : state.prior[qb - 1].tokens;
    outputs.push_back(add(attend(blocks[qb], keys, trace ? &mass : nullptr), residual));
    if (trace) {
      for (std::size_t j = 0; j < key_ids.size(); ++j) trace->block_weights[qb][key_ids[j]] = mass[j];
    }
  }
  return concat(outputs, 0);
}

}  // namespace tcace
