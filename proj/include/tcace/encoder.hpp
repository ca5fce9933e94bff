#pragma once

// Conditional token encoding: image tokens from (NCMRI, mask), a learned phase
// embedding, and a sinusoidal acquisition-time encoding, assembled into one
// block of conditioning tokens per phase.

#include <array>
#include <random>
#include <vector>

#include "tcace/params.hpp"
#include "tcace/phantom.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 2;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t token_count() const { return grid() * grid(); }
  std::size_t patch_pixels() const { return patch_size * patch_size; }
  void validate() const;
};

// Flat pixel index for every (token, in-patch pixel) pair, token-major.
std::vector<std::size_t> patch_index(std::size_t image_size, std::size_t patch_size);
// {H, W} -> {N, p*p}
Tensor patchify(const Tensor& image, std::size_t patch_size);
// {N, p*p} -> {H, W}
Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t patch_size);

// Patch embedding of the stacked (NCMRI, mask) channels, `depth` stages of
// residual 3x3 token-neighbourhood mixing with ReLU, and a final projection.
class FeatureEncoder {
 public:
  FeatureEncoder(const EncoderConfig& config, ParamStore& params, std::mt19937_64& rng);

  // Returns t_OT of shape {N, D}.
  Tensor encode(const Tensor& ncmri, const Tensor& mask) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  Tensor patch_weight_, patch_bias_;
  std::vector<std::pair<Tensor, Tensor>> stages_;
  Tensor proj_weight_, proj_bias_;
  Tensor mixing_;  // constant {N, N} neighbourhood average
};

// [sin(omega t), cos(omega t)]; t must lie in [0, 1].
std::array<double, 2> time_encoding(double t, double omega);

struct ConditionSwitches {
  bool phase_token = true;
  bool time_token = true;
};

struct ConditionalToken {
  Tensor image_tokens;  // t_OT, {N, D}
  Tensor phase;         // t_phase, {D}
  Tensor time;          // t_time, {2}
  Tensor assembled;     // {N + 1, D}, or {N, D} when neither token is enabled
};

// Phase embedding table plus the linear map that fuses [t_phase ; t_time]
// into a single width-D conditioning token.
class ConditionalTokenBuilder {
 public:
  ConditionalTokenBuilder(std::size_t embed_dim, double omega, ParamStore& params, std::mt19937_64& rng);

  Tensor phase_embedding(Phase phase) const;
  Tensor phase_embedding(std::size_t phase_index) const;

  ConditionalToken build(const Tensor& image_tokens, Phase phase, double t,
                         const ConditionSwitches& switches = {}) const;

  double omega() const { return omega_; }

 private:
  std::size_t embed_dim_;
  double omega_;
  Tensor phase_table_;
  Tensor fuse_weight_, fuse_bias_;
};

}  // namespace tcace
