#include "tcace/encoder.hpp"

#include <cmath>
#include <string>

namespace tcace {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("encoder: image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim == 0 || embed_dim % 2 != 0) throw ConfigError("encoder: embed_dim must be even and positive");
}

std::vector<std::size_t> patch_index(std::size_t image_size, std::size_t patch_size) {
  const std::size_t grid = image_size / patch_size;
  std::vector<std::size_t> index;
  index.reserve(image_size * image_size);
  for (std::size_t tr = 0; tr < grid; ++tr)
    for (std::size_t tc = 0; tc < grid; ++tc)
      for (std::size_t pr = 0; pr < patch_size; ++pr)
        for (std::size_t pc = 0; pc < patch_size; ++pc)
          index.push_back((tr * patch_size + pr) * image_size + tc * patch_size + pc);
  return index;
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 2 || image.shape()[0] != image.shape()[1]) {
    throw DimensionError("patchify: expected a square {H, W} image, got " + shape_str(image.shape()));
  }
  const std::size_t n = image.shape()[0];
  if (patch_size == 0 || n % patch_size != 0) throw ConfigError("patchify: image size not divisible by patch size");
  const auto index = patch_index(n, patch_size);
  const std::size_t tokens = (n / patch_size) * (n / patch_size);
  return gather(image, index, {tokens, patch_size * patch_size});
}

Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t patch_size) {
  const std::size_t grid = image_size / patch_size;
  if (patches.rank() != 2 || patches.shape()[0] != grid * grid || patches.shape()[1] != patch_size * patch_size) {
    throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) + " do not tile a " +
                         std::to_string(image_size) + "x" + std::to_string(image_size) + " image");
  }
  const auto forward = patch_index(image_size, patch_size);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return gather(patches, inverse, {image_size, image_size});
}

// --- FeatureEncoder -----------------------------------------------------------

FeatureEncoder::FeatureEncoder(const EncoderConfig& config, ParamStore& params, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t in = 2 * config_.patch_pixels();
  patch_weight_ = params.add("encoder.patch_embed.weight", xavier_uniform(in, d, rng));
  patch_bias_ = params.add("encoder.patch_embed.bias", Tensor::zeros({d}));
  for (std::size_t s = 0; s < config_.depth; ++s) {
    const std::string prefix = "encoder.stage" + std::to_string(s);
    auto w = params.add(prefix + ".weight", xavier_uniform(d, d, rng));
    auto b = params.add(prefix + ".bias", Tensor::zeros({d}));
    stages_.emplace_back(w, b);
  }
  proj_weight_ = params.add("encoder.proj.weight", xavier_uniform(d, d, rng));
  proj_bias_ = params.add("encoder.proj.bias", Tensor::zeros({d}));

  const std::size_t g = config_.grid();
  const std::size_t n = g * g;
  std::vector<double> mix(n * n, 0.0);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      std::vector<std::size_t> neighbours;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const auto rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr >= 0 && cc >= 0 && rr < static_cast<long>(g) && cc < static_cast<long>(g)) {
            neighbours.push_back(static_cast<std::size_t>(rr) * g + static_cast<std::size_t>(cc));
          }
        }
      for (auto j : neighbours) mix[(r * g + c) * n + j] = 1.0 / static_cast<double>(neighbours.size());
    }
  }
  mixing_ = Tensor({n, n}, std::move(mix));
}

Tensor FeatureEncoder::encode(const Tensor& ncmri, const Tensor& mask) const {
  if (ncmri.shape() != mask.shape()) {
    throw DimensionError("encode_features: ncmri " + shape_str(ncmri.shape()) + " and mask " +
                         shape_str(mask.shape()) + " differ");
  }
  if (ncmri.rank() != 2 || ncmri.shape()[0] != config_.image_size || ncmri.shape()[1] != config_.image_size) {
    throw DimensionError("encode_features: expected " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size) + " images, got " + shape_str(ncmri.shape()));
  }
  const Tensor patches = concat({patchify(ncmri, config_.patch_size), patchify(mask, config_.patch_size)}, 1);
  Tensor x = linear(patches, patch_weight_, patch_bias_);
  for (const auto& [w, b] : stages_) {
    x = add(x, relu(linear(matmul(mixing_, x), w, b)));
  }
  return linear(x, proj_weight_, proj_bias_);
}

// --- conditional tokens -------------------------------------------------------

std::array<double, 2> time_encoding(double t, double omega) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time_encoding: t=" + std::to_string(t) + " outside [0, 1]");
  if (!(omega > 0.0)) throw ConfigError("time_encoding: omega must be positive");
  return {std::sin(omega * t), std::cos(omega * t)};
}

ConditionalTokenBuilder::ConditionalTokenBuilder(std::size_t embed_dim, double omega, ParamStore& params,
                                                 std::mt19937_64& rng)
    : embed_dim_(embed_dim), omega_(omega) {
  if (!(omega > 0.0)) throw ConfigError("conditional token: omega must be positive");
  phase_table_ = params.add("cte.phase_embedding", normal_init({kPhaseCount, embed_dim}, 0.1, rng));
  fuse_weight_ = params.add("cte.fuse.weight", xavier_uniform(embed_dim + 2, embed_dim, rng));
  fuse_bias_ = params.add("cte.fuse.bias", Tensor::zeros({embed_dim}));
}

Tensor ConditionalTokenBuilder::phase_embedding(std::size_t phase_index) const {
  return embedding_lookup(phase_table_, phase_index);
}

Tensor ConditionalTokenBuilder::phase_embedding(Phase phase) const {
  return phase_embedding(static_cast<std::size_t>(phase));
}

ConditionalToken ConditionalTokenBuilder::build(const Tensor& image_tokens, Phase phase, double t,
                                                const ConditionSwitches& switches) const {
  if (image_tokens.rank() != 2 || image_tokens.shape()[1] != embed_dim_) {
    throw ContractError("build_conditional_token: image tokens " + shape_str(image_tokens.shape()) +
                        " do not have width " + std::to_string(embed_dim_));
  }
  const auto enc = time_encoding(t, omega_);
  ConditionalToken out;
  out.image_tokens = image_tokens;
  out.phase = phase_embedding(phase);
  out.time = Tensor::from({enc[0], enc[1]});
  if (!switches.phase_token && !switches.time_token) {
    out.assembled = image_tokens;
    return out;
  }
  const Tensor phase_part = switches.phase_token ? out.phase : Tensor::zeros({embed_dim_});
  const Tensor time_part = switches.time_token ? out.time : Tensor::zeros({2});
  const Tensor fused = linear(concat({phase_part, time_part}, 0), fuse_weight_, fuse_bias_);
  out.assembled = concat({image_tokens, reshape(fused, {1, embed_dim_})}, 0);
  return out;
}

}  // namespace tcace
