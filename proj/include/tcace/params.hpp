#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tcace/tensor.hpp"

namespace tcace {

// Ordered, named set of learnable leaves. Names are stable across runs and
// double as checkpoint keys (e.g. "encoder.patch_embed.weight").
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Overwrites values of every entry from `other` (same names and shapes).
  void assign_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain = 1.0);
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

// Named-tensor archive: `weights.tnsr` holds back-to-back TNSR v1 records and
// `index.json` lists {name, offset, shape} per record plus caller metadata.
void save_archive(const std::filesystem::path& dir, const ParamStore& params,
                  const nlohmann::json& metadata);
// Loads values into an existing store; every store entry must be present with
// a matching shape. Returns the metadata object.
nlohmann::json load_archive(const std::filesystem::path& dir, ParamStore& params);
nlohmann::json read_archive_metadata(const std::filesystem::path& dir);

}  // namespace tcace
