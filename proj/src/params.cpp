#include "tcace/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace tcace {

namespace fs = std::filesystem;

Tensor ParamStore::add(const std::string& name, Tensor value) {
  if (index_.contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, value);
  return value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParamStore::assign_from(const ParamStore& other) {
  for (auto& [name, t] : entries_) {
    const Tensor& src = other.get(name);
    if (src.shape() != t.shape()) {
      throw DimensionError("parameter '" + name + "': shape " + shape_str(src.shape()) +
                           " does not match " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng);
  return Tensor({fan_in, fan_out}, std::move(v));
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

void save_archive(const fs::path& dir, const ParamStore& params, const nlohmann::json& metadata) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream weights(dir / "weights.tnsr", std::ios::binary);
  if (!weights) throw IoError("cannot write " + (dir / "weights.tnsr").string());
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : params.entries()) {
    const auto offset = static_cast<std::uint64_t>(weights.tellp());
    write_tnsr(weights, t);
    index.push_back({{"name", name}, {"offset", offset}, {"shape", t.shape()}});
  }
  weights.close();
  if (!weights) throw IoError("write failed: " + (dir / "weights.tnsr").string());
  std::ofstream os(dir / "index.json");
  os << nlohmann::json{{"tensors", index}, {"metadata", metadata}}.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + (dir / "index.json").string());
}

namespace {

nlohmann::json read_index(const fs::path& dir) {
  std::ifstream is(dir / "index.json");
  if (!is) throw IoError("checkpoint index not found in " + dir.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint index: " + std::string(e.what()));
  }
}

}  // namespace

nlohmann::json read_archive_metadata(const fs::path& dir) { return read_index(dir).at("metadata"); }

nlohmann::json load_archive(const fs::path& dir, ParamStore& params) {
  const auto index = read_index(dir);
  std::ifstream weights(dir / "weights.tnsr", std::ios::binary);
  if (!weights) throw IoError("cannot open " + (dir / "weights.tnsr").string());
  std::map<std::string, Tensor> loaded;
  for (const auto& rec : index.at("tensors")) {
    weights.seekg(static_cast<std::streamoff>(rec.at("offset").get<std::uint64_t>()));
    loaded.emplace(rec.at("name").get<std::string>(), read_tnsr(weights));
  }
  ParamStore source;
  for (const auto& [name, _] : params.entries()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    source.add(name, it->second);
  }
  try {
    params.assign_from(source);
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("checkpoint incompatible: ") + e.what());
  }
  return index.at("metadata");
}

}  // namespace tcace
