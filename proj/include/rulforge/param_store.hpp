#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rulforge/errors.hpp"
#include "rulforge/tensor.hpp"

namespace rulforge::core {

inline constexpr const char* kCheckpointVersion = "rulforge-ckpt-v1";

template <typename T>
struct Param {
  Tensor<T> value;
  bool trainable = true;
};

// Named parameters and buffers with deterministic lexicographic iteration.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Param<T>>;

  void insert(const std::string& name, Tensor<T> value, bool trainable = true) {
    auto [it, inserted] = params_.emplace(name, Param<T>{std::move(value), trainable});
    if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return at(name).value; }
  const Tensor<T>& value(const std::string& name) const { return at(name).value; }

  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& [name, param] : params_) {
      if (name.rfind(prefix, 0) == 0) param.trainable = trainable;
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return params_.size(); }

  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, param] : params_) {
      out.insert(name, param.value.template cast<U>(), param.trainable);
    }
    return out;
  }

 private:
  Map params_;
};

// Checkpoint layout: a text manifest at `path` and a binary blob at
// `path + ".bin"`. The manifest starts with the version line, then one line
// per parameter: name, shape as d0xd1x..., element offset into the blob, and
// dtype (always f32). The blob is the parameters' data concatenated in
// manifest order as little-endian IEEE-754 32-bit floats.
inline void save_checkpoint(const ParamStore<float>& store, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream manifest(path);
  if (!manifest) throw DataError("cannot write checkpoint manifest: " + path);
  std::ofstream blob(path + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot write checkpoint blob: " + path + ".bin");
  manifest << kCheckpointVersion << "\n";
  std::int64_t offset = 0;
  for (const auto& [name, param] : store) {
    manifest << name << " ";
    const Shape& shape = param.value.shape();
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) manifest << "x";
      manifest << shape[i];
    }
    manifest << " " << offset << " f32\n";
    blob.write(reinterpret_cast<const char*>(param.value.data()),
               static_cast<std::streamsize>(param.value.numel() * sizeof(float)));
    offset += param.value.numel();
  }
  if (!manifest.good() || !blob.good()) throw DataError("checkpoint write failed: " + path);
}

// Loads a checkpoint; every parameter comes back marked trainable. Callers
// that know the model apply buffer/freeze flags afterwards.
inline ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream manifest(path);
  if (!manifest) throw DataError("cannot open checkpoint manifest: " + path);
  std::string version;
  if (!std::getline(manifest, version) || version != kCheckpointVersion) {
    throw DataError("bad checkpoint version in " + path + ": '" + version + "'");
  }
  std::ifstream blob(path + ".bin", std::ios::binary);
  if (!blob) throw DataError("cannot open checkpoint blob: " + path + ".bin");

  ParamStore<float> store;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape_txt, dtype;
    std::int64_t offset = 0;
    if (!(ls >> name >> shape_txt >> offset >> dtype)) {
      throw DataError("malformed checkpoint manifest line: " + line);
    }
    if (dtype != "f32") throw DataError("unsupported checkpoint dtype: " + dtype);
    Shape shape;
    std::istringstream ss(shape_txt);
    std::string dim;
    while (std::getline(ss, dim, 'x')) shape.push_back(std::stoll(dim));
    Tensor<float> value(shape);
    blob.seekg(offset * static_cast<std::int64_t>(sizeof(float)));
    blob.read(reinterpret_cast<char*>(value.data()),
              static_cast<std::streamsize>(value.numel() * sizeof(float)));
    if (!blob) throw DataError("checkpoint blob truncated at parameter: " + name);
    store.insert(name, std::move(value), true);
  }
  return store;
}

}  // namespace rulforge::core
