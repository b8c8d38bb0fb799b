#pragma once

// Binary checkpoint: "ZSCK", u32 version, kind tag, hyperparameter JSON, then
// named tensors (name, u32 rank, u32 dims, little-endian f32 data).

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "zsa/core/binary_io.hpp"
#include "zsa/core/error.hpp"
#include "zsa/core/params.hpp"
#include "zsa/core/tensor.hpp"

namespace zsa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json hyper = nlohmann::json::object();
  std::map<std::string, Tensor<float>> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint (" + kind + ") has no tensor '" + name + "'");
    return it->second;
  }

  void expect_kind(const std::string& want) const {
    if (kind != want) throw DataError("checkpoint kind mismatch: file holds '" + kind + "', expected '" + want + "'");
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write("ZSCK", 4);
  io::write_u32(out, kCheckpointVersion);
  io::write_string(out, ck.kind);
  io::write_string(out, ck.hyper.dump());
  io::write_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    io::write_string(out, name);
    io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) io::write_f32(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  io::expect_magic(in, "ZSCK", "checkpoint");
  const auto version = io::read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.kind = io::read_string(in, "checkpoint kind");
  try {
    ck.hyper = nlohmann::json::parse(io::read_string(in, "checkpoint hyperparameters"));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("checkpoint hyperparameters are corrupt: ") + e.what());
  }
  const auto n = io::read_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = io::read_string(in, "tensor name");
    const auto rank = io::read_u32(in, "tensor rank");
    if (rank > 8) throw DataError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = io::read_u32(in, "tensor dims");
      count *= d;
    }
    if (count > (std::size_t{1} << 28)) throw DataError("tensor '" + name + "' is implausibly large");
    std::vector<float> data(count);
    for (auto& v : data) v = io::read_f32(in, "tensor data");
    if (!ck.tensors.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second)
      throw DataError("checkpoint repeats tensor '" + name + "'");
  }
  return ck;
}

template <class T>
void store_params(Checkpoint& ck, const ParameterSet<T>& ps, const std::string& prefix) {
  for (const auto& [name, p] : ps) ck.tensors[prefix + name] = p.value.template cast<float>();
}

// Copies tensors into an already-shaped parameter set; every parameter must
// be present with the same shape.
template <class T>
void restore_params(const Checkpoint& ck, ParameterSet<T>& ps, const std::string& prefix) {
  for (auto& [name, p] : ps) {
    const auto& t = ck.tensor(prefix + name);
    if (t.shape() != p.value.shape())
      throw DataError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(t.shape()) +
                      ", model expects " + shape_str(p.value.shape()));
    p.value = t.template cast<T>();
  }
}

}  // namespace zsa
