#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sparsefocus/binary_io.hpp"
#include "sparsefocus/graph.hpp"

namespace sf {

inline constexpr std::uint16_t kSfnnVersion = 1;

/// Writes named float tensors as an SFNN checkpoint:
/// "SFNN", u16 version, u32 count, then per entry
/// (u32 name length, name bytes, u32 rank, u32 dims..., f32 payload).
inline void save_checkpoint(const std::filesystem::path& path,
                            const std::vector<const Parameter<float>*>& params) {
  io::ByteWriter w;
  w.bytes("SFNN");
  w.u16(kSfnnVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p->value.data()) w.f32(v);
  }
  w.save(path);
}

inline std::map<std::string, Tensor<float>> read_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::load(path);
  if (r.bytes(4) != "SFNN") throw IoError("not an SFNN checkpoint: " + path.string());
  const auto version = r.u16();
  if (version != kSfnnVersion) throw IoError("unsupported SFNN version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Dims dims(rank);
    for (auto& d : dims) d = r.u32();
    std::vector<float> data(dims_product(dims));
    for (float& v : data) v = r.f32();
    if (!out.emplace(name, Tensor<float>(dims, std::move(data))).second) {
      throw IoError("duplicate tensor name in checkpoint: " + name);
    }
  }
  if (!r.at_end()) throw IoError("trailing bytes in checkpoint: " + path.string());
  return out;
}

/// Loads values into existing parameters, matching by name and dims.
inline void load_checkpoint(const std::filesystem::path& path,
                            const std::vector<Parameter<float>*>& params) {
  auto tensors = read_checkpoint(path);
  for (auto* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + p->name + "'");
    if (it->second.dims() != p->value.dims()) {
      throw ShapeError("load_checkpoint", p->name,
                       dims_string(it->second.dims()) + " vs " + dims_string(p->value.dims()));
    }
    p->value = it->second;
  }
}

}  // namespace sf
