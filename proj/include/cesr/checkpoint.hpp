#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cesr/error.hpp"
#include "cesr/io.hpp"
#include "cesr/model.hpp"
#include "cesr/tensor.hpp"
#include "cesr/train.hpp"

namespace cesr {

inline constexpr std::uint32_t checkpoint_version = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// magic | version | per entry: name_len, name, rank, dims..., float32 data.
inline std::vector<char> encode_tensors(std::string_view magic, const std::vector<NamedTensor>& entries) {
  io::ByteWriter w;
  w.magic(magic);
  w.u32(checkpoint_version);
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.value.data()) w.f32(v);
  }
  return w.bytes();
}

inline std::vector<NamedTensor> decode_tensors(std::string_view magic, std::vector<char> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic(magic);
  if (auto v = r.u32(); v != checkpoint_version)
    throw DataError(source + ": unsupported version " + std::to_string(v));
  std::vector<NamedTensor> out;
  while (!r.at_end()) {
    NamedTensor e;
    const auto len = r.u32();
    if (len > r.remaining()) throw DataError(source + ": truncated file");
    e.name = r.raw(len);
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw DataError(source + ": bad rank for '" + e.name + "'");
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(r.u32());
      count *= shape.back();
      if (shape.back() == 0 || count * 4 > r.remaining()) throw DataError(source + ": bad dims for '" + e.name + "'");
    }
    std::vector<float> data(count);
    for (auto& v : data) v = r.f32();
    e.value = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::vector<char> encode_checkpoint(const ModelParams<T>& params) {
  std::vector<NamedTensor> entries;
  for (const auto& p : params.tensors) entries.push_back({p.name, p.value.template cast<float>()});
  return encode_tensors("DASR", entries);
}

/// Geometry is recovered from the deconvolution kernel shape; output size
/// and pilot grid must be supplied by the caller.
template <typename T>
ModelParams<T> decode_checkpoint(std::vector<char> bytes, ModelGeometry geometry, const std::string& source) {
  auto entries = decode_tensors("DASR", std::move(bytes), source);
  ModelParams<T> params;
  params.geometry = geometry;
  for (auto& e : entries) params.tensors.emplace_back(e.name, e.value.template cast<T>());
  try {
    params.validate();
  } catch (const Error& err) {
    throw DataError(source + ": incompatible checkpoint: " + err.what());
  }
  return params;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params, bool overwrite = true) {
  io::write_file_atomic(path, encode_checkpoint(params), overwrite);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, const ModelGeometry& geometry) {
  return decode_checkpoint<T>(io::read_file(path), geometry, path.string());
}

/// "FISH" file: a `task/<label>` marker entry, then `fisher.<name>` for every
/// parameter, then `anchor.<name>`.
template <typename T>
std::vector<char> encode_fisher(const FisherDiag<T>& f, const ModelParams<T>& layout) {
  f.validate_against(layout);
  std::vector<NamedTensor> entries;
  entries.push_back({"task/" + f.task, Tensor<float>(Shape{1})});
  for (std::size_t i = 0; i < f.fisher.size(); ++i)
    entries.push_back({"fisher." + layout.tensors[i].name, f.fisher[i].template cast<float>()});
  for (std::size_t i = 0; i < f.anchor.size(); ++i)
    entries.push_back({"anchor." + layout.tensors[i].name, f.anchor[i].template cast<float>()});
  return encode_tensors("FISH", entries);
}

template <typename T>
FisherDiag<T> decode_fisher(std::vector<char> bytes, const ModelParams<T>& layout, const std::string& source) {
  auto entries = decode_tensors("FISH", std::move(bytes), source);
  const std::size_t n = layout.tensors.size();
  if (entries.size() != 2 * n + 1 || entries[0].name.rfind("task/", 0) != 0)
    throw DataError(source + ": malformed fisher file");
  FisherDiag<T> f;
  f.task = entries[0].name.substr(5);
  for (std::size_t i = 0; i < n; ++i) {
    if (entries[1 + i].name != "fisher." + layout.tensors[i].name ||
        entries[1 + n + i].name != "anchor." + layout.tensors[i].name)
      throw DataError(source + ": unexpected entry order in fisher file");
    f.fisher.push_back(entries[1 + i].value.template cast<T>());
    f.anchor.push_back(entries[1 + n + i].value.template cast<T>());
  }
  f.validate_against(layout);
  for (const auto& t : f.fisher)
    for (T v : t.data())
      if (!(v >= T{0}) || !std::isfinite(v)) throw DataError(source + ": fisher entries must be finite and >= 0");
  return f;
}

template <typename T>
void save_fisher(const std::filesystem::path& path, const FisherDiag<T>& f, const ModelParams<T>& layout,
                 bool overwrite = true) {
  io::write_file_atomic(path, encode_fisher(f, layout), overwrite);
}

template <typename T>
FisherDiag<T> load_fisher(const std::filesystem::path& path, const ModelParams<T>& layout) {
  return decode_fisher<T>(io::read_file(path), layout, path.string());
}

}  // namespace cesr
