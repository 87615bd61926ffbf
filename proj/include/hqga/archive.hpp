// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-array container in the safetensors layout:
//
//   u64 little-endian header length | UTF-8 JSON header | raw tensor bytes
//
// The header maps each array name to {"dtype","shape","data_offsets"} and
// carries string metadata under "__metadata__". Arrays are written in name
// order, so identical contents always produce identical files.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hqga/errors.hpp"
#include "hqga/tensor.hpp"

namespace hqga {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

enum class DType { F32, F64 };

inline const char* dtype_name(DType t) { return t == DType::F32 ? "F32" : "F64"; }
inline std::size_t dtype_size(DType t) { return t == DType::F32 ? 4 : 8; }

template <typename S>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? DType::F32 : DType::F64;
}

struct StoredArray {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<unsigned char> bytes;

  std::int64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }
};

class NamedArrays {
 public:
  template <typename T>
  void put(const std::string& name, std::vector<std::int64_t> shape, std::span<const T> data) {
    StoredArray a;
    a.dtype = dtype_of<T>();
    a.shape = std::move(shape);
    if (a.element_count() != static_cast<std::int64_t>(data.size()))
      throw ShapeMismatchError("array \"" + name + "\": shape does not match element count");
    a.bytes.resize(data.size() * sizeof(T));
    if (!data.empty()) std::memcpy(a.bytes.data(), data.data(), a.bytes.size());
    arrays_[name] = std::move(a);
  }

  template <typename S>
  void put_matrix(const std::string& name, const Mat<S>& m) {
    put<S>(name, {m.rows(), m.cols()}, std::span<const S>(m.data(), static_cast<std::size_t>(m.size())));
  }

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }

  const StoredArray& at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw MissingArrayError(name);
    return it->second;
  }

  // Reads an array of dtype T; throws on dtype or shape mismatch.
  template <typename T>
  std::vector<T> get(const std::string& name, const std::vector<std::int64_t>& expected_shape) const {
    const StoredArray& a = at(name);
    if (a.dtype != dtype_of<T>())
      throw ShapeMismatchError("array \"" + name + "\": expected dtype " + dtype_name(dtype_of<T>()) + ", found " +
                               dtype_name(a.dtype));
    if (a.shape != expected_shape) throw ShapeMismatchError("array \"" + name + "\": " + shape_text(a.shape) +
                                                            " where " + shape_text(expected_shape) + " was expected");
    std::vector<T> out(static_cast<std::size_t>(a.element_count()));
    if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
    return out;
  }

  template <typename S>
  Mat<S> get_matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    auto v = get<S>(name, {rows, cols});
    return Eigen::Map<const Mat<S>>(v.data(), rows, cols);
  }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const std::map<std::string, StoredArray>& arrays() const { return arrays_; }

  static std::string shape_text(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

 private:
  std::map<std::string, StoredArray> arrays_;
  std::map<std::string, std::string> metadata_;
};

inline void write_archive(const NamedArrays& archive, const std::filesystem::path& path) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, a] : archive.arrays()) {
    header[name] = {{"dtype", dtype_name(a.dtype)},
                    {"shape", a.shape},
                    {"data_offsets", {offset, offset + a.bytes.size()}}};
    offset += a.bytes.size();
  }
  if (!archive.metadata().empty()) header["__metadata__"] = archive.metadata();
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, a] : archive.arrays())
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline NamedArrays read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw CorruptManifestError(path.string() + ": truncated archive header");
  std::uint64_t len = 0;
  std::memcpy(&len, buf.data(), sizeof(len));
  if (len > buf.size() - 8) throw CorruptManifestError(path.string() + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptManifestError(path.string() + ": unreadable header: " + e.what());
  }
  if (!header.is_object()) throw CorruptManifestError(path.string() + ": header is not an object");

  NamedArrays archive;
  const std::size_t data_start = 8 + static_cast<std::size_t>(len);
  const std::size_t data_size = buf.size() - data_start;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      try {
        archive.metadata() = entry.get<std::map<std::string, std::string>>();
      } catch (const nlohmann::json::exception&) {
        throw CorruptManifestError(path.string() + ": metadata must map strings to strings");
      }
      continue;
    }
    try {
      const std::string dt = entry.at("dtype").get<std::string>();
      DType dtype;
      if (dt == "F32") {
        dtype = DType::F32;
      } else if (dt == "F64") {
        dtype = DType::F64;
      } else {
        throw CorruptManifestError(path.string() + ": unsupported dtype " + dt + " for " + name);
      }
      auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size)
        throw CorruptManifestError(path.string() + ": bad data offsets for " + name);
      StoredArray a;
      a.dtype = dtype;
      a.shape = std::move(shape);
      if (static_cast<std::uint64_t>(a.element_count()) * dtype_size(dtype) != offsets[1] - offsets[0])
        throw ShapeMismatchError(path.string() + ": byte size of " + name + " does not match its shape");
      a.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(data_start + offsets[0]),
                     buf.begin() + static_cast<std::ptrdiff_t>(data_start + offsets[1]));
      // Re-insert through put to keep one code path for layout.
      if (dtype == DType::F32) {
        std::vector<float> tmp(a.bytes.size() / 4);
        if (!tmp.empty()) std::memcpy(tmp.data(), a.bytes.data(), a.bytes.size());
        archive.put<float>(name, a.shape, tmp);
      } else {
        std::vector<double> tmp(a.bytes.size() / 8);
        if (!tmp.empty()) std::memcpy(tmp.data(), a.bytes.data(), a.bytes.size());
        archive.put<double>(name, a.shape, tmp);
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorruptManifestError(path.string() + ": malformed entry for " + name + ": " + e.what());
    }
  }
  return archive;
}

}  // namespace hqga
