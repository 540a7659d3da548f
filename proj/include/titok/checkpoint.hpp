#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "titok/params.hpp"
#include "titok/tensor.hpp"
#include "titok/token_file.hpp"

namespace titok {

inline constexpr int kCheckpointFormatVersion = 1;

enum class Dtype { f32, f64 };

inline const char* to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }
inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

template <class T>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

/// One named tensor: little-endian row-major payload.
struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::f64;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  bool operator==(const TensorRecord&) const = default;
};

/// In-memory form of the checkpoint directory:
///   manifest.json  format_version, step, meta, tensor records (name, dtype, shape, offset, length)
///   tensors.bin    concatenated payloads
///   config.json    experiment configuration snapshot
///   rng.json       random engine state
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;
  std::string rng_state;
  std::int64_t step = 0;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const TensorRecord& at(const std::string& name) const {
    if (const auto* r = find(name)) return *r;
    throw FormatError("checkpoint: missing tensor '" + name + "'");
  }
};

namespace detail {

template <class U>
void append_le(std::vector<std::uint8_t>& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  const Bits bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class U>
U read_le(const std::uint8_t* p) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(p[i]) << (8 * i);
  return std::bit_cast<U>(bits);
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("checkpoint: missing " + p.filename().string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + p.string());
  out << s;
  if (!out) throw DataError("checkpoint: short write to " + p.string());
}

}  // namespace detail

template <class U, class T>
TensorRecord make_record(const std::string& name, const Shape& shape, std::span<const T> values) {
  TensorRecord r{name, dtype_of<U>(), shape, {}};
  r.bytes.reserve(values.size() * sizeof(U));
  for (T v : values) detail::append_le<U>(r.bytes, static_cast<U>(v));
  return r;
}

/// Record in the tensor's own precision.
template <class T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  return make_record<T, T>(name, t.shape(), t.values());
}

/// Decodes a record into values of type T, checking element count.
template <class T>
std::vector<T> record_values(const TensorRecord& r) {
  const std::size_t n = numel(r.shape);
  if (r.bytes.size() != n * dtype_size(r.dtype)) {
    throw FormatError("checkpoint: tensor '" + r.name + "' has " + std::to_string(r.bytes.size()) + " bytes for shape " +
                      to_string(r.shape));
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = r.dtype == Dtype::f32 ? static_cast<T>(detail::read_le<float>(r.bytes.data() + 4 * i))
                                   : static_cast<T>(detail::read_le<double>(r.bytes.data() + 8 * i));
  }
  return out;
}

/// Overwrites `t` in place (keeping its requires_grad flag) from a record of identical shape.
template <class T>
void assign_from_record(Tensor<T>& t, const TensorRecord& r) {
  if (r.shape != t.shape()) {
    throw FormatError("checkpoint: tensor '" + r.name + "' has shape " + to_string(r.shape) + ", expected " +
                      to_string(t.shape()));
  }
  const std::vector<T> v = record_values<T>(r);
  for (T x : v) {
    if (!std::isfinite(x)) throw FormatError("checkpoint: tensor '" + r.name + "' holds non-finite values");
  }
  std::copy(v.begin(), v.end(), t.mutable_values().begin());
}

template <class T>
void store_params(Checkpoint& ckpt, const ParamList<T>& params, const std::string& prefix = "") {
  for (const auto& ref : params) ckpt.tensors.push_back(to_record(prefix + ref.name, *ref.tensor));
}

template <class T>
void load_params(const Checkpoint& ckpt, ParamList<T>& params, const std::string& prefix = "") {
  for (auto& ref : params) assign_from_record(*ref.tensor, ckpt.at(prefix + ref.name));
}

/// Writes the checkpoint directory atomically: everything goes to a sibling
/// temporary directory which then replaces `dir`.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(dir);
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  nlohmann::json records = nlohmann::json::array();
  std::vector<std::uint8_t> blob;
  for (const auto& t : ckpt.tensors) {
    records.push_back({{"name", t.name},
                       {"dtype", to_string(t.dtype)},
                       {"shape", t.shape},
                       {"offset", blob.size()},
                       {"length", t.bytes.size()}});
    blob.insert(blob.end(), t.bytes.begin(), t.bytes.end());
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"step", ckpt.step},
                             {"meta", ckpt.meta},
                             {"tensors", records}};
  detail::write_text(tmp / "manifest.json", manifest.dump(2) + "\n");
  detail::write_file_bytes(tmp / "tensors.bin", blob);
  detail::write_text(tmp / "config.json", ckpt.config.dump(2) + "\n");
  detail::write_text(tmp / "rng.json", nlohmann::json{{"engine", "mt19937_64"}, {"state", ckpt.rng_state}}.dump(2) + "\n");

  if (fs::exists(target)) fs::remove_all(target);
  fs::rename(tmp, target);
}

/// Reads and validates a checkpoint directory. Any inconsistency raises
/// FormatError naming the offending field; nothing is returned partially.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  using nlohmann::json;
  auto parse = [&](const char* file) {
    try {
      return json::parse(detail::read_text(dir / file));
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("checkpoint: ") + file + " is not valid JSON: " + e.what());
    }
  };
  const json manifest = parse("manifest.json");
  Checkpoint ckpt;
  try {
    if (!manifest.contains("format_version")) throw FormatError("checkpoint: manifest.json: missing format_version");
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("checkpoint: manifest.json: format_version " + std::to_string(version) + " is not supported");
    }
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.meta = manifest.value("meta", json::object());
    const std::vector<std::uint8_t> blob = detail::read_file_bytes(dir / "tensors.bin");
    const json& records = manifest.at("tensors");
    if (!records.is_array()) throw FormatError("checkpoint: manifest.json: tensors must be an array");
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const json& rec = records[i];
      const std::string where = "checkpoint: manifest.json: tensors[" + std::to_string(i) + "]";
      TensorRecord r;
      r.name = rec.at("name").get<std::string>();
      const std::string dtype = rec.at("dtype").get<std::string>();
      if (dtype == "f32") {
        r.dtype = Dtype::f32;
      } else if (dtype == "f64") {
        r.dtype = Dtype::f64;
      } else {
        throw FormatError(where + ".dtype: unknown dtype '" + dtype + "'");
      }
      r.shape = rec.at("shape").get<Shape>();
      const auto offset = rec.at("offset").get<std::uint64_t>();
      const auto length = rec.at("length").get<std::uint64_t>();
      if (offset != expected_offset) throw FormatError(where + ".offset: expected " + std::to_string(expected_offset));
      if (length != numel(r.shape) * dtype_size(r.dtype)) {
        throw FormatError(where + ".length: " + std::to_string(length) + " bytes do not match shape " + to_string(r.shape));
      }
      if (offset + length > blob.size()) {
        throw FormatError(where + ": tensors.bin is truncated (" + std::to_string(blob.size()) + " bytes)");
      }
      r.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                     blob.begin() + static_cast<std::ptrdiff_t>(offset + length));
      expected_offset += length;
      ckpt.tensors.push_back(std::move(r));
    }
    if (expected_offset != blob.size()) {
      throw FormatError("checkpoint: tensors.bin has " + std::to_string(blob.size() - expected_offset) + " trailing bytes");
    }
    ckpt.config = parse("config.json");
    const json rng = parse("rng.json");
    ckpt.rng_state = rng.at("state").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest field: ") + e.what());
  }
  return ckpt;
}

}  // namespace titok
