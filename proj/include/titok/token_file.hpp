#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "titok/error.hpp"

namespace titok {

/// A length-K sequence of code indices into a codebook of size N.
struct TokenIds {
  std::vector<int> ids;
  int codebook_size = 0;

  bool operator==(const TokenIds&) const = default;
};

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace detail

inline constexpr std::array<char, 4> kTokenMagic = {'T', 'I', 'T', '1'};
inline constexpr std::uint32_t kTokenFormatVersion = 1;

/// "TIT1" | u32 version | u32 K | u32 codebook_size | K x u32 ids, little-endian.
inline std::vector<std::uint8_t> token_bytes(const TokenIds& t) {
  std::vector<std::uint8_t> out(kTokenMagic.begin(), kTokenMagic.end());
  detail::put_u32le(out, kTokenFormatVersion);
  detail::put_u32le(out, static_cast<std::uint32_t>(t.ids.size()));
  detail::put_u32le(out, static_cast<std::uint32_t>(t.codebook_size));
  for (int id : t.ids) {
    if (id < 0 || id >= t.codebook_size) throw DataError("token file: id " + std::to_string(id) + " out of range");
    detail::put_u32le(out, static_cast<std::uint32_t>(id));
  }
  return out;
}

inline TokenIds parse_token_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw FormatError("token file: header truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kTokenMagic.data(), 4) != 0) throw FormatError("token file: bad magic, expected TIT1");
  const std::uint32_t version = detail::get_u32le(bytes.data() + 4);
  if (version != kTokenFormatVersion) throw FormatError("token file: unsupported version " + std::to_string(version));
  const std::uint32_t k = detail::get_u32le(bytes.data() + 8);
  const std::uint32_t n = detail::get_u32le(bytes.data() + 12);
  if (bytes.size() != 16 + 4ull * k) {
    throw FormatError("token file: expected " + std::to_string(16 + 4ull * k) + " bytes for K=" + std::to_string(k) +
                      ", got " + std::to_string(bytes.size()));
  }
  if (n < 1 || n > 0x7fffffffu) throw FormatError("token file: invalid codebook_size");
  TokenIds t;
  t.codebook_size = static_cast<int>(n);
  for (std::uint32_t i = 0; i < k; ++i) {
    const std::uint32_t id = detail::get_u32le(bytes.data() + 16 + 4 * i);
    if (id >= n) throw FormatError("token file: id " + std::to_string(id) + " at position " + std::to_string(i) + " >= codebook_size");
    t.ids.push_back(static_cast<int>(id));
  }
  return t;
}

inline void write_token_file(const TokenIds& t, const std::filesystem::path& path) {
  detail::write_file_bytes(path, token_bytes(t));
}

inline TokenIds read_token_file(const std::filesystem::path& path) {
  return parse_token_bytes(detail::read_file_bytes(path));
}

}  // namespace titok
