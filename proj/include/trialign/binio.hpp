#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "trialign/error.hpp"

namespace trialign {

// Little-endian byte buffer serialization. The on-disk formats (dataset,
// checkpoint) are fixed-width records over these primitives plus a trailing
// CRC32, so truncation and corruption are distinguishable.

inline uint32_t crc32(std::span<const uint8_t> bytes, uint32_t seed = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xffffffffu;
  for (uint8_t b : bytes) c = table[(c ^ b) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

struct ByteWriter {
  std::vector<uint8_t> bytes;

  void put_raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void put_u8(uint8_t v) { bytes.push_back(v); }
  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_i32(int32_t v) { put_u32(static_cast<uint32_t>(v)); }
  void put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(u);
  }
  void put_f64_span(std::span<const double> v) {
    for (double x : v) put_f64(x);
  }
  void put_magic(const char (&m)[9]) { put_raw(m, 8); }
};

struct ByteReader {
  std::span<const uint8_t> bytes;
  size_t pos = 0;

  explicit ByteReader(std::span<const uint8_t> b) : bytes(b) {}

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw_invalid_input("truncated file: unexpected end of data");
  }
  void get_raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  uint8_t get_u8() {
    need(1);
    return bytes[pos++];
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  int32_t get_i32() { return static_cast<int32_t>(get_u32()); }
  uint64_t get_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double get_f64() {
    uint64_t u = get_u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  void get_f64_span(std::span<double> out) {
    for (double& x : out) x = get_f64();
  }
  bool check_magic(const char (&m)[9]) {
    char got[8];
    get_raw(got, 8);
    return std::memcmp(got, m, 8) == 0;
  }
};

// Writes via a temp file + rename so failures never leave partial output.
inline void atomic_write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path() && !path.parent_path().empty()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_invalid_state("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw_invalid_state("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw_invalid_state("rename failed for: " + path.string());
  }
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  atomic_write_file(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_invalid_state("cannot open file: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Frame a payload with a trailing CRC32 and verify on the way back in.
inline std::vector<uint8_t> seal_with_crc(ByteWriter&& w) {
  uint32_t c = crc32(w.bytes);
  w.put_u32(c);
  return std::move(w.bytes);
}

inline std::span<const uint8_t> unseal_checked(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4) throw_invalid_input("truncated file: too short for checksum");
  auto payload = bytes.subspan(0, bytes.size() - 4);
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  if (crc32(payload) != stored) throw_invalid_input("checksum mismatch: file corrupted");
  return payload;
}

}  // namespace trialign
