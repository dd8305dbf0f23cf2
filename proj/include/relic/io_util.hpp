#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

namespace relic {

// --- little-endian binary helpers ------------------------------------------

inline void write_u8(std::ostream& os, uint8_t v) { os.put(char(v)); }
inline void write_u16(std::ostream& os, uint16_t v) {
  char b[2] = {char(v & 0xff), char(v >> 8)};
  os.write(b, 2);
}
inline void write_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}
inline void write_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}
inline void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

[[noreturn]] inline void truncated(const std::string& what) {
  throw std::runtime_error("truncated file while reading " + what);
}

inline uint8_t read_u8(std::istream& is, const char* what) {
  int c = is.get();
  if (c == EOF) truncated(what);
  return uint8_t(c);
}
inline uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) truncated(what);
  return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}
inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) truncated(what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}
inline uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) truncated(what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}
inline float read_f32(std::istream& is, const char* what) {
  uint32_t bits = read_u32(is, what);
  float v;
  __builtin_memcpy(&v, &bits, 4);
  return v;
}

// --- whole-file helpers -----------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(bytes.data(), std::streamsize(bytes.size()));
}

// Content hash (FNV-1a 64) used for run manifests and reproducibility checks.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_hash(const std::string& path) {
  std::string bytes = read_file(path);
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

// --- logging ----------------------------------------------------------------

// RELIC_LOG: quiet | info (default) | debug
inline int log_level() {
  static int level = [] {
    const char* env = std::getenv("RELIC_LOG");
    if (!env) return 1;
    std::string v(env);
    if (v == "quiet" || v == "0") return 0;
    if (v == "debug" || v == "2") return 2;
    return 1;
  }();
  return level;
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  if (log_level() >= 1) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
  }
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_level() >= 2) {
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
  }
}

}  // namespace relic
