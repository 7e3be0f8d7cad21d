#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace egovit::io {

inline void append_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t read_u32_le(const std::string& buf, std::size_t off) {
  if (off + 4 > buf.size()) throw std::runtime_error("truncated u32 field");
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])); };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

inline void append_f32_le(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  append_u32_le(out, v);
}

inline float read_f32_le(const std::string& buf, std::size_t off) {
  std::uint32_t v = read_u32_le(buf, off);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

inline void append_f64_le(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  append_u32_le(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  append_u32_le(out, static_cast<std::uint32_t>(v >> 32));
}

inline double read_f64_le(const std::string& buf, std::size_t off) {
  std::uint64_t lo = read_u32_le(buf, off);
  std::uint64_t hi = read_u32_le(buf, off + 4);
  std::uint64_t v = lo | (hi << 32);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

/// Writes to a temp file in the same directory and renames, so readers never
/// observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace egovit::io
