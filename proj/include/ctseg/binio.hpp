#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ctseg/errors.hpp"

namespace ctseg::binio {

// All on-disk formats are little-endian; the engine targets little-endian
// hosts only.
static_assert(std::endian::native == std::endian::little,
              "little-endian host required");

inline void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void read_raw(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("unexpected end of file");
}

template <class V>
void write_pod(std::ostream& os, V v) {
  write_raw(os, &v, sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v{};
  read_raw(is, &v, sizeof(V));
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_raw(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, std::uint32_t max_len = 4096) {
  const std::uint32_t n = read_pod<std::uint32_t>(is);
  if (n > max_len) throw FormatError("string field implausibly long");
  std::string s(n, '\0');
  read_raw(is, s.data(), n);
  return s;
}

// Value arrays stored as little-endian float32 regardless of the in-memory
// element type.
template <class T>
void write_f32v(std::ostream& os, const std::vector<T>& v) {
  if constexpr (std::is_same_v<T, float>) {
    write_raw(os, v.data(), v.size() * sizeof(float));
  } else {
    std::vector<float> tmp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      tmp[i] = static_cast<float>(v[i]);
    write_raw(os, tmp.data(), tmp.size() * sizeof(float));
  }
}

template <class T>
void read_f32v(std::istream& is, std::vector<T>& v) {
  if constexpr (std::is_same_v<T, float>) {
    read_raw(is, v.data(), v.size() * sizeof(float));
  } else {
    std::vector<float> tmp(v.size());
    read_raw(is, tmp.data(), tmp.size() * sizeof(float));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(tmp[i]);
  }
}

// Full-precision twin of the pair above (train-state files).
template <class T>
void write_f64v(std::ostream& os, const std::vector<T>& v) {
  if constexpr (std::is_same_v<T, double>) {
    write_raw(os, v.data(), v.size() * sizeof(double));
  } else {
    std::vector<double> tmp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      tmp[i] = static_cast<double>(v[i]);
    write_raw(os, tmp.data(), tmp.size() * sizeof(double));
  }
}

template <class T>
void read_f64v(std::istream& is, std::vector<T>& v) {
  if constexpr (std::is_same_v<T, double>) {
    read_raw(is, v.data(), v.size() * sizeof(double));
  } else {
    std::vector<double> tmp(v.size());
    read_raw(is, tmp.data(), tmp.size() * sizeof(double));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(tmp[i]);
  }
}

}  // namespace ctseg::binio
