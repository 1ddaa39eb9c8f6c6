#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "duppo/error.hpp"

namespace duppo::io {

// Little-endian integer and IEEE-754 binary64 encoding.

template <class UInt>
void put_le(std::ostream& out, UInt value) {
  char buf[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    buf[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(buf, sizeof(UInt));
}

template <class UInt>
UInt get_le(std::istream& in) {
  unsigned char buf[sizeof(UInt)];
  in.read(reinterpret_cast<char*>(buf), sizeof(UInt));
  if (!in) throw IoError("unexpected end of binary stream");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& out, double x) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline void put_f64s(std::ostream& out, std::span<const double> xs) {
  for (double x : xs) put_f64(out, x);
}
inline void get_f64s(std::istream& in, std::span<double> xs) {
  for (double& x : xs) x = get_f64(in);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("unexpected end of binary stream");
  return s;
}

}  // namespace duppo::io
