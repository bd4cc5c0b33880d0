#pragma once

// Little-endian scalar I/O shared by the feature cache, stats and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "convrnnt/errors.hpp"

namespace convrnnt::binary {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw DataError("unexpected end of binary stream");
  return value;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("unexpected end of binary stream");
  return s;
}

}  // namespace convrnnt::binary
