#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>
#include <type_traits>

#include "baeeeg/errors.hpp"

namespace baeeeg::binio {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <typename T>
void put(std::ostream& os, T value) {
  value = to_little(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("unexpected end of binary file");
  return to_little(value);
}

inline void put_doubles(std::ostream& os, std::span<const double> values) {
  for (double v : values) put(os, v);
}

inline void get_doubles(std::istream& is, std::span<double> values) {
  for (double& v : values) v = get<double>(is);
}

inline void put_magic(std::ostream& os, std::string_view magic) {
  char buf[8] = {};
  std::memcpy(buf, magic.data(), std::min<std::size_t>(magic.size(), 8));
  os.write(buf, 8);
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  char buf[8] = {};
  if (!is.read(buf, 8)) throw IoError("unexpected end of binary file");
  char want[8] = {};
  std::memcpy(want, magic.data(), std::min<std::size_t>(magic.size(), 8));
  if (std::memcmp(buf, want, 8) != 0) throw IoError("bad magic: expected " + std::string(magic));
}

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void value(T v) {
    v = to_little(v);
    bytes(&v, sizeof(T));
  }
  void doubles(std::span<const double> values) {
    for (double v : values) value(v);
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace baeeeg::binio
