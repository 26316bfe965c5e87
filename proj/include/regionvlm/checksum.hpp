#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <utility>
#include <string_view>

namespace regionvlm {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) { return fnv1a(s.data(), s.size(), h); }

// Hashes values in little-endian byte order regardless of host order.
template <class T>
std::uint64_t fnv1a_values(const T* v, std::size_t n, std::uint64_t h = kFnvOffset) {
  static_assert(std::is_trivially_copyable_v<T>);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v[i], sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      for (std::size_t a = 0, b = sizeof(T) - 1; a < b; ++a, --b) std::swap(bytes[a], bytes[b]);
    h = fnv1a(bytes, sizeof(T), h);
  }
  return h;
}

inline std::uint64_t fnv1a_doubles(const double* v, std::size_t n, std::uint64_t h = kFnvOffset) {
  return fnv1a_values(v, n, h);
}

}  // namespace regionvlm
