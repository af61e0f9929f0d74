#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lesionseg {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy mirrors the CLI exit-code contract: config -> 2, data -> 3,
// numeric -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), seed);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// Percentile with linear interpolation between order statistics
// (rank = (n-1) * q / 100). `sorted` must be ascending and nonempty.
template <typename T>
double percentile_sorted(const std::vector<T>& sorted, double q) {
  if (sorted.empty()) throw NumericError("percentile of empty sample");
  if (sorted.size() == 1) return static_cast<double>(sorted[0]);
  const double r = (static_cast<double>(sorted.size()) - 1.0) * q / 100.0;
  const auto lo = static_cast<size_t>(std::floor(r));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = r - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

template <typename T>
double percentile(std::vector<T> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace lesionseg
