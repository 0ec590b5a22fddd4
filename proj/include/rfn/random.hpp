#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "rfn/diffcore/array.hpp"

namespace rfn {

using Rng = std::mt19937_64;

// Splits a root seed into an independent per-component seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char ch : label) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (h | 1ULL);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) {
  return derive_seed(derive_seed(root, label), std::to_string(index));
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline diff::RealArray normal_array(Rng& rng, std::size_t rows, std::size_t cols) {
  diff::RealArray a(rows, cols);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = n(rng);
  return a;
}

inline diff::RealArray uniform_array(Rng& rng, std::size_t rows, std::size_t cols, double lo,
                                     double hi) {
  diff::RealArray a(rows, cols);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = u(rng);
  return a;
}

}  // namespace rfn
