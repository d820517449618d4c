#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "calderon/dyadic.hpp"
#include "support.hpp"

namespace support {

/// Exhaustive (C1, C2) of the exponential sums over every (x, y), with the new
/// centers recomputed from the raw center lists.
inline std::pair<double, double> expsum_oracle(const calderon::FinitePointSpace& s,
                                               const calderon::DyadicSystem& sys, double a, double c) {
  const double delta = sys.delta();
  const double eps0 = s.min_positive_distance() / 2;
  std::vector<std::vector<std::size_t>> fresh;
  for (int k = sys.k_min(); k <= sys.k_max(); ++k) {
    std::vector<std::size_t> f;
    if (k < sys.k_max()) {
      const auto& now = sys.level(k).centers;
      for (std::size_t z : sys.level(k + 1).centers)
        if (std::find(now.begin(), now.end(), z) == now.end()) f.push_back(z);
    }
    fresh.push_back(f);
  }
  auto term = [&](std::size_t x, int k) {
    const auto& f = fresh[static_cast<std::size_t>(k - sys.k_min())];
    if (f.empty()) return 0.0;
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t z : f) d = std::min(d, s.distance(x, z));
    const double sc = std::pow(delta, k);
    return std::exp(-c * std::pow(d / sc, a)) / brute_volume(s, x, sc);
  };
  double C1 = 0.0, C2 = 0.0;
  const std::size_t n = s.size();
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      const double r = s.distance(x, y) + eps0;
      double s1 = 0.0;
      for (int k = sys.k_min(); k <= sys.k_max(); ++k)
        if (std::pow(delta, k) >= r) s1 += term(x, k);
      C1 = std::max(C1, s1 * brute_volume(s, x, r));
      if (y == x) continue;
      const double d = s.distance(x, y);
      double s2 = 0.0;
      for (int k = sys.k_min(); k <= sys.k_max(); ++k)
        s2 += term(x, k) * std::exp(-c * std::pow(d / std::pow(delta, k), a));
      C2 = std::max(C2, s2 * brute_volume(s, x, d));
    }
  }
  return {C1, C2};
}

}  // namespace support
