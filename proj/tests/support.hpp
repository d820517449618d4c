#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "calderon/space.hpp"

namespace support {

using calderon::FinitePointSpace;
using calderon::Matrix;
using calderon::Vector;

inline std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%03zu", i);
    out.push_back(buf);
  }
  return out;
}

inline double grid_point(std::size_t i, std::size_t n) { return n > 1 ? double(i) / double(n - 1) : 0.0; }

/// n equispaced points on [0, 1] with d = |x - y|^rho.
inline FinitePointSpace grid(std::size_t n, double weight = -1.0, double rho = 1.0, double A0 = 1.0) {
  std::vector<std::vector<double>> coords;
  for (std::size_t i = 0; i < n; ++i) coords.push_back({grid_point(i, n)});
  const double w = weight > 0 ? weight : 1.0 / double(n);
  calderon::MetricSpec spec;
  if (rho != 1.0) {
    spec.kind = calderon::MetricKind::Power;
    spec.rho = rho;
  }
  return FinitePointSpace::from_coordinates(ids(n), coords, std::vector<double>(n, w), spec, A0);
}

inline FinitePointSpace weighted_grid(const std::vector<double>& weights) {
  const std::size_t n = weights.size();
  std::vector<std::vector<double>> coords;
  for (std::size_t i = 0; i < n; ++i) coords.push_back({grid_point(i, n)});
  return FinitePointSpace::from_coordinates(ids(n), coords, weights, {}, 1.0);
}

/// Seeded Gaussian matrix / vector from the standard library (independent of the library RNG).
inline Matrix random_matrix(std::size_t rows, std::size_t cols, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = nd(gen);
  return m;
}

inline Vector random_vector(std::size_t n, unsigned seed) { return random_matrix(n, 1, seed).col(0); }

/// Brute-force volume of the open ball from raw coordinates of a 1-d grid.
inline double brute_volume(const FinitePointSpace& s, std::size_t x, double r) {
  double v = 0.0;
  for (std::size_t y = 0; y < s.size(); ++y)
    if (s.distance(x, y) < r) v += s.weight(y);
  return v;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("calderon_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
