#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "calderon/kernel.hpp"

namespace calderon {

/// Malformed input data or a violated structural requirement of a space.
class SpaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MetricKind { Euclidean, Power, Explicit };

struct MetricSpec {
  MetricKind kind = MetricKind::Euclidean;
  double rho = 1.0;         // d = |x - y|^rho for Power
  std::string matrix_file;  // Explicit only
};

/// Finite quasi-metric measure space. Immutable after construction.
class FinitePointSpace {
 public:
  /// Formula metric d(x, y) = |x - y|_2^rho (rho = 1 is Euclidean).
  static FinitePointSpace from_coordinates(std::vector<std::string> ids,
                                           std::vector<std::vector<double>> coords,
                                           std::vector<double> weights, MetricSpec metric,
                                           double A0);
  /// Explicit distance matrix; checked for symmetry and identity of indiscernibles.
  static FinitePointSpace from_matrix(std::vector<std::string> ids, Matrix distances,
                                      std::vector<double> weights, double A0);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::vector<double>>& coordinates() const { return coords_; }
  const MetricSpec& metric() const { return metric_; }
  std::size_t index_of(const std::string& id) const;
  /// Position of point i in the lexicographic order of ids. All tie-breaks use
  /// it, so results do not depend on the order points were listed in.
  std::size_t rank(std::size_t i) const { return rank_[i]; }

  double distance(std::size_t i, std::size_t j) const { return dist_(i, j); }
  const Matrix& distances() const { return dist_; }
  const Vector& weights() const { return weights_; }
  double weight(std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }
  double total_measure() const { return total_; }
  double A0() const { return A0_; }
  double diameter() const { return diameter_; }
  /// Smallest positive distance; +inf for a one-point space.
  double min_positive_distance() const { return min_dist_; }
  /// Half the minimal positive distance (1 for a one-point space).
  double epsilon0() const;

  /// Points of the open ball B(x, r) = {y : d(x, y) < r}.
  std::vector<std::size_t> ball(std::size_t x, double r) const;
  /// V_r(x) = mu(B(x, r)).
  double volume(std::size_t x, double r) const;
  /// V(x, y) = mu(B(x, d(x, y))).
  double volume_between(std::size_t x, std::size_t y) const { return volume(x, distance(x, y)); }
  /// Finite radius census {d(x, y) + eps0 : y in X} used by the maximal operator and audits.
  std::vector<double> radius_census(std::size_t x) const;

 private:
  FinitePointSpace() = default;
  void finalize();

  std::vector<std::string> ids_;
  std::vector<std::vector<double>> coords_;
  MetricSpec metric_;
  Matrix dist_;
  Vector weights_;
  double A0_ = 1.0;
  double total_ = 0.0;
  double diameter_ = 0.0;
  double min_dist_ = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> rank_;
  // Per point: neighbours sorted by distance and the running weight sums.
  std::vector<std::vector<double>> sorted_dist_;
  std::vector<std::vector<double>> cumulative_weight_;
};

/// Reads the JSON space file; an explicit matrix file is resolved relative to it.
FinitePointSpace load_space(const std::filesystem::path& path);

/// Little-endian binary64 payload helpers shared by the file formats.
std::vector<double> read_f64_file(const std::filesystem::path& path, std::size_t expected_count);
void write_f64_file(const std::filesystem::path& path, const double* data, std::size_t count);

// ---------------------------------------------------------------------------
// Audits

/// Exhaustive enumeration below this size, seeded sampling above it.
inline constexpr std::size_t kExhaustiveBudget = 128;

struct QuasiMetricAudit {
  double A0_fit = 1.0;
  double declared_A0 = 1.0;
  bool within_declared = true;
  bool symmetric = true;
  std::size_t triples = 0;
  bool exhaustive = true;
  std::size_t witness[3] = {0, 0, 0};
};

QuasiMetricAudit quasi_metric_audit(const FinitePointSpace& space, std::uint64_t sample_seed,
                                    std::size_t triple_count);

struct DoublingAudit {
  double C_mu_fit = 1.0;
  double omega_fit = 0.0;
  /// sup over lambda in {2, 4, 8} of mu(lambda B) / (lambda^omega_fit mu(B)).
  double consistency_residual = 1.0;
  std::size_t worst_point = 0;
  double worst_radius = 0.0;
  double worst_lambda = 2.0;
  std::size_t samples = 0;
  bool exhaustive = true;
};

DoublingAudit doubling_audit(const FinitePointSpace& space, std::uint64_t sample_seed,
                             std::size_t pair_count);

struct GeometryAudit {
  double V_xy_over_V_yx = 1.0;               // max V(x,y)/V(y,x)
  double ball_sum_over_enlarged = 1.0;       // max (V_r(x)+V(x,y)) / mu(B(x, r+d))
  double enlarged_over_ball_sum = 1.0;       // max mu(B(x, r+d)) / (V_r(x)+V(x,y))
  double integral_ii = 0.0;                  // max of the gamma-decay integral
  double integral_iii_inner = 0.0;           // max of sum_{d<=R} (d/R)^beta / V(x,y)
  double integral_iii_outer = 0.0;           // max of sum_{d>=R} (R/d)^beta / V(x,y)
  double integral_iv_ratio = 0.0;            // max LHS / (r/(r+R))^gamma
  std::size_t configurations = 0;
};

GeometryAudit geometry_equivalence_audit(const FinitePointSpace& space,
                                         std::uint64_t sample_seed);

/// Hardy-Littlewood maximal function over the finite radius census.
Vector maximal_operator(const FinitePointSpace& space, const Vector& f);

/// (sum |f_i|^p w_i)^(1/p); p = +inf gives max |f_i|.
double lp_norm(const FinitePointSpace& space, const Vector& f, double p);
double lp_norm(const Vector& w, const Vector& f, double p);

}  // namespace calderon
