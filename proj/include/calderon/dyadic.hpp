#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "calderon/space.hpp"

namespace calderon {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetOptions {
  double delta = 0.5;
  double c0 = 1.0;
  double C0 = 1.0;
  /// Explicit [k_min, k_max]; automatic when empty.
  std::optional<std::pair<int, int>> k_range;
  /// Enforce 12 A0^3 C0 delta <= c0 and the ball sandwich with the derived constants.
  bool strict = false;
};

/// Nested greedy nets. centers[k - k_min] lists point indices; the centers of
/// level k - 1 come first, in the same order, followed by the new ones.
struct NetHierarchy {
  double delta = 0.5;
  int k_min = 0;
  int k_max = 0;
  double c0 = 1.0;
  double C0 = 1.0;
  bool strict = false;
  std::vector<std::vector<std::size_t>> centers;
  /// Achieved constants: min d(z, z') / delta^k and max_x d(x, net) / delta^k.
  double separation_fit = std::numeric_limits<double>::infinity();
  double covering_fit = 0.0;
  bool separation_ok = true;
  bool covering_ok = true;

  std::size_t level_count() const { return centers.size(); }
  double scale(int k) const;
  const std::vector<std::size_t>& level(int k) const { return centers.at(static_cast<std::size_t>(k - k_min)); }
};

NetHierarchy build_nets(const FinitePointSpace& space, const NetOptions& options);

/// One dyadic level: cube alpha has center centers[alpha]; assignment maps
/// points to cubes; parent indexes the cube one level coarser.
struct DyadicLevel {
  int k = 0;
  std::vector<std::size_t> centers;
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> parent;
  std::vector<std::vector<std::size_t>> children;
  std::vector<std::vector<std::size_t>> members;
  std::vector<double> measure;
  /// Centers that first appear at level k + 1 (empty on the finest level).
  std::vector<std::size_t> new_centers;
};

struct DyadicChecks {
  bool partition = true;
  bool nesting = true;
  bool sandwich = true;
  double partition_measure_error = 0.0;
  /// min over cubes of (largest admissible inner radius) / delta^k
  double inner_radius_fit = std::numeric_limits<double>::infinity();
  /// max over cubes of (max distance center -> member) / delta^k
  double outer_radius_fit = 0.0;
  std::string sandwich_witness;
};

class DyadicSystem {
 public:
  DyadicSystem(const FinitePointSpace& space, NetHierarchy net);

  const FinitePointSpace& space() const { return *space_; }
  const NetHierarchy& net() const { return net_; }
  double delta() const { return net_.delta; }
  int k_min() const { return net_.k_min; }
  int k_max() const { return net_.k_max; }
  double scale(int k) const { return net_.scale(k); }
  /// (3 A0^2)^-1 c0 and 2 A0 C0.
  double c_inner() const;
  double C_outer() const;

  const DyadicLevel& level(int k) const;
  std::size_t cube_of(int k, std::size_t point) const { return level(k).assignment[point]; }
  /// True when every point is its own cube on the finest level.
  bool finest_is_singleton() const;
  const DyadicChecks& checks() const { return checks_; }

  /// Deterministic JSON serialization (sorted keys).
  std::string to_json() const;

 private:
  void verify();

  const FinitePointSpace* space_;
  NetHierarchy net_;
  std::vector<DyadicLevel> levels_;
  DyadicChecks checks_;
};

/// Builds the cube tree: finest-level points go to their nearest center and
/// every coarser cube is the union of the children whose centers it is
/// nearest to.
DyadicSystem build_dyadic(const FinitePointSpace& space, NetHierarchy net);

/// d(x, Y^k); +inf when Y^k is empty.
double dist_to_new_centers(const DyadicSystem& system, std::size_t x, int k);

struct ExpSumFit {
  double C1_fit = 0.0;  // max S1(x, r) V_r(x)
  double C2_fit = 0.0;  // max S2(x, y) V(x, y)
  std::size_t pairs_r = 0;
  std::size_t pairs_xy = 0;
  std::size_t empty_levels = 0;
};

/// Exponential sums over new-center distances, fitted against V_r(x) and V(x, y).
ExpSumFit verify_expsum(const DyadicSystem& system, double a, double c, std::uint64_t sample_seed);

enum class Sampler { Center, Random, WorstCase };
std::string to_string(Sampler sampler);
Sampler sampler_from_string(const std::string& text);

struct Subcube {
  std::vector<std::size_t> members;
  double measure = 0.0;
  std::size_t center = 0;
  std::size_t sample = 0;
};

/// Level k + j0 descendants of every level-k cube, for k in [k_min, k_max].
/// Levels past k_max reuse the finest level when it is made of singletons.
class SubcubeRefinement {
 public:
  SubcubeRefinement(const DyadicSystem& system, int j0, Sampler sampler, std::uint64_t seed);

  int j0() const { return j0_; }
  Sampler sampler() const { return sampler_; }
  const DyadicSystem& system() const { return *system_; }
  /// Subcubes of every cube at level k, flattened in cube order.
  const std::vector<Subcube>& subcubes(int k) const;
  /// Per cube alpha at level k: the half-open range into subcubes(k).
  const std::vector<std::pair<std::size_t, std::size_t>>& cube_ranges(int k) const;

 private:
  const DyadicSystem* system_;
  int j0_;
  Sampler sampler_;
  std::vector<std::vector<Subcube>> per_level_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> ranges_;
};

SubcubeRefinement refine_subcubes(const DyadicSystem& system, int j0, Sampler sampler,
                                  std::uint64_t seed = 0);

}  // namespace calderon
