#include "calderon/dyadic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "calderon/parallel.hpp"
#include "calderon/random.hpp"

namespace calderon {

double NetHierarchy::scale(int k) const { return std::pow(delta, k); }

namespace {

// Largest integer k with delta^k >= target (delta in (0, 1), target > 0).
int coarsest_level_covering(double delta, double target) {
  int k = static_cast<int>(std::floor(std::log(target) / std::log(delta)));
  while (std::pow(delta, k) < target) --k;
  while (std::pow(delta, k + 1) >= target) ++k;
  return k;
}

// Index with the best key; ties go to the smallest id rank.
template <typename Key>
std::size_t argbest(const FinitePointSpace& space, std::size_t n, Key key) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const double a = key(i);
    const double b = key(best);
    if (a > b || (a == b && space.rank(i) < space.rank(best))) best = i;
  }
  return best;
}

}  // namespace

NetHierarchy build_nets(const FinitePointSpace& space, const NetOptions& options) {
  const std::size_t n = space.size();
  if (n == 0) throw GeometryError("cannot build nets on an empty space");
  if (!(options.delta > 0.0 && options.delta < 1.0)) throw GeometryError("delta must lie in (0, 1)");
  if (!(options.c0 > 0.0 && options.c0 <= options.C0)) throw GeometryError("need 0 < c0 <= C0");
  const double A0 = space.A0();
  if (options.strict && 12.0 * A0 * A0 * A0 * options.C0 * options.delta > options.c0) {
    std::ostringstream msg;
    msg << "strict geometry: 12 A0^3 C0 delta = " << 12.0 * A0 * A0 * A0 * options.C0 * options.delta
        << " exceeds c0 = " << options.c0;
    throw GeometryError(msg.str());
  }

  NetHierarchy net;
  net.delta = options.delta;
  net.c0 = options.c0;
  net.C0 = options.C0;
  net.strict = options.strict;

  // Seed: the point of least eccentricity.
  const std::size_t seed = argbest(space, n, [&](std::size_t i) {
    return -space.distances().row(static_cast<Eigen::Index>(i)).maxCoeff();
  });
  const double eccentricity = space.distances().row(static_cast<Eigen::Index>(seed)).maxCoeff();

  if (options.k_range) {
    net.k_min = options.k_range->first;
    net.k_max = options.k_range->second;
    if (net.k_max < net.k_min) throw GeometryError("k_range is empty");
  } else if (n == 1) {
    net.k_min = 0;
    net.k_max = 0;
  } else {
    net.k_min = coarsest_level_covering(options.delta, std::max(space.diameter(), eccentricity / options.c0));
    net.k_max = net.k_min;
    while (options.c0 * std::pow(options.delta, net.k_max) >= space.min_positive_distance()) ++net.k_max;
  }

  std::vector<double> to_net(n, std::numeric_limits<double>::infinity());
  std::vector<bool> in_net(n, false);
  auto add_center = [&](std::vector<std::size_t>& level, std::size_t c) {
    level.push_back(c);
    in_net[c] = true;
    for (std::size_t i = 0; i < n; ++i) to_net[i] = std::min(to_net[i], space.distance(i, c));
  };

  std::vector<std::size_t> current;
  add_center(current, seed);
  for (int k = net.k_min; k <= net.k_max; ++k) {
    const double threshold = options.c0 * net.scale(k);
    while (true) {
      const std::size_t far = argbest(space, n, [&](std::size_t i) { return to_net[i]; });
      if (!(to_net[far] > threshold)) break;
      add_center(current, far);
    }
    net.centers.push_back(current);
  }

  for (int k = net.k_min; k <= net.k_max; ++k) {
    const auto& level = net.level(k);
    const double s = net.scale(k);
    for (std::size_t a = 0; a < level.size(); ++a) {
      for (std::size_t b = a + 1; b < level.size(); ++b) {
        net.separation_fit = std::min(net.separation_fit, space.distance(level[a], level[b]) / s);
      }
    }
    for (std::size_t x = 0; x < n; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c : level) best = std::min(best, space.distance(x, c));
      net.covering_fit = std::max(net.covering_fit, best / s);
    }
  }
  net.separation_ok = net.separation_fit >= net.c0;
  net.covering_ok = net.covering_fit <= net.C0;
  return net;
}

DyadicSystem::DyadicSystem(const FinitePointSpace& space, NetHierarchy net)
    : space_(&space), net_(std::move(net)) {
  const std::size_t n = space.size();
  const int levels = net_.k_max - net_.k_min + 1;
  levels_.resize(static_cast<std::size_t>(levels));
  for (int k = net_.k_min; k <= net_.k_max; ++k) {
    auto& lv = levels_[static_cast<std::size_t>(k - net_.k_min)];
    lv.k = k;
    lv.centers = net_.level(k);
  }

  auto nearest = [&](std::size_t x, const std::vector<std::size_t>& centers) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < centers.size(); ++a) {
      const double da = space.distance(x, centers[a]);
      const double db = space.distance(x, centers[best]);
      if (da < db || (da == db && space.rank(centers[a]) < space.rank(centers[best]))) best = a;
    }
    return best;
  };

  // Finest level: nearest center.
  {
    auto& fine = levels_.back();
    fine.assignment.resize(n);
    for (std::size_t x = 0; x < n; ++x) fine.assignment[x] = nearest(x, fine.centers);
  }
  // Coarser levels: each child cube follows its center's nearest coarse center.
  for (std::size_t li = levels_.size() - 1; li > 0; --li) {
    auto& child = levels_[li];
    auto& coarse = levels_[li - 1];
    child.parent.resize(child.centers.size());
    for (std::size_t c = 0; c < child.centers.size(); ++c) child.parent[c] = nearest(child.centers[c], coarse.centers);
    coarse.assignment.resize(n);
    for (std::size_t x = 0; x < n; ++x) coarse.assignment[x] = child.parent[child.assignment[x]];
  }
  for (std::size_t li = 0; li < levels_.size(); ++li) {
    auto& lv = levels_[li];
    lv.members.assign(lv.centers.size(), {});
    lv.measure.assign(lv.centers.size(), 0.0);
    for (std::size_t x = 0; x < n; ++x) {
      lv.members[lv.assignment[x]].push_back(x);
      lv.measure[lv.assignment[x]] += space.weight(x);
    }
    lv.children.assign(lv.centers.size(), {});
    if (li + 1 < levels_.size()) {
      const auto& child = levels_[li + 1];
      for (std::size_t c = 0; c < child.centers.size(); ++c) lv.children[child.parent[c]].push_back(c);
      lv.new_centers.assign(child.centers.begin() + static_cast<std::ptrdiff_t>(lv.centers.size()), child.centers.end());
    }
  }
  verify();
}

double DyadicSystem::c_inner() const { return net_.c0 / (3.0 * space_->A0() * space_->A0()); }

double DyadicSystem::C_outer() const { return 2.0 * space_->A0() * net_.C0; }

const DyadicLevel& DyadicSystem::level(int k) const {
  if (k < net_.k_min || k > net_.k_max) throw GeometryError("level " + std::to_string(k) + " outside the dyadic range");
  return levels_[static_cast<std::size_t>(k - net_.k_min)];
}

bool DyadicSystem::finest_is_singleton() const { return levels_.back().centers.size() == space_->size(); }

void DyadicSystem::verify() {
  const auto& space = *space_;
  const std::size_t n = space.size();
  for (std::size_t li = 0; li < levels_.size(); ++li) {
    const auto& lv = levels_[li];
    // Partition: every point in exactly one cube, measures add up.
    std::size_t covered = 0;
    double measure = 0.0;
    for (std::size_t a = 0; a < lv.centers.size(); ++a) {
      covered += lv.members[a].size();
      measure += lv.measure[a];
      if (lv.members[a].empty()) checks_.partition = false;
    }
    if (covered != n) checks_.partition = false;
    checks_.partition_measure_error = std::max(checks_.partition_measure_error, std::abs(measure - space.total_measure()));
    // Nesting: points sharing a cube at level l share it at every coarser level.
    for (std::size_t lj = 0; lj < li; ++lj) {
      const auto& coarse = levels_[lj];
      for (std::size_t a = 0; a < lv.centers.size(); ++a) {
        const std::size_t anc = coarse.assignment[lv.members[a].front()];
        for (std::size_t x : lv.members[a]) {
          if (coarse.assignment[x] != anc) checks_.nesting = false;
        }
      }
    }
    // Sandwich radii.
    const double s = net_.scale(lv.k);
    for (std::size_t a = 0; a < lv.centers.size(); ++a) {
      const std::size_t z = lv.centers[a];
      double inner = std::numeric_limits<double>::infinity();
      double outer = 0.0;
      for (std::size_t x = 0; x < n; ++x) {
        if (lv.assignment[x] == a) {
          outer = std::max(outer, space.distance(z, x));
        } else {
          inner = std::min(inner, space.distance(z, x));
        }
      }
      if (lv.assignment[z] != a) checks_.sandwich = false;
      checks_.inner_radius_fit = std::min(checks_.inner_radius_fit, inner / s);
      checks_.outer_radius_fit = std::max(checks_.outer_radius_fit, outer / s);
      const bool ok = c_inner() * s <= inner && outer < C_outer() * s;
      if (!ok && checks_.sandwich_witness.empty()) {
        std::ostringstream w;
        w << "level " << lv.k << " cube centered at " << space.ids()[z] << ": inner " << inner / s
          << " vs " << c_inner() << ", outer " << outer / s << " vs " << C_outer() << " (units of delta^k)";
        checks_.sandwich_witness = w.str();
      }
      if (!ok) checks_.sandwich = false;
    }
  }
  if (checks_.partition_measure_error > 1e-12 * space.total_measure()) checks_.partition = false;
}

std::string DyadicSystem::to_json() const {
  nlohmann::json doc;
  doc["delta"] = net_.delta;
  doc["k_range"] = {net_.k_min, net_.k_max};
  doc["constants"] = {{"c0", net_.c0},
                      {"C0", net_.C0},
                      {"c_inner", c_inner()},
                      {"C_outer", C_outer()},
                      {"inner_radius_fit", checks_.inner_radius_fit},
                      {"outer_radius_fit", checks_.outer_radius_fit}};
  doc["checks"] = {{"partition", checks_.partition}, {"nesting", checks_.nesting}, {"sandwich", checks_.sandwich}};
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& lv : levels_) {
    std::vector<std::string> center_ids;
    for (std::size_t c : lv.centers) center_ids.push_back(space_->ids()[c]);
    std::vector<std::string> new_ids;
    for (std::size_t c : lv.new_centers) new_ids.push_back(space_->ids()[c]);
    levels.push_back({{"k", lv.k}, {"centers", center_ids}, {"assignment", lv.assignment}, {"new_centers", new_ids}});
  }
  doc["levels"] = levels;
  return doc.dump(1);
}

DyadicSystem build_dyadic(const FinitePointSpace& space, NetHierarchy net) {
  DyadicSystem system(space, std::move(net));
  if (system.net().strict && !system.checks().sandwich) {
    throw GeometryError("ball sandwich violated: " + system.checks().sandwich_witness);
  }
  return system;
}

double dist_to_new_centers(const DyadicSystem& system, std::size_t x, int k) {
  const auto& lv = system.level(k);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c : lv.new_centers) best = std::min(best, system.space().distance(x, c));
  return best;
}

ExpSumFit verify_expsum(const DyadicSystem& system, double a, double c, std::uint64_t sample_seed) {
  if (system.k_max() <= system.k_min()) throw GeometryError("exponential sums need at least two levels");
  const auto& space = system.space();
  const std::size_t n = space.size();
  const int levels = system.k_max() - system.k_min() + 1;
  ExpSumFit fit;

  // Per (x, level): 1 / V_{delta^k}(x) * exp(-c [d(x, Y^k)/delta^k]^a); zero for empty Y^k.
  Matrix term(static_cast<Eigen::Index>(n), levels);
  for (int k = system.k_min(); k <= system.k_max(); ++k) {
    if (system.level(k).new_centers.empty()) ++fit.empty_levels;
    const double s = system.scale(k);
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = dist_to_new_centers(system, x, k);
      term(static_cast<Eigen::Index>(x), k - system.k_min()) =
          std::isinf(dy) ? 0.0 : std::exp(-c * std::pow(dy / s, a)) / space.volume(x, s);
    }
  }

  std::vector<std::size_t> points;
  if (n <= kExhaustiveBudget) {
    for (std::size_t x = 0; x < n; ++x) points.push_back(x);
  } else {
    Rng rng(sample_seed);
    for (int s = 0; s < 256; ++s) points.push_back(rng.index(n));
  }
  std::vector<double> c1(points.size(), 0.0), c2(points.size(), 0.0);
  std::vector<std::size_t> n1(points.size(), 0), n2(points.size(), 0);
  parallel_for(0, points.size(), [&](std::size_t pi) {
    const std::size_t x = points[pi];
    const auto xi = static_cast<Eigen::Index>(x);
    for (double r : space.radius_census(x)) {
      double s1 = 0.0;
      for (int k = system.k_min(); k <= system.k_max(); ++k) {
        if (system.scale(k) >= r) s1 += term(xi, k - system.k_min());
      }
      c1[pi] = std::max(c1[pi], s1 * space.volume(x, r));
      ++n1[pi];
    }
    for (std::size_t y = 0; y < n; ++y) {
      if (y == x) continue;
      const double d = space.distance(x, y);
      double s2 = 0.0;
      for (int k = system.k_min(); k <= system.k_max(); ++k) {
        s2 += term(xi, k - system.k_min()) * std::exp(-c * std::pow(d / system.scale(k), a));
      }
      c2[pi] = std::max(c2[pi], s2 * space.volume_between(x, y));
      ++n2[pi];
    }
  });
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    fit.C1_fit = std::max(fit.C1_fit, c1[pi]);
    fit.C2_fit = std::max(fit.C2_fit, c2[pi]);
    fit.pairs_r += n1[pi];
    fit.pairs_xy += n2[pi];
  }
  return fit;
}

std::string to_string(Sampler sampler) {
  switch (sampler) {
    case Sampler::Center: return "center";
    case Sampler::Random: return "random";
    case Sampler::WorstCase: return "worst-case";
  }
  return "center";
}

Sampler sampler_from_string(const std::string& text) {
  if (text == "center") return Sampler::Center;
  if (text == "random") return Sampler::Random;
  if (text == "worst-case" || text == "worst_case") return Sampler::WorstCase;
  throw std::invalid_argument("unknown sampler '" + text + "'");
}

SubcubeRefinement::SubcubeRefinement(const DyadicSystem& system, int j0, Sampler sampler, std::uint64_t seed)
    : system_(&system), j0_(j0), sampler_(sampler) {
  if (j0 < 0) throw GeometryError("j0 must be nonnegative");
  const auto& space = system.space();
  const double A0 = space.A0();
  if (system.net().strict && std::pow(system.delta(), j0) > system.C_outer() / std::pow(2.0 * A0, 4)) {
    throw GeometryError("strict geometry: delta^j0 exceeds (2 A0)^-4 C_outer");
  }
  Rng rng(seed);
  for (int k = system.k_min(); k <= system.k_max(); ++k) {
    int target = k + j0;
    if (target > system.k_max()) {
      if (!system.finest_is_singleton()) {
        throw GeometryError("j0 = " + std::to_string(j0) + " pushes level " + std::to_string(k) + " past k_max");
      }
      target = system.k_max();
    }
    const auto& lv = system.level(k);
    const auto& fine = system.level(target);
    std::vector<std::vector<std::size_t>> by_cube(lv.centers.size());
    for (std::size_t b = 0; b < fine.centers.size(); ++b) {
      by_cube[lv.assignment[fine.members[b].front()]].push_back(b);
    }
    std::vector<Subcube> subs;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t a = 0; a < lv.centers.size(); ++a) {
      const std::size_t start = subs.size();
      for (std::size_t b : by_cube[a]) {
        Subcube sc;
        sc.members = fine.members[b];
        sc.measure = fine.measure[b];
        sc.center = fine.centers[b];
        switch (sampler) {
          case Sampler::Center:
            sc.sample = sc.center;
            break;
          case Sampler::Random: {
            const double u = rng.uniform() * sc.measure;
            double acc = 0.0;
            sc.sample = sc.members.back();
            for (std::size_t x : sc.members) {
              acc += space.weight(x);
              if (u < acc) {
                sc.sample = x;
                break;
              }
            }
            break;
          }
          case Sampler::WorstCase: {
            sc.sample = sc.members.front();
            for (std::size_t x : sc.members) {
              const double dx = space.distance(x, sc.center);
              const double ds = space.distance(sc.sample, sc.center);
              if (dx > ds || (dx == ds && space.rank(x) < space.rank(sc.sample))) sc.sample = x;
            }
            break;
          }
        }
        subs.push_back(std::move(sc));
      }
      ranges.emplace_back(start, subs.size());
    }
    per_level_.push_back(std::move(subs));
    ranges_.push_back(std::move(ranges));
  }
}

const std::vector<Subcube>& SubcubeRefinement::subcubes(int k) const {
  return per_level_.at(static_cast<std::size_t>(k - system_->k_min()));
}

const std::vector<std::pair<std::size_t, std::size_t>>& SubcubeRefinement::cube_ranges(int k) const {
  return ranges_.at(static_cast<std::size_t>(k - system_->k_min()));
}

SubcubeRefinement refine_subcubes(const DyadicSystem& system, int j0, Sampler sampler, std::uint64_t seed) {
  return SubcubeRefinement(system, j0, sampler, seed);
}

}  // namespace calderon
