#include "calderon/family.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "calderon/parallel.hpp"
#include "calderon/random.hpp"

namespace calderon {

std::string to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::Haar: return "haar";
    case Provenance::Smoothed: return "smoothed";
    case Provenance::Loaded: return "loaded";
  }
  return "loaded";
}

Provenance provenance_from_string(const std::string& text) {
  if (text == "haar") return Provenance::Haar;
  if (text == "smoothed") return Provenance::Smoothed;
  if (text == "loaded") return Provenance::Loaded;
  throw std::invalid_argument("unknown provenance '" + text + "'");
}

double OperatorFamily::scale(std::size_t i) const { return std::pow(delta, levels.at(i)); }

Matrix OperatorFamily::sum() const {
  Matrix total = Matrix::Zero(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(n()));
  for (const auto& k : q) total += k;
  return total;
}

double OperatorFamily::integral_target(std::size_t i) const {
  return (mode == Mode::Inhomogeneous && i == 0) ? 1.0 : 0.0;
}

namespace {

// Differences of an averaging ladder P_{k_min} .. P_{k_max} (P_{k_max} = I for
// a singleton finest level) arranged per mode.
void assemble_from_ladder(OperatorFamily& family, const DyadicSystem& system) {
  const Vector& w = family.weights;
  const int k_min = system.k_min();
  const int K = system.k_max() - k_min;
  const bool extra = !(family.p.back() - identity_kernel(w)).isZero(0.0);
  if (family.mode == Mode::Inhomogeneous) {
    family.q.push_back(family.p.front());
    family.levels.push_back(k_min);
    for (int i = 1; i <= K; ++i) {
      family.q.push_back(family.p[static_cast<std::size_t>(i)] - family.p[static_cast<std::size_t>(i - 1)]);
      family.levels.push_back(k_min + i - 1);
    }
  } else {
    if (!(family.p.front() - mean_kernel(w)).isZero(1e-15 / w.minCoeff())) {
      throw GeometryError("homogeneous families need a single cube on the coarsest level");
    }
    for (int i = 0; i < K; ++i) {
      family.q.push_back(family.p[static_cast<std::size_t>(i + 1)] - family.p[static_cast<std::size_t>(i)]);
      family.levels.push_back(k_min + i);
    }
  }
  if (extra) {
    family.q.push_back(identity_kernel(w) - family.p.back());
    family.levels.push_back(system.k_max());
    family.warnings.push_back("finest level is not made of singletons; appended I - P_kmax");
  }
}

}  // namespace

OperatorFamily build_haar_family(const DyadicSystem& system, Mode mode) {
  const auto& space = system.space();
  const auto n = static_cast<Eigen::Index>(space.size());
  OperatorFamily family;
  family.mode = mode;
  family.provenance = Provenance::Haar;
  family.delta = system.delta();
  family.weights = space.weights();
  family.p_k_min = system.k_min();
  for (int k = system.k_min(); k <= system.k_max(); ++k) {
    const auto& lv = system.level(k);
    Matrix p = Matrix::Zero(n, n);
    for (std::size_t a = 0; a < lv.members.size(); ++a) {
      const double value = 1.0 / lv.measure[a];
      for (std::size_t x : lv.members[a]) {
        for (std::size_t y : lv.members[a]) p(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) = value;
      }
    }
    family.p.push_back(std::move(p));
  }
  if (mode == Mode::Homogeneous && system.level(system.k_min()).centers.size() != 1) {
    throw GeometryError("homogeneous families need a single cube on the coarsest level");
  }
  // Exact ends of the ladder: the global mean and the identity.
  if (system.level(system.k_min()).centers.size() == 1) family.p.front() = mean_kernel(family.weights);
  if (system.finest_is_singleton()) family.p.back() = identity_kernel(family.weights);
  assemble_from_ladder(family, system);
  return family;
}

bool symmetric_normalize(const Matrix& h, const Vector& w, Matrix& out, double tol, int max_iterations) {
  const Eigen::Index n = h.rows();
  Vector s = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = 1.0 / std::sqrt(std::max(h.row(i).dot(w), 1e-300));
  for (int it = 0; it < max_iterations; ++it) {
    const Vector hs = h * s.cwiseProduct(w);
    const double err = (s.cwiseProduct(hs).array() - 1.0).abs().maxCoeff();
    if (!std::isfinite(err)) return false;
    if (err <= tol) {
      out.resize(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) = h(i, j) * (s(i) * s(j));
      }
      return true;
    }
    s = (s.array() / hs.array()).sqrt().matrix();
  }
  return false;
}

OperatorFamily build_smoothed_family(const FinitePointSpace& space, const DyadicSystem& system,
                                     SmoothingParams params, Mode mode) {
  if (!(params.nu > 0.0)) throw std::invalid_argument("smoothed family needs nu > 0");
  if (!(params.a > 0.0 && params.a <= 1.0)) throw std::invalid_argument("smoothed family needs a in (0, 1]");
  const auto n = static_cast<Eigen::Index>(space.size());
  OperatorFamily family;
  family.mode = mode;
  family.provenance = Provenance::Smoothed;
  family.delta = system.delta();
  family.weights = space.weights();
  family.params = params;
  family.p_k_min = system.k_min();
  const int k_min = system.k_min();
  const int k_max = system.k_max();
  family.p.resize(static_cast<std::size_t>(k_max - k_min + 1));
  parallel_for(0, family.p.size(), [&](std::size_t idx) {
    const int k = k_min + static_cast<int>(idx);
    if (k == k_min) {
      family.p[idx] = mean_kernel(family.weights);
      return;
    }
    if (k == k_max) {
      family.p[idx] = identity_kernel(family.weights);
      return;
    }
    const double s = system.scale(k);
    Matrix h(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        h(x, y) = std::exp(-params.nu * std::pow(space.distance(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) / s, params.a));
      }
    }
    Matrix p;
    if (!symmetric_normalize(h, family.weights, p)) p = identity_kernel(family.weights);
    family.p[idx] = std::move(p);
  });
  for (std::size_t idx = 1; idx + 1 < family.p.size(); ++idx) {
    if (family.p[idx] == identity_kernel(family.weights)) {
      family.warnings.push_back("normalization failed at level " + std::to_string(k_min + static_cast<int>(idx)) +
                                "; using P = I");
    }
  }
  assemble_from_ladder(family, system);
  return family;
}

// ---------------------------------------------------------------------------
// Audits

namespace {

// Neighbours of every point sorted by distance (ties by rank).
struct NeighbourIndex {
  std::vector<std::vector<std::size_t>> order;
  explicit NeighbourIndex(const FinitePointSpace& space) : order(space.size()) {
    for (std::size_t x = 0; x < space.size(); ++x) {
      auto& o = order[x];
      o.resize(space.size());
      std::iota(o.begin(), o.end(), 0);
      std::sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
        const double da = space.distance(x, a);
        const double db = space.distance(x, b);
        return da < db || (da == db && space.rank(a) < space.rank(b));
      });
    }
  }
  // Points x' != x with d(x, x') <= radius, nearest first.
  template <typename F>
  void within(const FinitePointSpace& space, std::size_t x, double radius, F&& f) const {
    for (std::size_t t = 1; t < order[x].size(); ++t) {
      const std::size_t xp = order[x][t];
      if (space.distance(x, xp) > radius) break;
      f(xp);
    }
  }
};

// (x, y) pairs audited per level: all of them, or a seeded sample.
std::vector<std::pair<std::size_t, std::size_t>> pair_census(std::size_t n, std::size_t budget, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (n * n <= budget) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) pairs.emplace_back(x, y);
    }
  } else {
    for (std::size_t s = 0; s < budget; ++s) pairs.emplace_back(rng.index(n), rng.index(n));
  }
  return pairs;
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

}  // namespace

EstimateReport verify_ati(const OperatorFamily& family, const FinitePointSpace& space,
                          const AtiAuditOptions& options) {
  if (family.p.empty()) throw std::invalid_argument("ATI audit needs the averaging ladder P_k");
  EstimateReport report;
  report.name = "ati";
  report.seed = options.seed;
  const Vector& w = family.weights;
  const std::size_t n = family.n();
  const double A0 = space.A0();
  const NeighbourIndex nb(space);

  double sum_violation = 0.0;
  for (const auto& p : family.p) {
    sum_violation = std::max(sum_violation, ((p * w).array() - 1.0).abs().maxCoeff());
    sum_violation = std::max(sum_violation, ((p.transpose() * w).array() - 1.0).abs().maxCoeff());
  }
  report.add_exact("unit_integrals", "ATI (iv)", sum_violation, options.tolerance);

  const std::size_t L = family.p.size();
  const std::size_t G = options.size_gammas.size();
  std::vector<std::vector<double>> size_max(L, std::vector<double>(G, 0.0));
  std::vector<double> reg_max(L, 0.0), dreg_max(L, 0.0), l1_max(L, 0.0);
  std::vector<std::size_t> counts(L, 0);
  Rng rng(options.seed);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> censuses;
  for (std::size_t l = 0; l < L; ++l) censuses.push_back(pair_census(n, options.pair_budget, rng));

  parallel_for(0, L, [&](std::size_t l) {
    const Matrix& P = family.p[l];
    const double s = std::pow(family.delta, family.p_k_min + static_cast<int>(l));
    auto pv = [&](std::size_t x, std::size_t y) { return P(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)); };
    auto base = [&](std::size_t x, std::size_t y, double gamma) {
      const double d = space.distance(x, y);
      return std::pow(s / (s + d), gamma) / (space.volume(x, s) + space.volume_between(x, y));
    };
    for (std::size_t x = 0; x < n; ++x) {
      l1_max[l] = std::max(l1_max[l], P.row(static_cast<Eigen::Index>(x)).cwiseAbs().dot(w));
      l1_max[l] = std::max(l1_max[l], P.col(static_cast<Eigen::Index>(x)).cwiseAbs().dot(w));
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t g = 0; g < G; ++g) {
          size_max[l][g] = std::max(size_max[l][g], std::abs(pv(x, y)) / base(x, y, options.size_gammas[g]));
        }
      }
    }
    for (const auto& [x, y] : censuses[l]) {
      const double d = space.distance(x, y);
      const double rel = s + d;
      const double b = base(x, y, options.gamma);
      nb.within(space, x, rel / (2.0 * A0), [&](std::size_t xp) {
        const double lhs = std::abs(pv(x, y) - pv(xp, y)) + std::abs(pv(y, x) - pv(y, xp));
        const double rhs = std::pow(space.distance(x, xp) / rel, options.beta) * b;
        reg_max[l] = std::max(reg_max[l], lhs / rhs);
        ++counts[l];
      });
      const double win2 = rel / (4.0 * A0 * A0);
      nb.within(space, x, win2, [&](std::size_t xp) {
        const double fx = std::pow(space.distance(x, xp) / rel, options.beta);
        nb.within(space, y, win2, [&](std::size_t yp) {
          const double lhs = std::abs((pv(x, y) - pv(xp, y)) - (pv(x, yp) - pv(xp, yp)));
          const double rhs = fx * std::pow(space.distance(y, yp) / rel, options.beta) * b;
          dreg_max[l] = std::max(dreg_max[l], lhs / rhs);
          ++counts[l];
        });
      });
    }
  });

  for (std::size_t g = 0; g < G; ++g) {
    double c = 0.0;
    for (std::size_t l = 0; l < L; ++l) c = std::max(c, size_max[l][g]);
    std::ostringstream name;
    name << "size_gamma_" << options.size_gammas[g];
    report.add_fitted(name.str(), "ATI (i)", c).samples = L * n * n;
  }
  auto& reg = report.add_fitted("regularity", "ATI (ii)", max_of(reg_max));
  reg.eta_fit = options.beta;
  auto& dreg = report.add_fitted("second_difference", "ATI (iii)", max_of(dreg_max));
  dreg.eta_fit = options.beta;
  report.add_fitted("l1_bound", "ATI averaging bound", max_of(l1_max));

  // |P_k f(x)| <= C Mf(x) over point indicators and seeded random probes.
  std::vector<Vector> probes;
  for (std::size_t x = 0; x < n; ++x) {
    Vector e = Vector::Zero(static_cast<Eigen::Index>(n));
    e(static_cast<Eigen::Index>(x)) = 1.0;
    probes.push_back(e);
  }
  Rng prng(options.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t r = 0; r < options.random_probes; ++r) {
    Vector f(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = prng.normal();
    probes.push_back(f);
  }
  std::vector<double> ratio(probes.size(), 0.0);
  parallel_for(0, probes.size(), [&](std::size_t pi) {
    const Vector mf = maximal_operator(space, probes[pi]);
    for (const auto& P : family.p) {
      const Vector pf = apply(P, probes[pi], w);
      for (Eigen::Index x = 0; x < pf.size(); ++x) {
        if (mf(x) > 0.0) ratio[pi] = std::max(ratio[pi], std::abs(pf(x)) / mf(x));
      }
    }
  });
  report.add_fitted("maximal_bound", "ATI pointwise maximal bound", max_of(ratio)).samples = probes.size();
  report.census = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  return report;
}

EstimateReport verify_exp_ati(const OperatorFamily& family, const DyadicSystem& system,
                              const ExpAtiAuditOptions& options) {
  const auto& space = system.space();
  const std::size_t n = family.n();
  if (n != space.size()) throw std::invalid_argument("family and dyadic system live on different spaces");
  const double nu = options.nu > 0.0 ? options.nu : family.params.nu;
  const double a = options.a > 0.0 ? options.a : family.params.a;
  const double A0 = space.A0();
  const Vector& w = family.weights;
  EstimateReport report;
  report.name = "exp_ati";
  report.seed = options.seed;

  report.add_exact("identity", "exp-ATI (i)",
                   max_abs(family.sum() - mode_identity(family.mode, w)), options.tolerance);
  double cancel = 0.0;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const double target = family.integral_target(i);
    cancel = std::max(cancel, ((family.q[i] * w).array() - target).abs().maxCoeff());
    cancel = std::max(cancel, ((family.q[i].transpose() * w).array() - target).abs().maxCoeff());
  }
  report.add_exact("cancellation", family.mode == Mode::Homogeneous ? "exp-ATI (v)" : "exp-IATI (iii)",
                   cancel, options.tolerance);

  const NeighbourIndex nb(space);
  const std::size_t L = family.size();
  struct LevelFit {
    double size_noY = 0, size_Y = 0, reg = 0, dreg = 0, reg_rel = 0, dreg_rel = 0;
    bool has_Y = false;
    std::size_t samples = 0;
    // regression sums for nu
    double st = 0, sy = 0, stt = 0, sty = 0, syy = 0;
    std::size_t m = 0;
  };
  std::vector<LevelFit> fits(L);
  Rng rng(options.seed);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> censuses;
  for (std::size_t l = 0; l < L; ++l) censuses.push_back(pair_census(n, options.pair_budget, rng));
  const double nu_rel = nu / std::pow(2.0 * A0, a);

  parallel_for(0, L, [&](std::size_t l) {
    const Matrix& Q = family.q[l];
    const int k = family.levels[l];
    const double s = std::pow(family.delta, k);
    auto& f = fits[l];
    std::vector<double> dy(n), vs(n);
    f.has_Y = k <= system.k_max() && !system.level(k).new_centers.empty();
    // The inhomogeneous Q_0 carries no new-center factor.
    const bool use_Y = f.has_Y && !(family.mode == Mode::Inhomogeneous && l == 0);
    for (std::size_t x = 0; x < n; ++x) {
      dy[x] = use_Y ? dist_to_new_centers(system, x, k) : 0.0;
      vs[x] = space.volume(x, s);
    }
    auto qv = [&](std::size_t x, std::size_t y) { return Q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)); };
    // log of the reciprocal right-hand side, without and with the Y factor
    auto log_inv_base = [&](std::size_t x, std::size_t y, double nu_used) {
      return 0.5 * std::log(vs[x] * vs[y]) + nu_used * std::pow(space.distance(x, y) / s, a);
    };
    auto log_inv_y = [&](std::size_t x, std::size_t y, double nu_used) {
      return nu_used * std::pow(std::max(dy[x], dy[y]) / s, a);
    };
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        const double v = std::abs(qv(x, y));
        if (v == 0.0) continue;
        const double lb = log_inv_base(x, y, nu);
        f.size_noY = std::max(f.size_noY, std::exp(std::log(v) + lb));
        f.size_Y = std::max(f.size_Y, std::exp(std::log(v) + lb + log_inv_y(x, y, nu)));
        const double t = std::pow(space.distance(x, y) / s, a);
        const double yv = std::log(v) + 0.5 * std::log(vs[x] * vs[y]);
        f.st += t;
        f.sy += yv;
        f.stt += t * t;
        f.sty += t * yv;
        f.syy += yv * yv;
        ++f.m;
      }
    }
    for (const auto& [x, y] : censuses[l]) {
      const double lb = log_inv_base(x, y, nu) + log_inv_y(x, y, nu);
      nb.within(space, x, s, [&](std::size_t xp) {
        const double lhs = std::abs(qv(x, y) - qv(xp, y)) + std::abs(qv(y, x) - qv(y, xp));
        if (lhs == 0.0) return;
        f.reg = std::max(f.reg, std::exp(std::log(lhs) + lb) / std::pow(space.distance(x, xp) / s, options.eta));
        ++f.samples;
      });
      nb.within(space, x, s, [&](std::size_t xp) {
        const double mx = std::pow(space.distance(x, xp) / s, options.eta);
        nb.within(space, y, s, [&](std::size_t yp) {
          const double lhs = std::abs((qv(x, y) - qv(xp, y)) - (qv(x, yp) - qv(xp, yp)));
          if (lhs == 0.0) return;
          f.dreg = std::max(f.dreg, std::exp(std::log(lhs) + lb) / (mx * std::pow(space.distance(y, yp) / s, options.eta)));
          ++f.samples;
        });
      });
      // Equivalent forms with [delta^k + d(x,y)]-relative moduli and nu' = nu / (2 A0)^a.
      const double rel = s + space.distance(x, y);
      const double lb_rel = log_inv_base(x, y, nu_rel) + log_inv_y(x, y, nu_rel);
      nb.within(space, x, rel / (2.0 * A0), [&](std::size_t xp) {
        const double lhs = std::abs(qv(x, y) - qv(xp, y)) + std::abs(qv(y, x) - qv(y, xp));
        if (lhs == 0.0) return;
        f.reg_rel = std::max(f.reg_rel, std::exp(std::log(lhs) + lb_rel) / std::pow(space.distance(x, xp) / rel, options.eta));
        ++f.samples;
      });
      const double win2 = rel / (4.0 * A0 * A0);
      nb.within(space, x, win2, [&](std::size_t xp) {
        const double mx = std::pow(space.distance(x, xp) / rel, options.eta);
        nb.within(space, y, win2, [&](std::size_t yp) {
          const double lhs = std::abs((qv(x, y) - qv(xp, y)) - (qv(x, yp) - qv(xp, yp)));
          if (lhs == 0.0) return;
          f.dreg_rel = std::max(f.dreg_rel, std::exp(std::log(lhs) + lb_rel) / (mx * std::pow(space.distance(y, yp) / rel, options.eta)));
          ++f.samples;
        });
      });
    }
  });

  LevelFit total;
  std::vector<std::string> skipped;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& f = fits[l];
    total.size_noY = std::max(total.size_noY, f.size_noY);
    if (f.has_Y || (family.mode == Mode::Inhomogeneous && l == 0)) {
      total.size_Y = std::max(total.size_Y, f.size_Y);
      total.reg = std::max(total.reg, f.reg);
      total.dreg = std::max(total.dreg, f.dreg);
      total.reg_rel = std::max(total.reg_rel, f.reg_rel);
      total.dreg_rel = std::max(total.dreg_rel, f.dreg_rel);
    } else {
      skipped.push_back("level " + std::to_string(family.levels[l]) + " has no new centers");
    }
    total.samples += f.samples;
    total.st += f.st;
    total.sy += f.sy;
    total.stt += f.stt;
    total.sty += f.sty;
    total.syy += f.syy;
    total.m += f.m;
  }
  double nu_fit = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  const double m = static_cast<double>(total.m);
  const double var_t = total.stt - total.st * total.st / std::max(m, 1.0);
  if (total.m >= 2 && var_t > 0.0) {
    const double slope = (total.sty - total.st * total.sy / m) / var_t;
    const double intercept = (total.sy - slope * total.st) / m;
    nu_fit = -slope;
    const double sse = total.syy - 2 * slope * total.sty - 2 * intercept * total.sy + slope * slope * total.stt +
                       2 * slope * intercept * total.st + m * intercept * intercept;
    residual = std::sqrt(std::max(sse, 0.0) / m);
  }

  auto tag = [&](Condition& c) -> Condition& {
    c.nu_fit = nu;
    c.a_used = a;
    for (const auto& s : skipped) c.flags.push_back(s);
    return c;
  };
  auto& size_plain = report.add_fitted("size_without_new_center_factor", "exp-ATI (ii)", total.size_noY);
  size_plain.nu_fit = nu_fit;
  size_plain.a_used = a;
  size_plain.residual = residual;
  size_plain.samples = total.m;
  tag(report.add_fitted("size", "exp-ATI (ii)", total.size_Y));
  tag(report.add_fitted("regularity", "exp-ATI (iii)", total.reg)).eta_fit = options.eta;
  tag(report.add_fitted("second_difference", "exp-ATI (iv)", total.dreg)).eta_fit = options.eta;
  tag(report.add_fitted("regularity_relative", "exp-ATI (iii) relative form", total.reg_rel)).eta_fit = options.eta;
  tag(report.add_fitted("second_difference_relative", "exp-ATI (iv) relative form", total.dreg_rel)).eta_fit = options.eta;
  // The size constant demanded once the fitted decay rate is imposed, with and without the Y factor.
  if (std::isfinite(nu_fit) && nu_fit > 0.0) {
    double with_fit_noY = 0.0, with_fit_Y = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const Matrix& Q = family.q[l];
      const int k = family.levels[l];
      const double s = std::pow(family.delta, k);
      const bool use_Y = !system.level(k).new_centers.empty() && !(family.mode == Mode::Inhomogeneous && l == 0);
      for (std::size_t x = 0; x < n; ++x) {
        const double dyx = use_Y ? dist_to_new_centers(system, x, k) : 0.0;
        for (std::size_t y = 0; y < n; ++y) {
          const double v = std::abs(Q(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)));
          if (v == 0.0) continue;
          const double dyy = use_Y ? dist_to_new_centers(system, y, k) : 0.0;
          const double lb = 0.5 * std::log(space.volume(x, s) * space.volume(y, s)) +
                            nu_fit * std::pow(space.distance(x, y) / s, a);
          with_fit_noY = std::max(with_fit_noY, std::exp(std::log(v) + lb));
          with_fit_Y = std::max(with_fit_Y, std::exp(std::log(v) + lb + nu_fit * std::pow(std::max(dyx, dyy) / s, a)));
        }
      }
    }
    auto& c1 = report.add_fitted("size_at_fitted_nu_without_new_center_factor", "exp-ATI (ii)", with_fit_noY);
    c1.nu_fit = nu_fit;
    c1.a_used = a;
    auto& c2 = report.add_fitted("size_at_fitted_nu", "exp-ATI (ii)", with_fit_Y);
    c2.nu_fit = nu_fit;
    c2.a_used = a;
    c2.residual = with_fit_noY > 0.0 ? with_fit_Y / with_fit_noY : std::numeric_limits<double>::quiet_NaN();
  }
  report.census = total.samples + total.m;
  return report;
}

Composition compose_and_audit(const OperatorFamily& A, std::size_t j, const OperatorFamily& B, std::size_t k,
                              const DyadicSystem& system, const CompositionOptions& options) {
  if (A.n() != B.n() || A.n() != system.space().size()) throw std::invalid_argument("compose_and_audit: dimension mismatch");
  if (j >= A.size() || k >= B.size()) throw std::out_of_range("compose_and_audit: level index out of range");
  const auto& space = system.space();
  const std::size_t n = A.n();
  const double A0 = space.A0();
  const Vector& w = A.weights;
  Composition out;
  out.kernel = compose(A.q[j], B.q[k], w);
  out.report.name = "composition";

  auto frame = [&](int level, std::vector<double>& vs, std::vector<double>& dy) {
    const double s = std::pow(A.delta, level);
    const bool has_Y = !system.level(level).new_centers.empty();
    vs.resize(n);
    dy.resize(n);
    for (std::size_t x = 0; x < n; ++x) {
      vs[x] = space.volume(x, s);
      dy[x] = has_Y ? dist_to_new_centers(system, x, level) : 0.0;
    }
    return s;
  };
  // max |K(x,y)| V_s(x) exp(c (d/s)^a) exp(c (d(x,Y)/s)^a)
  auto size_max = [&](const Matrix& K, int level) {
    std::vector<double> vs, dy;
    const double s = frame(level, vs, dy);
    double best = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        const double v = std::abs(K(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)));
        if (v == 0.0) continue;
        const double lb = std::log(vs[x]) + options.c * std::pow(space.distance(x, y) / s, options.a) +
                          options.c * std::pow(dy[x] / s, options.a);
        best = std::max(best, std::exp(std::log(v) + lb));
      }
    }
    return best;
  };

  const int m_level = std::min(A.levels[j], B.levels[k]);
  const int gap = std::abs(A.levels[j] - B.levels[k]);
  const double size_c = size_max(out.kernel, m_level) / std::pow(A.delta, 0.0 * gap);
  auto& sz = out.report.add_fitted("size", "composition (i)", size_c);

  // Decay exponent over offsets |j - k| = 0..max_offset anchored at min(j, k).
  const std::size_t base = std::min(j, k);
  std::vector<double> xs, ys;
  for (int o = 0; o <= options.max_offset; ++o) {
    const std::size_t hi = base + static_cast<std::size_t>(o);
    if (hi >= A.size() || base >= B.size() || hi >= B.size()) break;
    const Matrix K = (j >= k) ? compose(A.q[hi], B.q[base], w) : compose(A.q[base], B.q[hi], w);
    const double v = size_max(K, std::min(A.levels[std::min(hi, A.size() - 1)], B.levels[base]));
    if (v > 0.0) {
      xs.push_back(static_cast<double>(o));
      ys.push_back(std::log(v));
    }
  }
  if (xs.size() >= 2) {
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;
    sz.eta_fit = slope / std::log(A.delta);
    double sse = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - (my + slope * (xs[i] - mx));
      sse += r * r;
    }
    sz.residual = std::sqrt(sse / static_cast<double>(xs.size()));
  } else {
    sz.flags.push_back("decay exponent not fitted: fewer than two nonzero offsets");
  }
  sz.a_used = options.a;

  // Mixed regularity and second difference at the requested pair.
  const NeighbourIndex nb(space);
  std::vector<double> vs, dy;
  const double s = frame(m_level, vs, dy);
  const Matrix& K = out.kernel;
  auto kv = [&](std::size_t x, std::size_t y) { return K(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)); };
  double reg = 0.0, dreg = 0.0;
  std::size_t samples = 0;
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (x == y) continue;
      const double d = space.distance(x, y);
      const double lb = std::log(vs[x]) + options.c * std::pow(d / s, options.a) + options.c * std::pow(dy[x] / s, options.a);
      nb.within(space, x, d / (4.0 * A0 * A0), [&](std::size_t xp) {
        const double lhs = std::abs(kv(x, y) - kv(xp, y)) + std::abs(kv(y, x) - kv(y, xp));
        if (lhs == 0.0) return;
        reg = std::max(reg, std::exp(std::log(lhs) + lb) / std::pow(space.distance(x, xp) / s, options.eta_prime));
        ++samples;
      });
      const double win3 = d / std::pow(2.0 * A0, 3);
      nb.within(space, x, win3, [&](std::size_t xp) {
        const double mx = std::pow(space.distance(x, xp) / s, options.eta_prime);
        nb.within(space, y, win3, [&](std::size_t yp) {
          const double lhs = std::abs((kv(x, y) - kv(xp, y)) - (kv(x, yp) - kv(xp, yp)));
          if (lhs == 0.0) return;
          dreg = std::max(dreg, std::exp(std::log(lhs) + lb) / (mx * std::pow(space.distance(y, yp) / s, options.eta_prime)));
          ++samples;
        });
      });
    }
  }
  out.report.add_fitted("mixed_regularity", "composition (ii)", reg).eta_fit = options.eta_prime;
  out.report.add_fitted("second_difference", "composition (iii)", dreg).eta_fit = options.eta_prime;

  // Cancellation follows from B_k's rows and A_j's columns.
  const bool rows_cancel = ((B.q[k] * w).cwiseAbs().maxCoeff() <= options.tolerance);
  const bool cols_cancel = ((A.q[j].transpose() * w).cwiseAbs().maxCoeff() <= options.tolerance);
  if (rows_cancel) {
    out.report.add_exact("row_cancellation", "composition (iv)", (K * w).cwiseAbs().maxCoeff(), options.tolerance);
  }
  if (cols_cancel) {
    out.report.add_exact("column_cancellation", "composition (iv)", (K.transpose() * w).cwiseAbs().maxCoeff(), options.tolerance);
  }
  if (!rows_cancel && !cols_cancel) {
    out.report.add_fitted("cancellation", "composition (iv)", 0.0).flags.push_back("not applicable: factors lack cancellation");
  }
  out.report.census = samples;
  return out;
}

}  // namespace calderon
