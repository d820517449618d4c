#include "calderon/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calderon/parallel.hpp"
#include "calderon/random.hpp"
#include "engine_detail.hpp"

namespace calderon {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

std::vector<Matrix> window_sums(const OperatorFamily& family, int N) {
  if (N < 0) throw std::invalid_argument("window_sums: N must be nonnegative");
  const int K = static_cast<int>(family.size());
  std::vector<Matrix> out(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    const int kk = static_cast<int>(k);
    Matrix s = Matrix::Zero(ix(family.n()), ix(family.n()));
    for (int l = std::max(0, kk - N); l <= std::min(K - 1, kk + N); ++l) s += family.q[static_cast<std::size_t>(l)];
    out[k] = std::move(s);
  });
  return out;
}

IdentitySplit split_identity(const OperatorFamily& family, int N) {
  if (N < 0) throw std::invalid_argument("split_identity: N must be nonnegative");
  const Vector& w = family.weights;
  const int K = static_cast<int>(family.size());
  IdentitySplit split;
  split.N = N;
  split.mode = family.mode;
  split.window = window_sums(family, N);
  std::vector<Matrix> t_terms(family.size());
  std::vector<Matrix> r_terms(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    t_terms[k] = compose(split.window[k], family.q[k], w);
    Matrix r = Matrix::Zero(ix(family.n()), ix(family.n()));
    const int kk = static_cast<int>(k);
    for (int j = 0; j < K; ++j) {
      if (std::abs(j - kk) > N) r += compose(family.q[static_cast<std::size_t>(j)], family.q[k], w);
    }
    r_terms[k] = std::move(r);
  });
  const Matrix I = mode_identity(family.mode, w);
  split.T = Matrix::Zero(I.rows(), I.cols());
  Matrix ledger_sum = Matrix::Zero(I.rows(), I.cols());
  for (std::size_t k = 0; k < family.size(); ++k) {
    split.T += t_terms[k];
    ledger_sum += r_terms[k];
  }
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < K; ++j) {
      if (std::abs(j - k) > N) split.ledger.emplace_back(k, j - k);
    }
  }
  split.R = I - split.T;
  // The kernel scale is 1/w; compare relative to it.
  const double scale = std::max(1.0, 1.0 / w.minCoeff());
  split.ledger_mismatch = max_abs(split.R - ledger_sum) / scale;
  if (split.ledger_mismatch > 1e-8) {
    throw std::runtime_error("split_identity: remainder ledger disagrees with I - T_N by " +
                             std::to_string(split.ledger_mismatch));
  }
  split.identity_violation = max_abs(split.T + split.R - I);
  return split;
}

NormEstimate operator_norm_l2(const Vector& w, const Matrix& K, std::uint64_t seed) {
  const Vector s = w.cwiseSqrt();
  const Matrix B = s.asDiagonal() * K * s.asDiagonal();
  NormEstimate out;
  if (B.size() == 0 || B.cwiseAbs().maxCoeff() == 0.0) return out;
  Rng rng(seed);
  Vector v(B.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  double lambda = 0.0;
  out.converged = false;
  constexpr int kCap = 10000;
  for (int it = 1; it <= kCap; ++it) {
    const Vector z = B.transpose() * (B * v);
    lambda = v.dot(z);
    out.iterations = it;
    if (!(lambda > 0.0)) {
      // v fell into the kernel; restart from a fresh direction.
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
      v.normalize();
      continue;
    }
    const double residual = (z - lambda * v).norm() / lambda;
    v = z / z.norm();
    if (residual < 1e-10) {
      out.converged = true;
      break;
    }
  }
  const Vector bv = B * v;
  out.value = std::sqrt(std::max(lambda, bv.squaredNorm()));
  return out;
}

nlohmann::json Certificate::to_json() const {
  return {{"rho", number_json(rho)},
          {"j_star", j_star},
          {"tail_bound", number_json(tail_bound)},
          {"residual", number_json(residual)},
          {"rho_converged", rho_converged},
          {"sound", sound()}};
}

int neumann_terms(double rho, double tol) {
  if (!(rho < 1.0)) throw NeumannError("Neumann series diverges: rho >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("neumann_terms: tol must be positive");
  if (rho <= 0.0) return 0;
  int j = 0;
  while (std::pow(rho, j + 1) / (1.0 - rho) > tol) ++j;
  return j;
}

NeumannInverse neumann_invert(const Vector& w, Mode mode, const Matrix& remainder, double tol) {
  const NormEstimate rho = operator_norm_l2(w, remainder);
  if (!(rho.value < 1.0)) {
    throw NeumannError("remainder norm " + std::to_string(rho.value) +
                       " >= 1; raise N (and j0 for discrete formulae)");
  }
  NeumannInverse out;
  auto& c = out.certificate;
  c.rho = rho.value;
  c.rho_converged = rho.converged;
  c.j_star = neumann_terms(rho.value, tol);
  c.tail_bound = rho.value > 0.0 ? std::pow(rho.value, c.j_star + 1) / (1.0 - rho.value) : 0.0;
  const Matrix I = mode_identity(mode, w);
  out.inverse = I;
  for (int j = 0; j < c.j_star; ++j) out.inverse = I + compose(remainder, out.inverse, w);
  const Matrix T = I - remainder;
  c.residual = operator_norm_l2(w, compose(T, out.inverse, w) - I).value;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Probe> probe_census(const DyadicSystem& system, Mode mode, const ProbeOptions& options) {
  const auto& space = system.space();
  const std::size_t n = space.size();
  const Vector& w = space.weights();
  std::vector<Probe> probes;
  if (options.bumps && n > 1) {
    const std::size_t x = system.level(system.k_min()).centers.front();
    const double diam = space.diameter();
    const double fine = std::max(1.5 * space.min_positive_distance(), diam / 32.0);
    const std::pair<const char*, double> radii[] = {{"bump_coarse", diam / 2.0}, {"bump_mid", diam / 8.0}, {"bump_fine", fine}};
    for (const auto& [name, r] : radii) probes.push_back({name, make_bump(space, x, r)});
  }
  if (options.haar && system.k_max() > system.k_min()) {
    const OperatorFamily haar = build_haar_family(system, Mode::Inhomogeneous);
    const std::size_t K = haar.size() - 1;
    const std::size_t first = std::max<std::size_t>(1, K / 2);
    for (std::size_t i : {first, std::min(first + 1, K)}) {
      for (std::size_t y = 0; y < n; ++y) {
        probes.push_back({"haar_" + std::to_string(haar.levels[i]) + "_" + space.ids()[y], haar.q[i].col(ix(y))});
      }
      if (first + 1 > K) break;
    }
  }
  Rng rng(options.seed);
  for (std::size_t r = 0; r < options.random; ++r) {
    Vector f(ix(n));
    for (std::size_t i = 0; i < n; ++i) f(ix(i)) = rng.normal();
    probes.push_back({"random_" + std::to_string(r), f});
  }
  if (mode == Mode::Homogeneous) {
    for (auto& p : probes) p.f.array() -= mean(p.f, w);
    // Drop probes that vanish once the mean is removed (e.g. a bump covering X).
    probes.erase(std::remove_if(probes.begin(), probes.end(),
                                [](const Probe& p) { return p.f.cwiseAbs().maxCoeff() < 1e-14; }),
                 probes.end());
  } else {
    probes.push_back({"constant", Vector::Ones(ix(n))});
  }
  return probes;
}

nlohmann::json Reconstruction::to_json() const {
  return {{"l2", number_json(l2)},
          {"l1.5", number_json(l15)},
          {"l4", number_json(l4)},
          {"worst_probe", worst_probe},
          {"probes", probes},
          {"bound_ratio", number_json(bound_ratio)}};
}

Reconstruction measure_reconstruction(const Vector& w, const std::vector<Probe>& probes, const Synthesis& synth,
                                      double tail_bound, double synthesis_norm) {
  struct Row {
    double l2, l15, l4, bound;
  };
  std::vector<Row> rows(probes.size());
  parallel_for(0, probes.size(), [&](std::size_t i) {
    const Vector& f = probes[i].f;
    const Vector err = f - synth(f);
    const double n2 = lp_norm(w, f, 2.0);
    const double e2 = lp_norm(w, err, 2.0);
    rows[i].l2 = e2 / n2;
    rows[i].l15 = lp_norm(w, err, 1.5) / lp_norm(w, f, 1.5);
    rows[i].l4 = lp_norm(w, err, 4.0) / lp_norm(w, f, 4.0);
    const double allowed = tail_bound * n2 * std::max(1.0, synthesis_norm) + Certificate::kSlack * n2;
    rows[i].bound = e2 / allowed;
  });
  Reconstruction out;
  out.probes = probes.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (out.worst_probe.empty() || rows[i].l2 > out.l2) out.worst_probe = probes[i].name;
    out.l2 = std::max(out.l2, rows[i].l2);
    out.l15 = std::max(out.l15, rows[i].l15);
    out.l4 = std::max(out.l4, rows[i].l4);
    out.bound_ratio = std::max(out.bound_ratio, rows[i].bound);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(ContinuousVariant v) { return v == ContinuousVariant::Left ? "left" : "right"; }

namespace {

// Size and first-variable regularity of dual kernels at their own scales.
void fit_duals(EstimateReport& report, const std::string& prefix, const std::vector<Matrix>& kernels,
               const OperatorFamily& family, const FinitePointSpace& space, double gamma, double beta,
               bool second_variable) {
  const std::size_t n = space.size();
  const double A0 = space.A0();
  std::vector<double> size(kernels.size(), 0.0), reg(kernels.size(), 0.0);
  parallel_for(0, kernels.size(), [&](std::size_t k) {
    const Matrix K = second_variable ? Matrix(kernels[k].transpose()) : kernels[k];
    const double s = family.scale(k);
    for (std::size_t x = 0; x < n; ++x) {
      const double vs = space.volume(x, s);
      for (std::size_t y = 0; y < n; ++y) {
        const double d = space.distance(x, y);
        const double env = std::pow(s / (s + d), gamma) / (vs + space.volume_between(x, y));
        size[k] = std::max(size[k], std::abs(K(ix(x), ix(y))) / env);
        for (std::size_t xp = 0; xp < n; ++xp) {
          const double dx = space.distance(x, xp);
          if (xp == x || dx > (s + d) / (2.0 * A0)) continue;
          reg[k] = std::max(reg[k], std::abs(K(ix(x), ix(y)) - K(ix(xp), ix(y))) /
                                        (std::pow(dx / (s + d), beta) * env));
        }
      }
    }
  });
  report.add_fitted(prefix + "_size", "dual size", *std::max_element(size.begin(), size.end()));
  report.add_fitted(prefix + (second_variable ? "_regularity_second_variable" : "_regularity_first_variable"),
                    "dual regularity", *std::max_element(reg.begin(), reg.end()))
      .eta_fit = beta;
}

}  // namespace

namespace detail {

// Row and column integrals of the duals against their targets.
double integral_violation(const std::vector<Matrix>& kernels, const Vector& w, Mode mode, int N) {
  double v = 0.0;
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    const double target = (mode == Mode::Inhomogeneous && static_cast<int>(k) <= N) ? 1.0 : 0.0;
    v = std::max(v, (row_integrals(kernels[k], w).array() - target).abs().maxCoeff());
    v = std::max(v, (column_integrals(kernels[k], w).array() - target).abs().maxCoeff());
  }
  return v;
}

void add_reconstruction_conditions(EstimateReport& report, const std::string& prefix, const DualFamily& dual,
                                   const CrfOptions& options) {
  report.add_exact(prefix + "_certificate_residual", "Neumann certificate", dual.certificate.residual,
                   2.0 * dual.certificate.tail_bound + Certificate::kSlack);
  report.add_exact(prefix + "_reconstruction_bound", "certified reconstruction bound",
                   dual.reconstruction.bound_ratio, 1.0);
  report.add_exact(prefix + "_reconstruction_l2", "reconstruction", dual.reconstruction.l2, options.reconstruction_l2);
  report.add_exact(prefix + "_reconstruction_l1.5", "reconstruction", dual.reconstruction.l15,
                   options.reconstruction_lp);
  report.add_exact(prefix + "_reconstruction_l4", "reconstruction", dual.reconstruction.l4, options.reconstruction_lp);
}

}  // namespace detail

CrfResult continuous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                         ContinuousVariant variant) {
  const Vector& w = family.weights;
  const IdentitySplit split = split_identity(family, options.N);
  const NeumannInverse inv = neumann_invert(w, family.mode, split.R, options.tol);
  const Matrix I = mode_identity(family.mode, w);
  const bool left = variant == ContinuousVariant::Left;
  const std::string prefix = std::string(family.mode == Mode::Homogeneous ? "continuous_" : "inhomogeneous_continuous_") +
                             to_string(variant);
  CrfResult out;
  out.report.name = prefix;
  out.report.add_exact(prefix + "_split_identity", "T_N + R_N = I", split.identity_violation, options.identity_tol);

  DualFamily dual;
  dual.variant = prefix;
  dual.certificate = inv.certificate;
  dual.kernels.resize(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    dual.kernels[k] = left ? compose(inv.inverse, split.window[k], w) : compose(split.window[k], inv.inverse, w);
  });
  // Synthesis: sum_k Q~_k Q_k f (left) or sum_k Q_k Q-_k f (right).
  Matrix synthesis = Matrix::Zero(I.rows(), I.cols());
  for (std::size_t k = 0; k < family.size(); ++k) {
    synthesis += left ? compose(dual.kernels[k], family.q[k], w) : compose(family.q[k], dual.kernels[k], w);
  }
  const auto probes = probe_census(system, family.mode, options.probes);
  const double tnorm = operator_norm_l2(w, split.T).value;
  dual.reconstruction = measure_reconstruction(
      w, probes,
      [&](const Vector& f) {
        Vector acc = Vector::Zero(f.size());
        for (std::size_t k = 0; k < family.size(); ++k) {
          acc += left ? apply(dual.kernels[k], apply(family.q[k], f, w), w)
                      : apply(family.q[k], apply(dual.kernels[k], f, w), w);
        }
        return acc;
      },
      inv.certificate.tail_bound, tnorm);
  detail::add_reconstruction_conditions(out.report, prefix, dual, options);
  out.report.add_exact(prefix + "_dual_integrals",
                       family.mode == Mode::Homogeneous ? "dual cancellation" : "dual normalization",
                       detail::integral_violation(dual.kernels, w, family.mode, options.N), options.identity_tol);
  // Left and right duals assemble the same corrected identity.
  {
    Matrix other = Matrix::Zero(I.rows(), I.cols());
    for (std::size_t k = 0; k < family.size(); ++k) {
      other += left ? compose(family.q[k], compose(split.window[k], inv.inverse, w), w)
                    : compose(compose(inv.inverse, split.window[k], w), family.q[k], w);
    }
    out.report.add_exact(prefix + "_dual_consistency", "left/right consistency",
                         max_abs(synthesis - other) * w.minCoeff(), 1e-8);
  }
  if (!left) {
    // Adjoint form: Q-_k(x, y) = (T*)^{-1}(Q_k^N(x, .))(y).
    double v = 0.0;
    const Matrix inv_adj = adjoint(inv.inverse);
    for (std::size_t k = 0; k < family.size(); ++k) {
      Matrix alt(I.rows(), I.cols());
      for (Eigen::Index x = 0; x < alt.rows(); ++x) {
        const Vector row = split.window[k].row(x).transpose();
        alt.row(x) = apply(inv_adj, row, w).transpose();
      }
      v = std::max(v, max_abs(alt - dual.kernels[k]) * w.minCoeff());
    }
    out.report.add_exact(prefix + "_dual_kernel_identity", "adjoint dual identity", v, 1e-10);
  }
  fit_duals(out.report, prefix + "_dual", dual.kernels, family, system.space(), options.fit_gamma, options.fit_beta,
            !left);
  out.report.census = probes.size();
  out.duals.push_back(std::move(dual));
  return out;
}

CrfResult homogeneous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                          ContinuousVariant variant) {
  if (family.mode != Mode::Homogeneous) throw std::invalid_argument("homogeneous_crf needs a homogeneous family");
  return continuous_crf(family, system, options, variant);
}

}  // namespace calderon
