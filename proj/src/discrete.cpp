#include <algorithm>
#include <cmath>
#include <optional>

#include "calderon/engine.hpp"
#include "calderon/parallel.hpp"
#include "engine_detail.hpp"

namespace calderon {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

// For every point, the sample point of the subcube containing it.
std::vector<std::size_t> sample_of(const std::vector<Subcube>& cubes, std::size_t n) {
  std::vector<std::size_t> s(n, n);
  for (const auto& q : cubes) {
    for (std::size_t p : q.members) s[p] = q.sample;
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (s[p] == n) throw std::invalid_argument("subcubes do not cover the space");
  }
  return s;
}

// Columns a_Q and rows b_Q of the sampled sum  sum_Q a_Q b_Q^T.
void sampled_factors(const Matrix& outer, const Matrix& inner, const std::vector<Subcube>& cubes, Sampling s,
                     const Vector& w, Matrix& a, Matrix& b) {
  const Eigen::Index n = outer.rows();
  const Eigen::Index m = static_cast<Eigen::Index>(cubes.size());
  a.setZero(n, m);
  b.setZero(m, n);
  for (Eigen::Index c = 0; c < m; ++c) {
    const Subcube& q = cubes[static_cast<std::size_t>(c)];
    const Eigen::Index y = ix(q.sample);
    if (s == Sampling::Integral || s == Sampling::Average) {
      for (std::size_t z : q.members) a.col(c) += outer.col(ix(z)) * w(ix(z));
    } else {
      a.col(c) = outer.col(y);
      if (s == Sampling::Mass) a.col(c) *= q.measure;
    }
    if (s == Sampling::Point || s == Sampling::Average) {
      for (std::size_t u : q.members) b.row(c) += inner.row(ix(u)) * w(ix(u));
      if (s == Sampling::Average) b.row(c) /= q.measure;
    } else {
      b.row(c) = inner.row(y);
    }
  }
}

}  // namespace

Matrix sampled_kernel(const Matrix& outer, const Matrix& inner, const std::vector<Subcube>& cubes, Sampling s,
                      const Vector& w) {
  Matrix a, b;
  sampled_factors(outer, inner, cubes, s, w, a, b);
  return a * b;
}

Matrix sampling_remainder(const Matrix& outer, const Matrix& inner, const std::vector<Subcube>& cubes, Sampling s,
                          const Vector& w) {
  const std::size_t n = static_cast<std::size_t>(outer.rows());
  const auto smp = sample_of(cubes, n);
  const Matrix aw = outer * w.asDiagonal();
  switch (s) {
    case Sampling::Integral: {
      // sum_Q sum_{z in Q} A(x, z) w_z [B(z, y) - B(y_Q, y)]
      Matrix d = inner;
      for (std::size_t z = 0; z < n; ++z) d.row(ix(z)) -= inner.row(ix(smp[z]));
      return aw * d;
    }
    case Sampling::Point: {
      // sum_Q sum_{u in Q} [A(x, u) - A(x, y_Q)] w_u B(u, y)
      Matrix d = outer;
      for (std::size_t u = 0; u < n; ++u) d.col(ix(u)) -= outer.col(ix(smp[u]));
      return d * w.asDiagonal() * inner;
    }
    case Sampling::Mass: {
      // sum_Q sum_{u in Q} w_u [A(x, u) B(u, y) - A(x, y_Q) B(y_Q, y)]
      Matrix as(outer.rows(), outer.cols()), bs(inner.rows(), inner.cols());
      for (std::size_t u = 0; u < n; ++u) {
        as.col(ix(u)) = outer.col(ix(smp[u]));
        bs.row(ix(u)) = inner.row(ix(smp[u]));
      }
      return aw * inner - as * w.asDiagonal() * bs;
    }
    case Sampling::Average: {
      // sum_Q mu(Q)^-1 sum_{y', u in Q} A(x, y') w_y' [B(y', y) - B(u, y)] w_u
      Matrix d = inner;
      for (const auto& q : cubes) {
        Eigen::RowVectorXd avg = Eigen::RowVectorXd::Zero(inner.cols());
        for (std::size_t u : q.members) avg += inner.row(ix(u)) * w(ix(u));
        avg /= q.measure;
        for (std::size_t y : q.members) d.row(ix(y)) = inner.row(ix(y)) - avg;
      }
      return aw * d;
    }
  }
  return Matrix();
}

Vector sampled_apply(const Matrix& outer, const Vector& g, const std::vector<Subcube>& cubes, Sampling s,
                     const Vector& w) {
  Vector out = Vector::Zero(outer.rows());
  for (const auto& q : cubes) {
    double c;
    if (s == Sampling::Integral) {
      c = g(ix(q.sample));
    } else if (s == Sampling::Mass) {
      c = q.measure * g(ix(q.sample));
    } else {
      c = 0.0;
      for (std::size_t u : q.members) c += g(ix(u)) * w(ix(u));
      if (s == Sampling::Average) c /= q.measure;
    }
    if (s == Sampling::Integral || s == Sampling::Average) {
      for (std::size_t z : q.members) out += (c * w(ix(z))) * outer.col(ix(z));
    } else {
      out += c * outer.col(ix(q.sample));
    }
  }
  return out;
}

DiscreteSplit discrete_split(const OperatorFamily& family, const SubcubeRefinement& refinement,
                             const IdentitySplit& split, int variant, bool dual, bool level_norms) {
  if (variant < 0 || variant > 2) throw std::invalid_argument("discrete_split: variant must be 0, 1 or 2");
  const auto& system = refinement.system();
  if (system.space().size() != family.n()) throw std::invalid_argument("refinement and family live on different spaces");
  const Vector& w = family.weights;
  const auto s = static_cast<Sampling>(variant);
  DiscreteSplit out;
  out.N = split.N;
  out.j0 = refinement.j0();
  out.sampler = refinement.sampler();
  out.variant = variant;
  out.dual = dual;
  std::vector<Matrix> sk(family.size()), gk(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    const int level = family.levels[k];
    if (level < system.k_min() || level > system.k_max()) {
      throw std::invalid_argument("family level " + std::to_string(level) + " outside the dyadic range");
    }
    const auto& cubes = refinement.subcubes(level);
    const Matrix& outer = dual ? family.q[k] : split.window[k];
    const Matrix& inner = dual ? split.window[k] : family.q[k];
    sk[k] = sampled_kernel(outer, inner, cubes, s, w);
    gk[k] = sampling_remainder(outer, inner, cubes, s, w);
  });
  out.S = Matrix::Zero(ix(family.n()), ix(family.n()));
  out.G = out.S;
  for (std::size_t k = 0; k < family.size(); ++k) {
    out.S += sk[k];
    out.G += gk[k];
    if (level_norms) out.level_norms.push_back(operator_norm_l2(w, gk[k]).value);
  }
  out.R = split.R;
  out.identity_violation = max_abs(out.S + out.G + out.R - mode_identity(family.mode, w));
  if (out.identity_violation > 1e-8) {
    throw std::runtime_error("discrete split identity violated by " + std::to_string(out.identity_violation));
  }
  return out;
}


CrfResult discrete_crf(const OperatorFamily& family, const SubcubeRefinement& refinement, const CrfOptions& options,
                       int variant, bool dual) {
  if (family.mode != Mode::Homogeneous) throw std::invalid_argument("discrete_crf needs a homogeneous family");
  const Vector& w = family.weights;
  const auto s = static_cast<Sampling>(variant);
  const IdentitySplit split = split_identity(family, options.N);
  const DiscreteSplit ds = discrete_split(family, refinement, split, variant, dual);
  const NeumannInverse inv = neumann_invert(w, family.mode, ds.G + ds.R, options.tol);
  const std::string prefix = std::string("discrete_") + (dual ? "dual_" : "primal_") + std::to_string(variant);
  CrfResult out;
  out.report.name = prefix;
  out.report.add_exact(prefix + "_split_identity", "S_N + G_N + R_N = I", ds.identity_violation,
                       options.identity_tol);
  out.report.add_fitted(prefix + "_G_norm", "sampling remainder", operator_norm_l2(w, ds.G).value);

  DualFamily d;
  d.variant = prefix;
  d.certificate = inv.certificate;
  d.kernels.resize(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    d.kernels[k] = dual ? compose(split.window[k], inv.inverse, w) : compose(inv.inverse, split.window[k], w);
  });
  const auto probes = probe_census(refinement.system(), family.mode, options.probes);
  const double snorm = operator_norm_l2(w, ds.S).value;
  d.reconstruction = measure_reconstruction(
      w, probes,
      [&](const Vector& f) {
        Vector acc = Vector::Zero(f.size());
        for (std::size_t k = 0; k < family.size(); ++k) {
          const auto& cubes = refinement.subcubes(family.levels[k]);
          acc += dual ? sampled_apply(family.q[k], apply(d.kernels[k], f, w), cubes, s, w)
                      : sampled_apply(d.kernels[k], apply(family.q[k], f, w), cubes, s, w);
        }
        return acc;
      },
      inv.certificate.tail_bound, snorm);
  detail::add_reconstruction_conditions(out.report, prefix, d, options);
  out.report.add_exact(prefix + "_dual_integrals", "dual cancellation",
                       detail::integral_violation(d.kernels, w, family.mode, options.N), options.identity_tol);
  out.report.census = probes.size();
  out.duals.push_back(std::move(d));
  return out;
}

InhomogeneousDiscreteSplit inhomogeneous_discrete_split(const OperatorFamily& family,
                                                        const SubcubeRefinement& refinement,
                                                        const IdentitySplit& split) {
  if (family.mode != Mode::Inhomogeneous) throw std::invalid_argument("inhomogeneous split needs an inhomogeneous family");
  const Vector& w = family.weights;
  const int N = split.N;
  std::vector<Matrix> sk(family.size()), rk(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) {
    const auto& cubes = refinement.subcubes(family.levels[k]);
    const auto s = static_cast<int>(k) <= N ? Sampling::Average : Sampling::Integral;
    sk[k] = sampled_kernel(split.window[k], family.q[k], cubes, s, w);
    rk[k] = sampling_remainder(split.window[k], family.q[k], cubes, s, w);
  });
  InhomogeneousDiscreteSplit out;
  out.S = Matrix::Zero(ix(family.n()), ix(family.n()));
  out.R1 = out.S;
  out.R2 = out.S;
  for (std::size_t k = 0; k < family.size(); ++k) {
    out.S += sk[k];
    (static_cast<int>(k) <= N ? out.R1 : out.R2) += rk[k];
  }
  out.R = split.R;
  out.identity_violation = max_abs(out.S + out.R + out.R1 + out.R2 - identity_kernel(w));
  if (out.identity_violation > 1e-8) {
    throw std::runtime_error("four-part split identity violated by " + std::to_string(out.identity_violation));
  }
  return out;
}

CrfResult inhomogeneous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                            const SubcubeRefinement* refinement) {
  if (family.mode != Mode::Inhomogeneous) throw std::invalid_argument("inhomogeneous_crf needs an inhomogeneous family");
  CrfResult out = continuous_crf(family, system, options, ContinuousVariant::Left);
  {
    CrfResult right = continuous_crf(family, system, options, ContinuousVariant::Right);
    for (auto& c : right.report.conditions) out.report.conditions.push_back(std::move(c));
    for (auto& d : right.duals) out.duals.push_back(std::move(d));
  }
  out.report.name = "inhomogeneous";
  if (!refinement) return out;

  const Vector& w = family.weights;
  const IdentitySplit split = split_identity(family, options.N);
  const auto ds = inhomogeneous_discrete_split(family, *refinement, split);
  const NeumannInverse inv = neumann_invert(w, Mode::Inhomogeneous, ds.R + ds.R1 + ds.R2, options.tol);
  const std::string prefix = "inhomogeneous_discrete";
  out.report.add_exact(prefix + "_split_identity", "four-part split = I", ds.identity_violation, options.identity_tol);
  out.report.add_fitted(prefix + "_R1_norm", "cube-average remainder", operator_norm_l2(w, ds.R1).value);
  out.report.add_fitted(prefix + "_R2_norm", "point-sample remainder", operator_norm_l2(w, ds.R2).value);
  DualFamily d;
  d.variant = prefix;
  d.certificate = inv.certificate;
  d.kernels.resize(family.size());
  parallel_for(0, family.size(), [&](std::size_t k) { d.kernels[k] = compose(inv.inverse, split.window[k], w); });
  const auto probes = probe_census(system, family.mode, options.probes);
  const double snorm = operator_norm_l2(w, ds.S).value;
  d.reconstruction = measure_reconstruction(
      w, probes,
      [&](const Vector& f) {
        Vector acc = Vector::Zero(f.size());
        for (std::size_t k = 0; k < family.size(); ++k) {
          const auto& cubes = refinement->subcubes(family.levels[k]);
          const auto s = static_cast<int>(k) <= options.N ? Sampling::Average : Sampling::Integral;
          acc += sampled_apply(d.kernels[k], apply(family.q[k], f, w), cubes, s, w);
        }
        return acc;
      },
      inv.certificate.tail_bound, snorm);
  detail::add_reconstruction_conditions(out.report, prefix, d, options);
  out.report.add_exact(prefix + "_dual_integrals", "dual normalization",
                       detail::integral_violation(d.kernels, w, family.mode, options.N), options.identity_tol);
  out.duals.push_back(std::move(d));
  return out;
}

// ---------------------------------------------------------------------------

AutoChoice choose_parameters(const OperatorFamily& family, const DyadicSystem& system, Sampler sampler,
                             std::uint64_t sampler_seed, double target, int j0_max) {
  const Vector& w = family.weights;
  if (j0_max < 0) j0_max = system.k_max() - system.k_min();
  AutoChoice out;
  const int K = static_cast<int>(family.size());
  for (int N = 0; N <= std::max(0, K - 1); ++N) {
    const IdentitySplit split = split_identity(family, N);
    const double rc = operator_norm_l2(w, split.R).value;
    out.log.push_back("N=" + std::to_string(N) + " rho=" + std::to_string(rc));
    if (rc > target) continue;
    for (int j0 = 0; j0 <= j0_max; ++j0) {
      std::optional<SubcubeRefinement> ref;
      try {
        ref.emplace(system, j0, sampler, sampler_seed);
      } catch (const GeometryError&) {
        break;
      }
      double rd = 0.0;
      if (family.mode == Mode::Homogeneous) {
        for (bool dual : {false, true}) {
          for (int v = 0; v <= 2; ++v) {
            const DiscreteSplit ds = discrete_split(family, *ref, split, v, dual);
            rd = std::max(rd, operator_norm_l2(w, ds.G + ds.R).value);
          }
        }
      } else {
        const auto ds = inhomogeneous_discrete_split(family, *ref, split);
        rd = operator_norm_l2(w, ds.R + ds.R1 + ds.R2).value;
      }
      out.log.push_back("N=" + std::to_string(N) + " j0=" + std::to_string(j0) + " rho=" + std::to_string(rd));
      if (rd <= target) {
        out.N = N;
        out.j0 = j0;
        out.rho_continuous = rc;
        out.rho_discrete = rd;
        return out;
      }
    }
  }
  throw NeumannError("no (N, j0) reaches remainder norm <= " + std::to_string(target));
}

}  // namespace calderon
