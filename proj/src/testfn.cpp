#include "calderon/testfn.hpp"

#include <algorithm>
#include <cmath>

#include "calderon/parallel.hpp"
#include "calderon/random.hpp"

namespace calderon {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

TestNorm test_norm(const FinitePointSpace& space, const Vector& f, const TestSpaceParams& params) {
  if (!(params.r > 0.0)) throw std::invalid_argument("test_norm: r must be positive");
  if (!(params.beta > 0.0 && params.beta <= 1.0)) throw std::invalid_argument("test_norm: beta must lie in (0, 1]");
  if (!(params.gamma > 0.0)) throw std::invalid_argument("test_norm: gamma must be positive");
  const std::size_t n = space.size();
  if (static_cast<std::size_t>(f.size()) != n) throw std::invalid_argument("test_norm: length mismatch");
  const double A0 = space.A0();
  const double vr = space.volume(params.x1, params.r);
  // Size envelope at x: 1/(V_r(x1) + V(x1, x)) * (r / (r + d(x1, x)))^gamma.
  std::vector<double> env(n), rel(n);
  for (std::size_t x = 0; x < n; ++x) {
    const double d = space.distance(params.x1, x);
    rel[x] = params.r + d;
    env[x] = std::pow(params.r / rel[x], params.gamma) / (vr + space.volume_between(params.x1, x));
  }
  TestNorm out;
  std::vector<double> reg(n, 0.0);
  parallel_for(0, n, [&](std::size_t x) {
    const double window = rel[x] / (2.0 * A0);
    for (std::size_t y = 0; y < n; ++y) {
      if (y == x) continue;
      const double d = space.distance(x, y);
      if (d > window) continue;
      const double diff = std::abs(f(ix(x)) - f(ix(y)));
      if (diff == 0.0) continue;
      reg[x] = std::max(reg[x], diff / (std::pow(d / rel[x], params.beta) * env[x]));
    }
  });
  for (std::size_t x = 0; x < n; ++x) {
    out.size_ratio = std::max(out.size_ratio, std::abs(f(ix(x))) / env[x]);
    out.regularity_ratio = std::max(out.regularity_ratio, reg[x]);
  }
  out.norm = std::max(out.size_ratio, out.regularity_ratio);
  if (params.cancellation_required) out.cancellation_residual = std::abs(f.dot(space.weights()));
  return out;
}

HolderNorm holder_norm(const FinitePointSpace& space, const Vector& f, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("holder_norm: s must be positive");
  HolderNorm out;
  const std::size_t n = space.size();
  for (std::size_t x = 0; x < n; ++x) {
    out.sup = std::max(out.sup, std::abs(f(ix(x))));
    for (std::size_t y = x + 1; y < n; ++y) {
      out.seminorm = std::max(out.seminorm, std::abs(f(ix(x)) - f(ix(y))) / std::pow(space.distance(x, y), s));
    }
  }
  return out;
}

Vector make_bump(const FinitePointSpace& space, std::size_t x, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("make_bump: r must be positive");
  const double A0 = space.A0();
  Vector f(ix(space.size()));
  for (std::size_t y = 0; y < space.size(); ++y) {
    const double d = space.distance(x, y);
    const double v = d < r ? 1.0 : std::clamp((2.0 * A0 * r - d) / ((2.0 * A0 - 1.0) * r), 0.0, 1.0);
    f(ix(y)) = v;
  }
  return f;
}

EstimateReport verify_cz_kernel(const FinitePointSpace& space, const Matrix& K, const CZKernelParams& params) {
  if (!(params.s > 0.0 && params.s <= 1.0)) throw std::invalid_argument("verify_cz_kernel: s must lie in (0, 1]");
  if (params.sigma && !(*params.sigma > 0.0)) throw std::invalid_argument("verify_cz_kernel: sigma must be positive");
  const std::size_t n = space.size();
  if (static_cast<std::size_t>(K.rows()) != n || static_cast<std::size_t>(K.cols()) != n) {
    throw std::invalid_argument("verify_cz_kernel: kernel size does not match the space");
  }
  const double A0 = space.A0();
  auto kv = [&](std::size_t x, std::size_t y) { return K(ix(x), ix(y)); };
  std::vector<double> size(n, 0.0), reg(n, 0.0), dreg(n, 0.0), tail(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  parallel_for(0, n, [&](std::size_t x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (y == x) continue;
      const double d = space.distance(x, y);
      const double V = space.volume_between(x, y);
      size[x] = std::max(size[x], std::abs(kv(x, y)) * V);
      if (params.r0 && d >= *params.r0) {
        const double sg = params.sigma.value_or(params.s);
        tail[x] = std::max(tail[x], std::abs(kv(x, y)) * V / std::pow(*params.r0 / d, sg));
      }
      const double w1 = d / (2.0 * A0);
      const double w2 = d / (4.0 * A0 * A0);
      for (std::size_t xp = 0; xp < n; ++xp) {
        if (xp == x) continue;
        const double dx = space.distance(x, xp);
        if (dx > w1) continue;
        const double lhs = std::abs(kv(x, y) - kv(xp, y)) + std::abs(kv(y, x) - kv(y, xp));
        reg[x] = std::max(reg[x], lhs * V / std::pow(dx / d, params.s));
        ++count[x];
        if (!params.second_difference || dx > w2) continue;
        const double fx = std::pow(dx / d, params.s);
        for (std::size_t yp = 0; yp < n; ++yp) {
          if (yp == y) continue;
          const double dy = space.distance(y, yp);
          if (dy > w2) continue;
          const double lhs2 = std::abs((kv(x, y) - kv(xp, y)) - (kv(x, yp) - kv(xp, yp)));
          dreg[x] = std::max(dreg[x], lhs2 * V / (fx * std::pow(dy / d, params.s)));
          ++count[x];
        }
      }
    }
  });
  auto mx = [](const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); };
  EstimateReport report;
  report.name = "cz_kernel";
  const double c_size = n ? mx(size) : 0.0;
  const double c_reg = n ? mx(reg) : 0.0;
  const double c_dreg = n ? mx(dreg) : 0.0;
  report.add_fitted("size", "CZ size", c_size);
  report.add_fitted("regularity", "CZ regularity", c_reg).eta_fit = params.s;
  if (params.second_difference) report.add_fitted("second_difference", "CZ second difference", c_dreg).eta_fit = params.s;
  double c_t = std::max({c_size, c_reg, params.second_difference ? c_dreg : 0.0});
  if (params.r0) {
    const double c_tail = n ? mx(tail) : 0.0;
    report.add_fitted("tail", "CZ inhomogeneous tail", c_tail);
    c_t = std::max(c_t, c_tail);
  }
  report.add_fitted("C_T", "CZ constant", c_t);
  // Kernel integral: mean row integral and its maximal deviation.
  const Vector rows = row_integrals(K, space.weights());
  const double mean_row = n ? rows.mean() : 0.0;
  auto& c0 = report.add_fitted("c0", "kernel integral", mean_row);
  c0.residual = n ? (rows.array() - mean_row).abs().maxCoeff() : 0.0;
  std::size_t total = 0;
  for (auto c : count) total += c;
  report.census = total;
  return report;
}

OperatorRatio operator_test_space_ratio(const FinitePointSpace& space, const Matrix& T, const TestSpaceParams& params,
                                        std::uint64_t probe_seed, std::size_t probe_count,
                                        const std::vector<Vector>& extra_probes) {
  const std::size_t n = space.size();
  const Vector& w = space.weights();
  std::vector<Vector> probes;
  for (double scale : {1.0, 0.5, 0.25}) probes.push_back(make_bump(space, params.x1, params.r * scale));
  Rng rng(probe_seed);
  for (std::size_t p = 0; p < probe_count; ++p) {
    Vector f(ix(n));
    for (std::size_t i = 0; i < n; ++i) f(ix(i)) = rng.normal();
    probes.push_back(f);
  }
  for (const auto& e : extra_probes) probes.push_back(e);
  if (params.cancellation_required) {
    const double mu = space.total_measure();
    for (auto& f : probes) f.array() -= f.dot(w) / mu;
  }
  std::vector<double> ratio(probes.size(), -1.0);
  parallel_for(0, probes.size(), [&](std::size_t i) {
    const double den = test_norm(space, probes[i], params).norm;
    if (!(den > 1e-300)) return;
    ratio[i] = test_norm(space, apply(T, probes[i], w), params).norm / den;
  });
  OperatorRatio out;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (ratio[i] < 0.0) {
      ++out.skipped;
      continue;
    }
    ++out.probes;
    if (ratio[i] > out.ratio) {
      out.ratio = ratio[i];
      out.worst_probe = i;
    }
  }
  return out;
}

}  // namespace calderon
