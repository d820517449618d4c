// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <Eigen/SVD>

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "calderon/engine.hpp"
#include "calderon/harness.hpp"
#include "calderon/parallel.hpp"
#include "expsum_oracle.hpp"
#include "support.hpp"

using namespace calderon;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CALDERON_SOURCE_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

struct Built {
  FinitePointSpace space;
  DyadicSystem system;
  OperatorFamily family;
  Built(std::size_t n, bool smoothed, Mode mode)
      : space(support::grid(n)),
        system(build_dyadic(space, build_nets(space, NetOptions{}))),
        family(smoothed ? build_smoothed_family(space, system, {}, mode) : build_haar_family(system, mode)) {}
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// 1. Exact identities for both constructors and modes.
void exact_identities(Outcome& o) {
  constexpr double tol = 1e-10;
  double worst = 0.0, slowest = 0.0;
  for (bool smoothed : {false, true})
    for (Mode mode : {Mode::Homogeneous, Mode::Inhomogeneous}) {
      const auto t0 = std::chrono::steady_clock::now();
      const Built b(32, smoothed, mode);
      const Vector& w = b.family.weights;
      const std::string tag = std::string(smoothed ? "smoothed" : "haar") + "/" + to_string(mode);
      const double sum = max_abs(b.family.sum() - mode_identity(mode, w));
      worst = std::max(worst, sum);
      o.require(sum <= tol, tag + " sum Q_k");
      for (std::size_t k = 0; k < b.family.size(); ++k) {
        const double target = b.family.integral_target(k);
        const double rows = (row_integrals(b.family.q[k], w).array() - target).abs().maxCoeff();
        const double cols = (column_integrals(b.family.q[k], w).array() - target).abs().maxCoeff();
        worst = std::max({worst, rows, cols});
        o.require(rows <= tol && cols <= tol, tag + " integrals of Q_" + std::to_string(k));
      }
      for (int N = 0; N <= 4; ++N) {
        const auto sp = split_identity(b.family, N);
        worst = std::max(worst, sp.identity_violation);
        o.require(sp.identity_violation <= tol, tag + " T + R, N=" + std::to_string(N));
      }
      const auto sp = split_identity(b.family, 1);
      for (int j0 = 1; j0 <= 2; ++j0) {
        const SubcubeRefinement ref(b.system, j0, Sampler::Center, 3);
        if (mode == Mode::Homogeneous) {
          for (int v = 0; v < 3; ++v)
            for (bool dual : {false, true}) {
              const auto ds = discrete_split(b.family, ref, sp, v, dual);
              worst = std::max(worst, ds.identity_violation);
              o.require(ds.identity_violation <= tol, tag + " S + G + R");
            }
        } else {
          const auto ds = inhomogeneous_discrete_split(b.family, ref, sp);
          worst = std::max(worst, ds.identity_violation);
          o.require(ds.identity_violation <= tol, tag + " four-part split");
        }
      }
      const double t = seconds_since(t0);
      slowest = std::max(slowest, t);
      o.require(t < 1.0, tag + " took " + fmt(t) + " s");
    }
  o.detail << "max violation " << fmt(worst) << ", slowest family " << fmt(slowest) << " s";
}

// 2. Haar oracle suite on the 8-point grid.
void haar_oracle(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_rec = 0.0, worst_zero = 0.0;
  std::size_t formulas = 0;
  for (Mode mode : {Mode::Homogeneous, Mode::Inhomogeneous}) {
    const Built b(8, false, mode);
    const Vector& w = b.family.weights;
    const std::size_t m = b.family.size();
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) {
        const Matrix c = compose(b.family.q[j], b.family.q[k], w);
        const double v = j == k ? max_abs(c - b.family.q[k]) : max_abs(c);
        worst_zero = std::max(worst_zero, v);
        o.require(v <= 1e-10, "Q_j Q_k product rule");
      }
    for (int N = 0; N <= 4; ++N) {
      const double r = max_abs(split_identity(b.family, N).R);
      worst_zero = std::max(worst_zero, r);
      o.require(r <= 1e-10, "R_N = 0");
    }
    CrfOptions opt;
    opt.N = 0;
    opt.reconstruction_l2 = opt.reconstruction_lp = 1e-12;
    auto record = [&](const CrfResult& res, const std::string& what) {
      for (const auto& d : res.duals) {
        worst_rec = std::max(worst_rec, d.reconstruction.l2);
        o.require(d.reconstruction.l2 <= 1e-12, what + " reconstruction");
        ++formulas;
      }
    };
    if (mode == Mode::Homogeneous) {
      for (auto v : {ContinuousVariant::Left, ContinuousVariant::Right})
        record(continuous_crf(b.family, b.system, opt, v), "continuous " + to_string(v));
    }
    const auto sp0 = split_identity(b.family, 0);
    for (Sampler sm : {Sampler::Center, Sampler::Random, Sampler::WorstCase}) {
      for (int j0 = 1; j0 <= 3; ++j0) {
        const SubcubeRefinement ref(b.system, j0, sm, 3);
        if (mode == Mode::Homogeneous) {
          for (int v = 0; v < 3; ++v)
            for (bool dual : {false, true}) {
              const double g = max_abs(discrete_split(b.family, ref, sp0, v, dual).G);
              worst_zero = std::max(worst_zero, g);
              o.require(g <= 1e-10, "G_N = 0 at j0=" + std::to_string(j0));
            }
        }
      }
      const SubcubeRefinement ref(b.system, 1, sm, 3);
      if (mode == Mode::Homogeneous) {
        for (int v = 0; v < 3; ++v)
          for (bool dual : {false, true})
            record(discrete_crf(b.family, ref, opt, v, dual), "discrete " + to_string(sm));
      } else {
        record(inhomogeneous_crf(b.family, b.system, opt, &ref), "inhomogeneous " + to_string(sm));
      }
    }
  }
  const double t = seconds_since(t0);
  o.require(t < 5.0, "took " + fmt(t) + " s");
  o.detail << formulas << " dual families, max rel L2 " << fmt(worst_rec) << ", max |R|,|G|,product defect "
           << fmt(worst_zero) << ", " << fmt(t) << " s";
}

// 3. Decay shapes of the smoothed family on the 64-point grid.
void decay_shapes(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const Built b(64, true, Mode::Homogeneous);
  DecayOptions opt;
  opt.N = 1;
  struct Row {
    DecayQuantity q;
    std::vector<int> sweep;
    bool need_ratio;
  };
  const Row rows[] = {{DecayQuantity::RN_l2, {0, 1, 2, 3, 4}, true},
                      {DecayQuantity::GN_l2, {0, 1, 2, 3}, true},
                      {DecayQuantity::CZ_CT_of_RN, {1, 2, 3}, false},
                      {DecayQuantity::RN_testspace_ratio, {1, 2, 3}, false}};
  for (const auto& r : rows) {
    const DecayTable t = decay_study(b.family, b.system, r.q, r.sweep, opt);
    o.require(!t.degenerate && t.monotone, to_string(r.q) + " strictly decreasing");
    if (r.need_ratio) o.require(t.ratio < 1.0, to_string(r.q) + " ratio < 1");
    o.detail << to_string(r.q) << " ratio " << fmt(t.ratio) << (t.monotone ? " (decreasing); " : " (NOT decreasing); ");
  }
  const double t = seconds_since(t0);
  o.require(t < 60.0, "took " + fmt(t) + " s");
  o.detail << fmt(t) << " s";
}

// 4. End-to-end reconstruction with automatic N and j0.
void end_to_end(Outcome& o) {
  std::size_t runs = 0, certs = 0;
  double worst_l2 = 0.0, worst_lp = 0.0;
  auto record = [&](const CrfResult& res, const std::string& what) {
    for (const auto& d : res.duals) {
      ++runs;
      worst_l2 = std::max(worst_l2, d.reconstruction.l2);
      worst_lp = std::max({worst_lp, d.reconstruction.l15, d.reconstruction.l4});
      o.require(d.reconstruction.l2 <= 1e-6, what + " L2");
      o.require(d.reconstruction.l15 <= 1e-5 && d.reconstruction.l4 <= 1e-5, what + " Lp");
      o.require(d.certificate.sound(), what + " certificate");
      certs += d.certificate.sound();
    }
  };
  std::ostringstream params;
  for (Mode mode : {Mode::Homogeneous, Mode::Inhomogeneous}) {
    const Built b(32, true, mode);
    const AutoChoice ch = choose_parameters(b.family, b.system, Sampler::Center, 3);
    o.require(ch.rho_continuous <= 0.5 && ch.rho_discrete <= 0.5, "auto choice rho <= 1/2");
    params << to_string(mode) << " N=" << ch.N << " j0=" << ch.j0 << "; ";
    CrfOptions opt;
    opt.N = ch.N;
    const SubcubeRefinement ref(b.system, ch.j0, Sampler::Center, 3);
    if (mode == Mode::Homogeneous) {
      for (auto v : {ContinuousVariant::Left, ContinuousVariant::Right})
        record(continuous_crf(b.family, b.system, opt, v), "continuous");
      for (int v = 0; v < 3; ++v)
        for (bool dual : {false, true}) record(discrete_crf(b.family, ref, opt, v, dual), "discrete");
    } else {
      record(inhomogeneous_crf(b.family, b.system, opt, &ref), "inhomogeneous");
    }
  }
  o.detail << params.str() << runs << " dual families, " << certs << " sound certificates, max rel L2 "
           << fmt(worst_l2) << ", max rel L1.5/L4 " << fmt(worst_lp);
}

// 5. Geometry suite.
void geometry(Outcome& o) {
  auto invariants = [&](std::size_t n, double delta, bool strict) {
    const auto s = support::grid(n);
    NetOptions no;
    no.delta = delta;
    no.strict = strict;
    const auto sys = build_dyadic(s, build_nets(s, no));
    const auto& c = sys.checks();
    o.require(c.partition && c.nesting && c.sandwich, std::to_string(n) + "-grid dyadic invariants");
    o.detail << n << "-grid delta=" << fmt(delta) << (c.partition && c.nesting && c.sandwich ? " ok; " : " FAIL; ");
  };
  invariants(8, 0.5, false);
  invariants(64, 1.0 / 12.0, true);

  const auto s = support::grid(64);
  const auto sys = build_dyadic(s, build_nets(s, NetOptions{}));
  double worst = 0.0;
  for (double c : {0.5, 1.0, 2.0}) {
    const auto fit = verify_expsum(sys, 1.0, c, 1);
    const auto [C1, C2] = support::expsum_oracle(s, sys, 1.0, c);
    worst = std::max({worst, std::abs(fit.C1_fit - C1) / C1, std::abs(fit.C2_fit - C2) / C2});
  }
  o.require(worst <= 1e-12, "expsum oracle");
  const auto d = doubling_audit(s, 1, 4096);
  o.require(d.omega_fit >= 0.5 && d.omega_fit <= 1.5, "omega_fit in [0.5, 1.5]");
  o.detail << "expsum rel err " << fmt(worst) << ", omega_fit " << fmt(d.omega_fit);
}

// 6. Power iteration against a dense SVD.
void svd_oracle(Outcome& o) {
  double worst = 0.0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    const Vector w = support::random_vector(32, 500 + seed).cwiseAbs().array() + 0.05;
    const Matrix K = support::random_matrix(32, 32, seed);
    const Vector r = w.cwiseSqrt();
    const Matrix B = r.asDiagonal() * K * r.asDiagonal();
    const double oracle = Eigen::JacobiSVD<Matrix>(B).singularValues()(0);
    worst = std::max(worst, std::abs(operator_norm_l2(w, K).value - oracle) / oracle);
  }
  o.require(worst <= 1e-8, "SVD agreement");
  o.detail << "20 kernels, max rel diff " << fmt(worst);
}

// 7. Report hashes of the bundled configs at 1 and 2 threads.
void determinism(Outcome& o) {
  for (const char* name : {"haar-oracle", "smoothed-32", "smoothed-64-inhomogeneous"}) {
    const auto cfg = load_config(kSource / "configs" / (std::string(name) + ".json"));
    set_thread_count(1);
    const std::string h1 = run_experiment(cfg).hash();
    set_thread_count(2);
    const std::string h2 = run_experiment(cfg).hash();
    o.require(h1 == h2, std::string(name) + " hash differs");
    o.detail << name << ' ' << h1.substr(0, 12) << (h1 == h2 ? " = " : " != ") << h2.substr(0, 12) << "; ";
  }
  set_thread_count(1);
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
      {"exact identities", exact_identities}, {"Haar oracle suite", haar_oracle},
      {"decay shapes", decay_shapes},         {"end-to-end reconstruction", end_to_end},
      {"geometry suite", geometry},           {"SVD oracle", svd_oracle},
      {"determinism", determinism}};
  int failed = 0, index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    Outcome o;
    try {
      run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s  [%s]\n", index, name, o.pass ? "PASS" : "FAIL", o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
