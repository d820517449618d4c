#include <doctest.h>

#include <Eigen/SVD>

#include "calderon/engine.hpp"
#include "support.hpp"

using namespace calderon;

namespace {

struct Setup {
  FinitePointSpace space;
  DyadicSystem system;
  OperatorFamily family;
  Setup(std::size_t n, bool smoothed, Mode mode)
      : space(support::grid(n)),
        system(build_dyadic(space, build_nets(space, NetOptions{}))),
        family(smoothed ? build_smoothed_family(space, system, {}, mode) : build_haar_family(system, mode)) {}
  Setup(const Setup&) = delete;
};

double max_abs_of(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

double svd_norm(const Vector& w, const Matrix& K) {
  const Vector r = w.cwiseSqrt();
  const Matrix B = r.asDiagonal() * K * r.asDiagonal();
  return Eigen::JacobiSVD<Matrix>(B).singularValues()(0);
}

std::vector<Subcube> singleton_cubes(const FinitePointSpace& s) {
  std::vector<Subcube> out;
  for (std::size_t x = 0; x < s.size(); ++x) out.push_back({{x}, s.weight(x), x, x});
  return out;
}

}  // namespace

TEST_CASE("split_identity") {
  SUBCASE("Haar: R_N = 0 and T_0 = I_mode") {
    Setup st(16, false, Mode::Homogeneous);
    const Matrix I = mode_identity(Mode::Homogeneous, st.family.weights);
    for (int N = 0; N <= 4; ++N) {
      const auto sp = split_identity(st.family, N);
      CHECK(max_abs_of(sp.R) <= 1e-10);
      CHECK(max_abs_of(sp.T + sp.R - I) <= 1e-10);
    }
    CHECK(max_abs_of(split_identity(st.family, 0).T - I) <= 1e-10);
  }
  SUBCASE("smoothed: T + R = I_mode and ||R_3|| < ||R_1||") {
    for (Mode mode : {Mode::Homogeneous, Mode::Inhomogeneous}) {
      Setup st(32, true, mode);
      const auto s1 = split_identity(st.family, 1);
      const auto s3 = split_identity(st.family, 3);
      CHECK(s1.identity_violation <= 1e-10);
      CHECK(s3.identity_violation <= 1e-10);
      CHECK(s1.ledger_mismatch <= 1e-8);
      CHECK(operator_norm_l2(st.family.weights, s3.R).value < operator_norm_l2(st.family.weights, s1.R).value);
      // window sums of the inhomogeneous family are clipped at index 0
      const auto win = window_sums(st.family, 1);
      Matrix expect = st.family.q[0] + st.family.q[1];
      CHECK(max_abs_of(win[0] - expect) == 0.0);
    }
  }
}

TEST_CASE("operator_norm_l2") {
  const auto s = support::grid(16);
  CHECK(operator_norm_l2(s.weights(), identity_kernel(s.weights())).value == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(operator_norm_l2(s.weights(), Matrix::Zero(16, 16)).value == 0.0);
  // probability-normalized space: the global mean has unit norm
  CHECK(operator_norm_l2(s.weights(), mean_kernel(s.weights())).value == doctest::Approx(1.0).epsilon(1e-10));
  SUBCASE("SVD oracle on 20 seeded random kernels, n = 32") {
    for (unsigned seed = 0; seed < 20; ++seed) {
      const Vector w = support::random_vector(32, 1000 + seed).cwiseAbs().array() + 0.05;
      const Matrix K = support::random_matrix(32, 32, seed);
      const double est = operator_norm_l2(w, K).value;
      const double oracle = svd_norm(w, K);
      CHECK(std::abs(est - oracle) <= 1e-8 * oracle);
    }
  }
}

TEST_CASE("Neumann inversion") {
  CHECK(neumann_terms(0.5, 1e-6) == 20);
  CHECK(neumann_terms(0.0, 1e-6) == 0);
  const auto s = support::grid(8);
  const Vector& w = s.weights();
  SUBCASE("zero remainder") {
    const auto inv = neumann_invert(w, Mode::Homogeneous, Matrix::Zero(8, 8), 1e-10);
    CHECK(inv.certificate.j_star == 0);
    CHECK(max_abs_of(inv.inverse - mode_identity(Mode::Homogeneous, w)) <= 1e-12);
    CHECK(inv.certificate.sound());
  }
  SUBCASE("divergent series") {
    CHECK_THROWS_AS(neumann_invert(w, Mode::Inhomogeneous, identity_kernel(w), 1e-10), NeumannError);
  }
  SUBCASE("contraction: certificate holds and matches the direct inverse") {
    const Matrix R = 0.3 * identity_kernel(w) + 0.05 * support::random_matrix(8, 8, 1);
    const auto inv = neumann_invert(w, Mode::Inhomogeneous, R, 1e-12);
    CHECK(inv.certificate.rho < 1.0);
    CHECK(inv.certificate.sound());
    // direct inverse of I - R in the weighted convention: (I - R W)^{-1} W^{-1}
    const Matrix Wd = w.asDiagonal();
    const Matrix direct = (Matrix::Identity(8, 8) - R * Wd).inverse() * Wd.inverse();
    CHECK(max_abs_of(inv.inverse - direct) <= 1e-9 * max_abs_of(direct));
  }
}

TEST_CASE("probe census") {
  Setup st(32, false, Mode::Homogeneous);
  const auto hom = probe_census(st.system, Mode::Homogeneous);
  CHECK(hom.size() >= 10);
  for (const auto& p : hom) CHECK(std::abs(mean(p.f, st.space.weights())) < 1e-14);
  const auto inh = probe_census(st.system, Mode::Inhomogeneous);
  bool constant = false;
  for (const auto& p : inh) constant = constant || p.name == "constant";
  CHECK(constant);
}

TEST_CASE("homogeneous continuous formulae") {
  SUBCASE("Haar: duals are the window sums, reconstruction exact") {
    Setup st(16, false, Mode::Homogeneous);
    CrfOptions o;
    o.N = 1;
    const auto win = window_sums(st.family, 1);
    for (auto v : {ContinuousVariant::Left, ContinuousVariant::Right}) {
      const auto res = homogeneous_crf(st.family, st.system, o, v);
      REQUIRE(res.duals.size() == 1);
      const auto& d = res.duals[0];
      for (std::size_t k = 0; k < win.size(); ++k) CHECK(max_abs_of(d.kernels[k] - win[k]) <= 1e-12 * max_abs_of(win[k]));
      CHECK(d.reconstruction.l2 <= 1e-12);
      CHECK(res.report.exact_pass());
    }
  }
  SUBCASE("smoothed 32-grid, N = 3: relative L2 error <= 1e-8, constants annihilated") {
    Setup st(32, true, Mode::Homogeneous);
    CrfOptions o;
    o.N = 3;
    for (auto v : {ContinuousVariant::Left, ContinuousVariant::Right}) {
      const auto res = homogeneous_crf(st.family, st.system, o, v);
      const auto& d = res.duals[0];
      CHECK(d.reconstruction.l2 <= 1e-8);
      CHECK(d.certificate.sound());
      CHECK(res.report.exact_pass());
      Vector acc = Vector::Zero(32);
      const Vector one = Vector::Ones(32);
      const Vector& w = st.family.weights;
      for (std::size_t k = 0; k < st.family.size(); ++k) {
        acc += v == ContinuousVariant::Left ? apply(d.kernels[k], apply(st.family.q[k], one, w), w)
                                            : apply(st.family.q[k], apply(d.kernels[k], one, w), w);
      }
      CHECK(acc.cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
  SUBCASE("inhomogeneous family is rejected") {
    Setup st(8, false, Mode::Inhomogeneous);
    CHECK_THROWS(homogeneous_crf(st.family, st.system, {}, ContinuousVariant::Left));
  }
}

TEST_CASE("sampling primitives") {
  const auto s = support::grid(8);
  const Vector& w = s.weights();
  const Matrix A = support::random_matrix(8, 8, 7), B = support::random_matrix(8, 8, 8);
  NetOptions no;
  const auto sys = build_dyadic(s, build_nets(s, no));
  const SubcubeRefinement ref(sys, 1, Sampler::Random, 5);
  const Matrix full = compose(A, B, w);
  for (int k = 0; k <= 2; ++k) {
    for (Sampling sm : {Sampling::Integral, Sampling::Point, Sampling::Mass, Sampling::Average}) {
      const auto& cubes = ref.subcubes(k);
      const Matrix sampled = sampled_kernel(A, B, cubes, sm, w);
      const Matrix rem = sampling_remainder(A, B, cubes, sm, w);
      CHECK(max_abs_of(sampled + rem - full) <= 1e-10 * max_abs_of(full));
      const Vector f = support::random_vector(8, 12);
      const Vector via_apply = sampled_apply(A, apply(B, f, w), cubes, sm, w);
      CHECK((via_apply - apply(sampled, f, w)).cwiseAbs().maxCoeff() <= 1e-10 * apply(sampled, f, w).cwiseAbs().maxCoeff() + 1e-12);
    }
  }
  // atoms: mass sampling equals the integral
  const auto atoms = singleton_cubes(s);
  CHECK(max_abs_of(sampled_kernel(A, B, atoms, Sampling::Mass, w) - sampled_kernel(A, B, atoms, Sampling::Integral, w)) <=
        1e-12 * max_abs_of(full));
  CHECK(max_abs_of(sampled_kernel(A, B, atoms, Sampling::Integral, w) - full) <= 1e-12 * max_abs_of(full));
}

TEST_CASE("discrete split and formulae") {
  SUBCASE("Haar: G_N = 0 for j0 >= 1, every sampler, and exact reconstruction") {
    Setup st(16, false, Mode::Homogeneous);
    for (Sampler sm : {Sampler::Center, Sampler::Random, Sampler::WorstCase}) {
      for (int j0 = 1; j0 <= 3; ++j0) {
        const SubcubeRefinement ref(st.system, j0, sm, 9);
        const auto sp = split_identity(st.family, 0);
        for (int v = 0; v < 3; ++v)
          for (bool dual : {false, true}) {
            const auto ds = discrete_split(st.family, ref, sp, v, dual);
            CHECK(max_abs_of(ds.G) <= 1e-10);
            CHECK(ds.identity_violation <= 1e-10);
          }
      }
      const SubcubeRefinement ref(st.system, 1, sm, 9);
      CrfOptions o;
      o.N = 0;
      for (int v = 0; v < 3; ++v)
        for (bool dual : {false, true}) {
          const auto res = discrete_crf(st.family, ref, o, v, dual);
          CHECK(res.duals[0].reconstruction.l2 <= 1e-12);
          CHECK(res.report.exact_pass());
        }
    }
  }
  SUBCASE("smoothed: ||G_N|| decreases in j0 and N = 3, j0 = 2 reconstructs to 1e-6") {
    Setup st(32, true, Mode::Homogeneous);
    const auto sp = split_identity(st.family, 3);
    double prev = 1e300;
    for (int j0 = 1; j0 <= 3; ++j0) {
      const SubcubeRefinement ref(st.system, j0, Sampler::Center, 3);
      const double g = operator_norm_l2(st.family.weights, discrete_split(st.family, ref, sp).G).value;
      CHECK(g < prev);
      prev = g;
    }
    const SubcubeRefinement ref(st.system, 2, Sampler::Center, 3);
    CrfOptions o;
    o.N = 3;
    for (int v = 0; v < 3; ++v) {
      const auto res = discrete_crf(st.family, ref, o, v, false);
      CHECK(res.duals[0].reconstruction.l2 <= 1e-6);
      CHECK(res.duals[0].certificate.sound());
    }
  }
}

TEST_CASE("inhomogeneous formulae") {
  SUBCASE("Haar: T_N = I and exact reconstruction including constants") {
    Setup st(16, false, Mode::Inhomogeneous);
    const auto sp = split_identity(st.family, 1);
    CHECK(max_abs_of(sp.T - identity_kernel(st.family.weights)) <= 1e-10);
    const SubcubeRefinement ref(st.system, 1, Sampler::Center, 0);
    CrfOptions o;
    o.N = 1;
    const auto res = inhomogeneous_crf(st.family, st.system, o, &ref);
    for (const auto& d : res.duals) CHECK(d.reconstruction.l2 <= 1e-12);
    CHECK(res.report.exact_pass());
  }
  SUBCASE("smoothed 32-grid, N = 3") {
    Setup st(32, true, Mode::Inhomogeneous);
    CrfOptions o;
    o.N = 3;
    const auto left = continuous_crf(st.family, st.system, o, ContinuousVariant::Left);
    CHECK(left.duals[0].reconstruction.l2 <= 1e-6);
    const Vector rows = row_integrals(left.duals[0].kernels[0], st.family.weights);
    CHECK((rows.array() - 1.0).abs().maxCoeff() <= 1e-10);
    const SubcubeRefinement ref(st.system, 2, Sampler::Center, 0);
    const auto ds = inhomogeneous_discrete_split(st.family, ref, split_identity(st.family, 3));
    CHECK(max_abs_of(ds.S + ds.R + ds.R1 + ds.R2 - identity_kernel(st.family.weights)) <= 1e-10);
    const auto res = inhomogeneous_crf(st.family, st.system, o, &ref);
    for (const auto& d : res.duals) CHECK(d.reconstruction.l2 <= 1e-6);
  }
}

TEST_CASE("parameter choice and decay studies") {
  SUBCASE("Haar 8-grid: N = 0, j0 = 1; decay tables degenerate") {
    Setup st(8, false, Mode::Homogeneous);
    const auto ch = choose_parameters(st.family, st.system, Sampler::Center, 3);
    CHECK(ch.N == 0);
    CHECK(ch.j0 == 1);
    const auto t = decay_study(st.family, st.system, DecayQuantity::RN_l2, {0, 1, 2, 3, 4});
    CHECK(t.degenerate);
    CHECK(std::isnan(t.ratio));
    CHECK_FALSE(t.flags.empty());
  }
  SUBCASE("smoothed: fitted ratios in (0, 1)") {
    Setup st(32, true, Mode::Homogeneous);
    const auto rn = decay_study(st.family, st.system, DecayQuantity::RN_l2, {0, 1, 2, 3});
    CHECK(rn.monotone);
    CHECK(rn.ratio > 0.0);
    CHECK(rn.ratio < 1.0);
    DecayOptions o;
    o.N = 1;
    const auto gn = decay_study(st.family, st.system, DecayQuantity::GN_l2, {0, 1, 2, 3}, o);
    CHECK(gn.monotone);
    CHECK(gn.ratio > 0.0);
    CHECK(gn.ratio < 1.0);
  }
  SUBCASE("fit_geometric recovers an exact geometric sequence") {
    DecayTable t;
    t.sweep = {0, 1, 2, 3};
    t.values = {2.0, 0.6, 0.18, 0.054};
    fit_geometric(t);
    CHECK(t.ratio == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(t.monotone);
    CHECK(t.fitted(2) == doctest::Approx(0.18).epsilon(1e-12));
  }
  CHECK(decay_quantity_from_string("GN_l2") == DecayQuantity::GN_l2);
  CHECK_THROWS(decay_quantity_from_string("bogus"));
}
