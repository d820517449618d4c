#include <doctest.h>

#include "calderon/engine.hpp"
#include "calderon/testfn.hpp"
#include "support.hpp"

using namespace calderon;

namespace {

// Independent double loop for the G(x1, r, beta, gamma) norm.
double oracle_test_norm(const FinitePointSpace& s, const Vector& f, const TestSpaceParams& p) {
  const std::size_t n = s.size();
  const double vr = support::brute_volume(s, p.x1, p.r);
  auto env = [&](std::size_t x) {
    const double d = s.distance(p.x1, x);
    return std::pow(p.r / (p.r + d), p.gamma) / (vr + support::brute_volume(s, p.x1, d));
  };
  double best = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    best = std::max(best, std::abs(f(Eigen::Index(x))) / env(x));
    const double rel = p.r + s.distance(p.x1, x);
    for (std::size_t y = 0; y < n; ++y) {
      const double d = s.distance(x, y);
      if (y == x || d > rel / (2 * s.A0())) continue;
      const double diff = std::abs(f(Eigen::Index(x)) - f(Eigen::Index(y)));
      best = std::max(best, diff / (std::pow(d / rel, p.beta) * env(x)));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("test_norm") {
  const auto s = support::grid(8);
  TestSpaceParams p;
  p.x1 = 3;
  p.r = 0.25;
  SUBCASE("zero function") {
    p.cancellation_required = true;
    const auto t = test_norm(s, Vector::Zero(8), p);
    CHECK(t.norm == 0.0);
    CHECK(t.cancellation_residual == 0.0);
  }
  SUBCASE("homogeneity") {
    const Vector f = support::random_vector(8, 4);
    CHECK(test_norm(s, 2.0 * f, p).norm == doctest::Approx(2.0 * test_norm(s, f, p).norm).epsilon(1e-14));
  }
  SUBCASE("Haar kernel columns against the double-loop oracle") {
    NetOptions o;
    const auto sys = build_dyadic(s, build_nets(s, o));
    const auto fam = build_haar_family(sys, Mode::Homogeneous);
    for (std::size_t i = 0; i < fam.size(); ++i) {
      for (std::size_t y : {0u, 5u}) {
        TestSpaceParams q;
        q.x1 = y;
        q.r = fam.scale(i);
        q.beta = 0.5;
        q.gamma = 0.5;
        const Vector f = fam.q[i].col(Eigen::Index(y));
        const double v = test_norm(s, f, q).norm;
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(oracle_test_norm(s, f, q)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("invalid parameters") {
    p.beta = 1.5;
    CHECK_THROWS(test_norm(s, Vector::Zero(8), p));
  }
}

TEST_CASE("holder_norm") {
  const auto s = support::grid(9);
  CHECK(holder_norm(s, Vector::Constant(9, 3.0), 1.0).seminorm == 0.0);
  Vector x(9);
  for (int i = 0; i < 9; ++i) x(i) = support::grid_point(std::size_t(i), 9);
  CHECK(holder_norm(s, x, 1.0).seminorm == doctest::Approx(1.0).epsilon(1e-12));
  const Vector f = support::random_vector(9, 5);
  CHECK(holder_norm(s, -3.0 * f, 0.5).seminorm == doctest::Approx(3.0 * holder_norm(s, f, 0.5).seminorm));
}

TEST_CASE("make_bump") {
  const auto s = support::grid(16);
  const std::size_t x = 7;
  const double r = 0.1;
  const Vector f = make_bump(s, x, r);
  for (std::size_t y = 0; y < 16; ++y) {
    if (s.distance(x, y) < r) CHECK(f(Eigen::Index(y)) == 1.0);
    if (s.distance(x, y) >= 2 * s.A0() * r) CHECK(f(Eigen::Index(y)) == 0.0);
  }
  // Lipschitz with constant 1 / ((2 A0 - 1) r)
  CHECK(holder_norm(s, f, 1.0).seminorm <= 1.0 / ((2 * s.A0() - 1) * r) + 1e-12);
  CHECK_THROWS(make_bump(s, x, 0.0));
}

TEST_CASE("verify_cz_kernel") {
  const auto s = support::grid(16);
  SUBCASE("zero kernel") {
    const auto r = verify_cz_kernel(s, Matrix::Zero(16, 16));
    CHECK(r.at("C_T").C_fit == 0.0);
    CHECK(r.at("c0").C_fit == 0.0);
  }
  SUBCASE("1 / V(x, y) off the diagonal has size constant exactly 1") {
    Matrix K = Matrix::Zero(16, 16);
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t y = 0; y < 16; ++y)
        if (x != y) K(Eigen::Index(x), Eigen::Index(y)) = 1.0 / support::brute_volume(s, x, s.distance(x, y));
    CHECK(verify_cz_kernel(s, K).at("size").C_fit == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("tail condition is reported with r0") {
    CZKernelParams p;
    p.r0 = 0.5;
    CHECK(verify_cz_kernel(s, Matrix::Ones(16, 16), p).has("tail"));
  }
}

TEST_CASE("remainder kernels: C_T and the test-space ratio decrease in N") {
  const auto s = support::grid(32);
  NetOptions o;
  const auto sys = build_dyadic(s, build_nets(s, o));
  const auto fam = build_smoothed_family(s, sys, {}, Mode::Homogeneous);
  CZKernelParams cz;
  cz.s = 0.5;
  TestSpaceParams tp;
  tp.x1 = sys.level(sys.k_min()).centers[0];
  tp.r = s.diameter() / 4;
  tp.beta = tp.gamma = 0.4;
  tp.cancellation_required = true;
  double prev_ct = 1e300, prev_ratio = 1e300;
  for (int N = 1; N <= 3; ++N) {
    const Matrix R = split_identity(fam, N).R;
    const double ct = verify_cz_kernel(s, R, cz).at("C_T").C_fit;
    const double ratio = operator_test_space_ratio(s, R, tp, 11, 8).ratio;
    CHECK(ct < prev_ct);
    CHECK(ratio < prev_ratio);
    prev_ct = ct;
    prev_ratio = ratio;
  }
}

TEST_CASE("operator_test_space_ratio: identity and zero") {
  const auto s = support::grid(16);
  TestSpaceParams tp;
  tp.x1 = 8;
  tp.r = 0.2;
  CHECK(operator_test_space_ratio(s, identity_kernel(s.weights()), tp, 1, 4).ratio == doctest::Approx(1.0));
  CHECK(operator_test_space_ratio(s, Matrix::Zero(16, 16), tp, 1, 4).ratio == 0.0);
}
