#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "calderon/kernel.hpp"
#include "calderon/report.hpp"
#include "calderon/space.hpp"

namespace calderon {

struct TestSpaceParams {
  std::size_t x1 = 0;
  double r = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  bool cancellation_required = false;
};

struct TestNorm {
  double norm = 0.0;
  double size_ratio = 0.0;
  double regularity_ratio = 0.0;
  /// |sum f w|; only meaningful when cancellation is required.
  double cancellation_residual = 0.0;
};

/// Smallest C for the size and regularity bounds of G(x1, r, beta, gamma);
/// on a finite space the infimum is the larger of the two exhaustive maxima.
TestNorm test_norm(const FinitePointSpace& space, const Vector& f, const TestSpaceParams& params);

struct HolderNorm {
  double sup = 0.0;
  double seminorm = 0.0;
};
HolderNorm holder_norm(const FinitePointSpace& space, const Vector& f, double s);

/// Tent profile: 1 on B(x, r), 0 off B(x, 2 A0 r), Lipschitz in between.
Vector make_bump(const FinitePointSpace& space, std::size_t x, double r);

struct CZKernelParams {
  double s = 1.0;
  std::optional<double> r0;
  std::optional<double> sigma;
  bool second_difference = true;
};

/// Fitted Calderon-Zygmund constants of an n x n kernel. The combined
/// constant is reported as condition "C_T".
EstimateReport verify_cz_kernel(const FinitePointSpace& space, const Matrix& K,
                                const CZKernelParams& params = {});

struct OperatorRatio {
  double ratio = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  std::size_t worst_probe = 0;
};

/// Lower bound for the norm of T on G(x1, r, beta, gamma) from a probe census:
/// bumps around x1, seeded random functions and any caller-supplied probes
/// (made mean-zero when cancellation is required).
OperatorRatio operator_test_space_ratio(const FinitePointSpace& space, const Matrix& T,
                                        const TestSpaceParams& params, std::uint64_t probe_seed,
                                        std::size_t probe_count,
                                        const std::vector<Vector>& extra_probes = {});

}  // namespace calderon
