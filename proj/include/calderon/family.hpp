#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "calderon/dyadic.hpp"
#include "calderon/kernel.hpp"
#include "calderon/report.hpp"

namespace calderon {

enum class Provenance { Haar, Smoothed, Loaded };
std::string to_string(Provenance provenance);
Provenance provenance_from_string(const std::string& text);

struct SmoothingParams {
  double nu = 1.0;
  double a = 1.0;
  /// gamma used by the size/regularity audits of the averaging ladder.
  double gamma_norm = 1.0;
};

/// Level-indexed kernels Q_k. levels[i] is the dyadic level whose scale
/// delta^levels[i] and cubes belong to q[i]. For constructed families p holds
/// the averaging ladder P_{k_min}, ..., P_{k_max} the differences came from.
struct OperatorFamily {
  Mode mode = Mode::Homogeneous;
  Provenance provenance = Provenance::Haar;
  double delta = 0.5;
  Vector weights;
  std::vector<int> levels;
  std::vector<Matrix> q;
  int p_k_min = 0;
  std::vector<Matrix> p;
  SmoothingParams params;
  std::vector<std::string> warnings;

  std::size_t size() const { return q.size(); }
  std::size_t n() const { return static_cast<std::size_t>(weights.size()); }
  double scale(std::size_t i) const;
  Matrix sum() const;
  /// Target of the integral conditions: 1 for the inhomogeneous Q_0, else 0.
  double integral_target(std::size_t i) const;
};

/// Conditional-expectation ladder on the cube tree; Q_k are successive
/// differences, each an orthogonal projection in L^2(mu).
OperatorFamily build_haar_family(const DyadicSystem& system, Mode mode);

/// Exponential kernels exp(-nu [d/delta^k]^a), symmetrically rescaled to unit
/// weighted row and column sums, then differenced like the Haar ladder.
OperatorFamily build_smoothed_family(const FinitePointSpace& space, const DyadicSystem& system,
                                     SmoothingParams params, Mode mode);

/// Symmetric Sinkhorn scaling: P = diag(s) H diag(s) with P w = 1.
/// Returns false when the scaling fails to converge.
bool symmetric_normalize(const Matrix& h, const Vector& w, Matrix& out, double tol = 1e-13,
                         int max_iterations = 20000);

// ---------------------------------------------------------------------------
// Audits

struct AtiAuditOptions {
  double beta = 1.0;
  double gamma = 1.0;
  std::vector<double> size_gammas{0.5, 1.0, 2.0};
  double tolerance = 1e-10;
  std::uint64_t seed = 7;
  std::size_t random_probes = 4;
  /// (x, y) pairs per level above which the second-difference sweep is sampled.
  std::size_t pair_budget = 4096;
};

EstimateReport verify_ati(const OperatorFamily& family, const FinitePointSpace& space,
                          const AtiAuditOptions& options = {});

struct ExpAtiAuditOptions {
  /// nu and a of the exponential factors; nu <= 0 uses the family's parameter.
  double nu = 0.0;
  double a = 0.0;
  double eta = 0.5;
  double tolerance = 1e-10;
  std::size_t pair_budget = 4096;
  std::uint64_t seed = 7;
};

EstimateReport verify_exp_ati(const OperatorFamily& family, const DyadicSystem& system,
                              const ExpAtiAuditOptions& options = {});

struct CompositionOptions {
  double c = 0.5;
  double a = 1.0;
  double eta_prime = 0.25;
  double tolerance = 1e-10;
  int max_offset = 3;
};

struct Composition {
  Matrix kernel;
  EstimateReport report;
};

/// Kernel of A_j B_k with the size / regularity / cancellation audit of
/// compositions; the decay exponent is fitted over offsets 0..max_offset.
Composition compose_and_audit(const OperatorFamily& a, std::size_t j, const OperatorFamily& b,
                              std::size_t k, const DyadicSystem& system,
                              const CompositionOptions& options = {});

// ---------------------------------------------------------------------------
// Serialization: manifest.json plus q_<i>.f64 (and p_<j>.f64) row-major
// little-endian binary64.

inline constexpr int kFamilyFormatVersion = 1;

void save_family(const OperatorFamily& family, const std::filesystem::path& dir);
OperatorFamily load_family(const std::filesystem::path& dir, const Vector& weights);

}  // namespace calderon
