#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calderon/dyadic.hpp"
#include "calderon/family.hpp"
#include "calderon/kernel.hpp"
#include "calderon/report.hpp"
#include "calderon/testfn.hpp"

namespace calderon {

/// The remainder is too large for the Neumann series to converge.
class NeumannError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Continuous split  I_mode = T_N + R_N

/// Q_k^N = sum of Q_l over |l - k| <= N, clipped to the family's index range.
/// With the inhomogeneous family indexed from 0 this is the truncated window
/// sum_{l=0}^{k+N} for k <= N.
std::vector<Matrix> window_sums(const OperatorFamily& family, int N);

struct IdentitySplit {
  int N = 0;
  Mode mode = Mode::Homogeneous;
  std::vector<Matrix> window;  // Q_k^N per family index
  Matrix T;
  Matrix R;
  /// (k, l): the compositions Q_{k+l} Q_k (family indices) that entered R_N.
  std::vector<std::pair<int, int>> ledger;
  double ledger_mismatch = 0.0;
  double identity_violation = 0.0;
};

IdentitySplit split_identity(const OperatorFamily& family, int N);

struct NormEstimate {
  double value = 0.0;
  int iterations = 0;
  bool converged = true;
};

/// L^2(mu) operator norm of a kernel: spectral norm of W^1/2 K W^1/2 by power
/// iteration on its Gram matrix from a seeded start vector.
NormEstimate operator_norm_l2(const Vector& w, const Matrix& K, std::uint64_t seed = 0x5eedULL);
inline NormEstimate operator_norm_l2(const FinitePointSpace& space, const Matrix& K) {
  return operator_norm_l2(space.weights(), K);
}

struct Certificate {
  double rho = 0.0;
  int j_star = 0;
  double tail_bound = 0.0;
  double residual = 0.0;
  bool rho_converged = true;
  /// Roundoff allowance added to the residual check.
  static constexpr double kSlack = 1e-12;
  bool sound() const { return residual <= 2.0 * tail_bound + kSlack; }
  nlohmann::json to_json() const;
};

struct NeumannInverse {
  Matrix inverse;
  Certificate certificate;
};

/// Smallest j with rho^{j+1} / (1 - rho) <= tol.
int neumann_terms(double rho, double tol);

/// (I_mode - remainder)^{-1} as the partial sum of remainder^j, j <= j*.
NeumannInverse neumann_invert(const Vector& w, Mode mode, const Matrix& remainder, double tol);
inline NeumannInverse neumann_invert(const FinitePointSpace& space, const IdentitySplit& split, double tol) {
  return neumann_invert(space.weights(), split.mode, split.R, tol);
}

// ---------------------------------------------------------------------------
// Probes and reconstruction reports

struct Probe {
  std::string name;
  Vector f;
};

struct ProbeOptions {
  bool bumps = true;
  bool haar = true;
  std::size_t random = 8;
  std::uint64_t seed = 11;
};

/// Three bumps (coarse, mid, fine radius), every Haar kernel column at two
/// levels and seeded random functions; mean-zero in homogeneous mode, plus the
/// constant function in inhomogeneous mode.
std::vector<Probe> probe_census(const DyadicSystem& system, Mode mode, const ProbeOptions& options = {});

struct Reconstruction {
  double l2 = 0.0;    // max relative errors over the census
  double l15 = 0.0;
  double l4 = 0.0;
  std::string worst_probe;
  std::size_t probes = 0;
  /// max over probes of error / allowed (<= 1 means the certificate bound holds)
  double bound_ratio = 0.0;
  nlohmann::json to_json() const;
};

using Synthesis = std::function<Vector(const Vector&)>;

/// Relative L^p errors of f - synthesis(f) against the certified L^2 bound
/// tail * ||f|| * max(1, synthesis_norm).
Reconstruction measure_reconstruction(const Vector& w, const std::vector<Probe>& probes, const Synthesis& synth,
                                      double tail_bound, double synthesis_norm);

struct DualFamily {
  std::string variant;
  std::vector<Matrix> kernels;
  Certificate certificate;
  Reconstruction reconstruction;
};

struct CrfOptions {
  int N = 1;
  double tol = 1e-10;  // Neumann truncation
  double identity_tol = 1e-10;
  double reconstruction_l2 = 1e-6;
  double reconstruction_lp = 1e-5;
  ProbeOptions probes;
  /// gamma / beta of the fitted size and first-variable regularity of the duals.
  double fit_gamma = 1.0;
  double fit_beta = 1.0;
};

struct CrfResult {
  std::vector<DualFamily> duals;
  EstimateReport report;
};

enum class ContinuousVariant { Left, Right };
std::string to_string(ContinuousVariant v);

/// Continuous formula: left Q~_k = T_N^{-1} Q_k^N (f = sum Q~_k Q_k f) or
/// right Q-_k = Q_k^N T_N^{-1} (f = sum Q_k Q-_k f). Works in either mode.
CrfResult continuous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                         ContinuousVariant variant);
CrfResult homogeneous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                          ContinuousVariant variant);

// ---------------------------------------------------------------------------
// Discrete split  I_mode = S_N + G_N + R_N

/// 0: integral of the outer kernel over the subcube times the sampled inner kernel
/// 1: outer kernel sampled at y times the integral of the inner kernel
/// 2: mu(Q) times both kernels sampled at y
/// 3: integral of the outer kernel times the cube average of the inner kernel
enum class Sampling { Integral = 0, Point = 1, Mass = 2, Average = 3 };

/// sum over the subcubes of one level of the sampled product of outer and inner.
Matrix sampled_kernel(const Matrix& outer, const Matrix& inner, const std::vector<Subcube>& cubes, Sampling s,
                      const Vector& w);
/// The matching remainder (integral minus sampled sum), from its own formula.
Matrix sampling_remainder(const Matrix& outer, const Matrix& inner, const std::vector<Subcube>& cubes, Sampling s,
                          const Vector& w);
/// Action of the sampled sum with inner already applied: g = inner f.
Vector sampled_apply(const Matrix& outer, const Vector& g, const std::vector<Subcube>& cubes, Sampling s,
                     const Vector& w);

struct DiscreteSplit {
  int N = 0;
  int j0 = 0;
  Sampler sampler = Sampler::Center;
  int variant = 0;
  bool dual = false;
  Matrix S;
  Matrix G;
  Matrix R;
  std::vector<double> level_norms;  // ||G_{k,N}||_2 per family index
  double identity_violation = 0.0;
};

DiscreteSplit discrete_split(const OperatorFamily& family, const SubcubeRefinement& refinement,
                             const IdentitySplit& split, int variant = 0, bool dual = false,
                             bool level_norms = false);

CrfResult discrete_crf(const OperatorFamily& family, const SubcubeRefinement& refinement, const CrfOptions& options,
                       int variant, bool dual);

/// Inhomogeneous discrete split: script S_N + R_N + R^1_N + R^2_N = I.
struct InhomogeneousDiscreteSplit {
  Matrix S;
  Matrix R;
  Matrix R1;
  Matrix R2;
  double identity_violation = 0.0;
};

InhomogeneousDiscreteSplit inhomogeneous_discrete_split(const OperatorFamily& family,
                                                        const SubcubeRefinement& refinement,
                                                        const IdentitySplit& split);

/// Continuous left and right formulae, plus the discrete first display when a
/// refinement is supplied.
CrfResult inhomogeneous_crf(const OperatorFamily& family, const DyadicSystem& system, const CrfOptions& options,
                            const SubcubeRefinement* refinement = nullptr);

// ---------------------------------------------------------------------------
// Parameter choice and decay studies

struct AutoChoice {
  int N = 0;
  int j0 = 0;
  double rho_continuous = 0.0;
  double rho_discrete = 0.0;
  std::vector<std::string> log;
};

/// Smallest N with ||R_N|| <= target, then the smallest j0 for which every
/// discrete remainder is <= target; N grows when no j0 up to j0_max works.
AutoChoice choose_parameters(const OperatorFamily& family, const DyadicSystem& system, Sampler sampler,
                             std::uint64_t sampler_seed, double target = 0.5, int j0_max = 6);

enum class DecayQuantity { RN_l2, RN_testspace_ratio, GN_l2, CZ_CT_of_RN };
std::string to_string(DecayQuantity q);
DecayQuantity decay_quantity_from_string(const std::string& text);

struct DecayOptions {
  int N = 1;  // fixed N for GN_l2
  Sampler sampler = Sampler::Center;
  std::uint64_t sampler_seed = 3;
  std::uint64_t probe_seed = 11;
  std::size_t probe_count = 8;
  double beta = 0.4;
  double gamma = 0.4;
  double cz_s = 0.5;
};

struct DecayTable {
  DecayQuantity quantity = DecayQuantity::RN_l2;
  std::string parameter;
  std::vector<int> sweep;
  std::vector<double> values;
  double ratio = 0.0;  // e^slope of log(value) against the parameter; NaN when skipped
  double intercept = 0.0;
  double residual = 0.0;
  bool monotone = false;  // strictly decreasing
  bool degenerate = false;
  std::vector<std::string> flags;
  double fitted(std::size_t i) const;
  nlohmann::json to_json() const;
};

DecayTable decay_study(const OperatorFamily& family, const DyadicSystem& system, DecayQuantity quantity,
                       const std::vector<int>& sweep, const DecayOptions& options = {});

/// Geometric fit of a table in place (used by decay_study).
void fit_geometric(DecayTable& table);

}  // namespace calderon
