#pragma once

// Helpers shared by the continuous and discrete formulae.

#include <string>
#include <vector>

#include "calderon/engine.hpp"

namespace calderon::detail {

/// Max deviation of dual row / column integrals from 1 (inhomogeneous, k <= N) or 0.
double integral_violation(const std::vector<Matrix>& kernels, const Vector& w, Mode mode, int N);

void add_reconstruction_conditions(EstimateReport& report, const std::string& prefix, const DualFamily& dual,
                                   const CrfOptions& options);

}  // namespace calderon::detail
