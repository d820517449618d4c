#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

namespace calderon {

enum class ConditionKind { Exact, Fitted };

/// One audited condition. Exact conditions gate on a tolerance; fitted ones
/// carry diagnostic constants only.
struct Condition {
  std::string name;
  std::string anchor;
  ConditionKind kind = ConditionKind::Fitted;
  // exact
  double tolerance = 0.0;
  double max_violation = 0.0;
  bool pass = true;
  // fitted
  double C_fit = 0.0;
  double nu_fit = std::numeric_limits<double>::quiet_NaN();
  double a_used = std::numeric_limits<double>::quiet_NaN();
  double eta_fit = std::numeric_limits<double>::quiet_NaN();
  double residual = std::numeric_limits<double>::quiet_NaN();
  std::string witness;
  std::size_t samples = 0;
  std::vector<std::string> flags;
};

struct EstimateReport {
  std::string name;
  std::vector<Condition> conditions;
  std::uint64_t seed = 0;
  std::size_t census = 0;

  Condition& add_exact(std::string name, std::string anchor, double violation, double tolerance);
  Condition& add_fitted(std::string name, std::string anchor, double C_fit);
  const Condition& at(const std::string& name) const;
  bool has(const std::string& name) const;
  bool exact_pass() const;
  nlohmann::json to_json() const;
};

/// NaN and infinities become null / strings so the output stays valid JSON.
nlohmann::json number_json(double value);

}  // namespace calderon
