#include "calderon/report.hpp"

#include <cmath>
#include <stdexcept>

namespace calderon {

nlohmann::json number_json(double value) {
  if (std::isnan(value)) return nullptr;
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return value;
}

Condition& EstimateReport::add_exact(std::string cname, std::string anchor, double violation, double tolerance) {
  Condition c;
  c.name = std::move(cname);
  c.anchor = std::move(anchor);
  c.kind = ConditionKind::Exact;
  c.tolerance = tolerance;
  c.max_violation = violation;
  c.pass = violation <= tolerance;
  conditions.push_back(std::move(c));
  return conditions.back();
}

Condition& EstimateReport::add_fitted(std::string cname, std::string anchor, double C_fit) {
  Condition c;
  c.name = std::move(cname);
  c.anchor = std::move(anchor);
  c.kind = ConditionKind::Fitted;
  c.C_fit = C_fit;
  conditions.push_back(std::move(c));
  return conditions.back();
}

const Condition& EstimateReport::at(const std::string& cname) const {
  for (const auto& c : conditions) {
    if (c.name == cname) return c;
  }
  throw std::out_of_range("report " + name + " has no condition '" + cname + "'");
}

bool EstimateReport::has(const std::string& cname) const {
  for (const auto& c : conditions) {
    if (c.name == cname) return true;
  }
  return false;
}

bool EstimateReport::exact_pass() const {
  for (const auto& c : conditions) {
    if (c.kind == ConditionKind::Exact && !c.pass) return false;
  }
  return true;
}

nlohmann::json EstimateReport::to_json() const {
  nlohmann::json out;
  out["name"] = name;
  out["census"] = {{"samples", census}, {"seed", seed}};
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : conditions) {
    nlohmann::json j;
    j["name"] = c.name;
    j["anchor"] = c.anchor;
    if (c.kind == ConditionKind::Exact) {
      j["kind"] = "exact";
      j["tolerance"] = number_json(c.tolerance);
      j["max_violation"] = number_json(c.max_violation);
      j["pass"] = c.pass;
    } else {
      j["kind"] = "fitted";
      j["C_fit"] = number_json(c.C_fit);
      j["nu_fit"] = number_json(c.nu_fit);
      j["a_used"] = number_json(c.a_used);
      j["eta_fit"] = number_json(c.eta_fit);
      j["residual"] = number_json(c.residual);
    }
    if (!c.witness.empty()) j["witness"] = c.witness;
    if (c.samples) j["samples"] = c.samples;
    if (!c.flags.empty()) j["flags"] = c.flags;
    list.push_back(std::move(j));
  }
  out["conditions"] = std::move(list);
  return out;
}

}  // namespace calderon
