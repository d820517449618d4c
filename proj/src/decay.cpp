#include <cmath>
#include <limits>

#include "calderon/engine.hpp"
#include "calderon/parallel.hpp"

namespace calderon {

std::string to_string(DecayQuantity q) {
  switch (q) {
    case DecayQuantity::RN_l2: return "RN_l2";
    case DecayQuantity::RN_testspace_ratio: return "RN_testspace_ratio";
    case DecayQuantity::GN_l2: return "GN_l2";
    case DecayQuantity::CZ_CT_of_RN: return "CZ_CT_of_RN";
  }
  return "RN_l2";
}

DecayQuantity decay_quantity_from_string(const std::string& text) {
  for (auto q : {DecayQuantity::RN_l2, DecayQuantity::RN_testspace_ratio, DecayQuantity::GN_l2,
                 DecayQuantity::CZ_CT_of_RN}) {
    if (to_string(q) == text) return q;
  }
  throw std::invalid_argument("unknown decay quantity '" + text + "'");
}

double DecayTable::fitted(std::size_t i) const {
  if (!std::isfinite(ratio) || ratio <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::exp(intercept + std::log(ratio) * sweep.at(i));
}

nlohmann::json DecayTable::to_json() const {
  nlohmann::json values_json = nlohmann::json::array();
  for (double v : values) values_json.push_back(number_json(v));
  return {{"quantity", to_string(quantity)},
          {"parameter", parameter},
          {"sweep", sweep},
          {"values", values_json},
          {"ratio", number_json(ratio)},
          {"intercept", number_json(intercept)},
          {"residual", number_json(residual)},
          {"monotone", monotone},
          {"degenerate", degenerate},
          {"flags", flags}};
}

void fit_geometric(DecayTable& t) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  t.ratio = t.intercept = t.residual = nan;
  t.monotone = t.values.size() >= 2;
  for (std::size_t i = 1; i < t.values.size(); ++i) t.monotone = t.monotone && t.values[i] < t.values[i - 1];
  double vmax = 0.0;
  for (double v : t.values) vmax = std::max(vmax, std::abs(v));
  t.degenerate = vmax < 1e-12;
  if (t.degenerate) {
    t.monotone = false;
    t.flags.push_back("degenerate: every value is below 1e-12; rate fit skipped");
    return;
  }
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (t.values[i] > 0.0) {
      xs.push_back(t.sweep[i]);
      ys.push_back(std::log(t.values[i]));
    }
  }
  if (xs.size() < t.values.size()) t.flags.push_back("zero values excluded from the rate fit");
  if (xs.size() < 2) {
    t.flags.push_back("fewer than two positive values; rate fit skipped");
    return;
  }
  const double m = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  const double slope = sxy / sxx;
  t.intercept = my - slope * mx;
  t.ratio = std::exp(slope);
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (t.intercept + slope * xs[i]);
    sse += r * r;
  }
  t.residual = std::sqrt(sse / m);
}

DecayTable decay_study(const OperatorFamily& family, const DyadicSystem& system, DecayQuantity quantity,
                       const std::vector<int>& sweep, const DecayOptions& options) {
  const auto& space = system.space();
  const Vector& w = family.weights;
  DecayTable t;
  t.quantity = quantity;
  t.sweep = sweep;
  t.parameter = quantity == DecayQuantity::GN_l2 ? "j0" : "N";
  t.values.assign(sweep.size(), 0.0);
  for (int v : sweep) {
    if (v < 0) throw std::invalid_argument("decay_study: sweep values must be nonnegative");
  }
  if (quantity == DecayQuantity::GN_l2) {
    const IdentitySplit split = split_identity(family, options.N);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      const SubcubeRefinement ref(system, sweep[i], options.sampler, options.sampler_seed);
      t.values[i] = operator_norm_l2(w, discrete_split(family, ref, split).G).value;
    }
    t.flags.push_back("N = " + std::to_string(options.N));
  } else {
    TestSpaceParams tp;
    tp.x1 = system.level(system.k_min()).centers.front();
    tp.r = space.diameter() > 0.0 ? space.diameter() / 4.0 : 1.0;
    tp.beta = options.beta;
    tp.gamma = options.gamma;
    tp.cancellation_required = family.mode == Mode::Homogeneous;
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      const Matrix R = split_identity(family, sweep[i]).R;
      switch (quantity) {
        case DecayQuantity::RN_l2:
          t.values[i] = operator_norm_l2(w, R).value;
          break;
        case DecayQuantity::RN_testspace_ratio:
          t.values[i] = operator_test_space_ratio(space, R, tp, options.probe_seed, options.probe_count).ratio;
          break;
        case DecayQuantity::CZ_CT_of_RN: {
          CZKernelParams cz;
          cz.s = options.cz_s;
          t.values[i] = verify_cz_kernel(space, R, cz).at("C_T").C_fit;
          break;
        }
        case DecayQuantity::GN_l2:
          break;
      }
    }
  }
  fit_geometric(t);
  return t;
}

}  // namespace calderon
