#include "calderon/space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "calderon/parallel.hpp"
#include "calderon/random.hpp"

namespace calderon {

using json = nlohmann::json;

FinitePointSpace FinitePointSpace::from_coordinates(std::vector<std::string> ids,
                                                    std::vector<std::vector<double>> coords,
                                                    std::vector<double> weights,
                                                    MetricSpec metric, double A0) {
  if (coords.empty()) throw SpaceError("space has no points");
  if (metric.kind == MetricKind::Explicit) throw SpaceError("coordinates need a formula metric");
  if (metric.kind == MetricKind::Euclidean) metric.rho = 1.0;
  if (!(metric.rho > 0.0)) throw SpaceError("metric power rho must be positive");
  const std::size_t n = coords.size();
  const std::size_t dim = coords.front().size();
  for (const auto& c : coords) {
    if (c.size() != dim) throw SpaceError("points have inconsistent dimension");
  }
  Matrix d = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = coords[i][c] - coords[j][c];
        s += diff * diff;
      }
      double dist = std::sqrt(s);
      if (metric.rho != 1.0) dist = std::pow(dist, metric.rho);
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dist;
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = dist;
    }
  }
  FinitePointSpace space = from_matrix(std::move(ids), std::move(d), std::move(weights), A0);
  space.coords_ = std::move(coords);
  space.metric_ = metric;
  return space;
}

FinitePointSpace FinitePointSpace::from_matrix(std::vector<std::string> ids, Matrix distances,
                                               std::vector<double> weights, double A0) {
  const std::size_t n = weights.size();
  if (n == 0) throw SpaceError("space has no points");
  if (static_cast<std::size_t>(distances.rows()) != n ||
      static_cast<std::size_t>(distances.cols()) != n) {
    throw SpaceError("distance matrix does not match the number of weights");
  }
  if (ids.empty()) {
    for (std::size_t i = 0; i < n; ++i) ids.push_back("p" + std::to_string(i));
  }
  if (ids.size() != n) throw SpaceError("ids do not match the number of weights");
  if (!(A0 >= 1.0)) throw SpaceError("declared A0 must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw SpaceError("weight of point " + ids[i] + " is not strictly positive");
    }
  }
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    if (distances(i, i) != 0.0) throw SpaceError("distance matrix has a nonzero diagonal entry");
    for (Eigen::Index j = 0; j < distances.cols(); ++j) {
      const double v = distances(i, j);
      if (!std::isfinite(v) || v < 0.0) throw SpaceError("distance matrix has a negative or non-finite entry");
      if (v != distances(j, i)) throw SpaceError("distance matrix is not symmetric");
      if (i != j && v == 0.0) {
        throw SpaceError("distinct points " + ids[static_cast<std::size_t>(i)] + " and " +
                         ids[static_cast<std::size_t>(j)] + " are at distance zero");
      }
    }
  }
  FinitePointSpace space;
  space.ids_ = std::move(ids);
  space.dist_ = std::move(distances);
  space.weights_ = Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(n));
  space.A0_ = A0;
  space.metric_.kind = MetricKind::Explicit;
  space.finalize();
  return space;
}

void FinitePointSpace::finalize() {
  const std::size_t n = ids_.size();
  {
    std::vector<std::string> sorted = ids_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw SpaceError("point ids are not distinct");
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids_[a] < ids_[b]; });
  rank_.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) rank_[order[r]] = r;

  total_ = weights_.sum();
  diameter_ = dist_.maxCoeff();
  min_dist_ = std::numeric_limits<double>::infinity();
  sorted_dist_.assign(n, {});
  cumulative_weight_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> nb(n);
    std::iota(nb.begin(), nb.end(), 0);
    std::sort(nb.begin(), nb.end(), [&](std::size_t a, std::size_t b) {
      const double da = distance(i, a);
      const double db = distance(i, b);
      return da < db || (da == db && rank_[a] < rank_[b]);
    });
    auto& sd = sorted_dist_[i];
    auto& cw = cumulative_weight_[i];
    sd.reserve(n);
    cw.reserve(n);
    double acc = 0.0;
    for (std::size_t j : nb) {
      sd.push_back(distance(i, j));
      acc += weight(j);
      cw.push_back(acc);
      if (j != i) min_dist_ = std::min(min_dist_, distance(i, j));
    }
  }
}

std::size_t FinitePointSpace::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return i;
  }
  throw SpaceError("unknown point id '" + id + "'");
}

double FinitePointSpace::epsilon0() const {
  return std::isfinite(min_dist_) ? 0.5 * min_dist_ : 1.0;
}

std::vector<std::size_t> FinitePointSpace::ball(std::size_t x, double r) const {
  if (x >= size()) throw SpaceError("unknown point index");
  if (!(r > 0.0)) throw SpaceError("ball radius must be positive");
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < size(); ++y) {
    if (distance(x, y) < r) out.push_back(y);
  }
  return out;
}

double FinitePointSpace::volume(std::size_t x, double r) const {
  if (x >= size()) throw SpaceError("unknown point index");
  const auto& sd = sorted_dist_[x];
  const auto count = static_cast<std::size_t>(std::lower_bound(sd.begin(), sd.end(), r) - sd.begin());
  return count == 0 ? 0.0 : cumulative_weight_[x][count - 1];
}

std::vector<double> FinitePointSpace::radius_census(std::size_t x) const {
  std::vector<double> radii;
  const double eps = epsilon0();
  for (double d : sorted_dist_[x]) {
    const double r = d + eps;
    if (radii.empty() || radii.back() != r) radii.push_back(r);
  }
  return radii;
}

// ---------------------------------------------------------------------------
// File formats

std::vector<double> read_f64_file(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpaceError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected_count * 8) {
    throw SpaceError(path.string() + ": expected " + std::to_string(expected_count * 8) +
                     " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<double> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    std::memcpy(&values[i], &bits, sizeof(double));
  }
  return values;
}

void write_f64_file(const std::filesystem::path& path, const double* data, std::size_t count) {
  std::vector<unsigned char> bytes(count * 8);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &data[i], sizeof(double));
    for (std::size_t b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SpaceError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw SpaceError("short write to " + path.string());
}

FinitePointSpace load_space(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpaceError("cannot open space file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw SpaceError("malformed space file " + path.string() + ": " + e.what());
  }
  try {
    const auto& weights_json = doc.at("weights");
    std::vector<double> weights = weights_json.get<std::vector<double>>();
    const double A0 = doc.value("A0", 1.0);
    std::vector<std::string> ids;
    if (doc.contains("ids")) ids = doc.at("ids").get<std::vector<std::string>>();
    const auto& metric = doc.at("metric");
    const std::string type = metric.at("type").get<std::string>();
    if (type == "explicit") {
      const std::size_t n = weights.size();
      std::filesystem::path matrix_path = metric.at("matrix_file").get<std::string>();
      if (matrix_path.is_relative()) matrix_path = path.parent_path() / matrix_path;
      const auto values = read_f64_file(matrix_path, n * n);
      Matrix d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * n + j];
      }
      auto space = FinitePointSpace::from_matrix(std::move(ids), std::move(d), std::move(weights), A0);
      return space;
    }
    MetricSpec spec;
    if (type == "euclidean") {
      spec.kind = MetricKind::Euclidean;
    } else if (type == "power") {
      spec.kind = MetricKind::Power;
      spec.rho = metric.at("rho").get<double>();
    } else {
      throw SpaceError("unknown metric type '" + type + "'");
    }
    std::vector<std::vector<double>> coords;
    for (const auto& p : doc.at("points")) {
      if (p.is_number()) {
        coords.push_back({p.get<double>()});
      } else {
        coords.push_back(p.get<std::vector<double>>());
      }
    }
    if (coords.size() != weights.size()) throw SpaceError("points and weights differ in length");
    return FinitePointSpace::from_coordinates(std::move(ids), std::move(coords), std::move(weights), spec, A0);
  } catch (const json::exception& e) {
    throw SpaceError("malformed space file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Audits

QuasiMetricAudit quasi_metric_audit(const FinitePointSpace& space, std::uint64_t sample_seed,
                                    std::size_t triple_count) {
  if (triple_count == 0) throw SpaceError("triple_count must be >= 1");
  QuasiMetricAudit audit;
  audit.declared_A0 = space.A0();
  const std::size_t n = space.size();
  const Matrix& d = space.distances();
  audit.symmetric = (d - d.transpose()).cwiseAbs().maxCoeff() == 0.0;

  std::vector<std::array<std::size_t, 3>> triples;
  if (n <= kExhaustiveBudget) {
    audit.exhaustive = true;
  } else {
    audit.exhaustive = false;
    Rng rng(sample_seed);
    triples.reserve(triple_count);
    for (std::size_t t = 0; t < triple_count; ++t) triples.push_back({rng.index(n), rng.index(n), rng.index(n)});
  }

  struct Best {
    double ratio = 0.0;
    std::size_t x = 0, y = 0, z = 0;
    std::size_t count = 0;
  };
  auto ratio_of = [&](std::size_t x, std::size_t y, std::size_t z) {
    const double denom = space.distance(x, y) + space.distance(y, z);
    return denom > 0.0 ? space.distance(x, z) / denom : 0.0;
  };
  std::vector<Best> best;
  if (audit.exhaustive) {
    best.assign(n, {});
    parallel_for(0, n, [&](std::size_t x) {
      Best b;
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t z = 0; z < n; ++z) {
          if (x == z) continue;
          const double r = ratio_of(x, y, z);
          ++b.count;
          if (r > b.ratio) b = {r, x, y, z, b.count};
        }
      }
      best[x] = b;
    });
  } else {
    best.assign(1, {});
    for (const auto& t : triples) {
      const double r = ratio_of(t[0], t[1], t[2]);
      ++best[0].count;
      if (r > best[0].ratio) best[0] = {r, t[0], t[1], t[2], best[0].count};
    }
  }
  audit.A0_fit = 1.0;
  audit.triples = 0;
  double top = 0.0;
  for (const auto& b : best) {
    audit.triples += b.count;
    if (b.ratio > top) {
      top = b.ratio;
      audit.witness[0] = b.x;
      audit.witness[1] = b.y;
      audit.witness[2] = b.z;
    }
  }
  // Degenerate spaces have no nondegenerate triple; the triangle case gives ratio 1.
  audit.A0_fit = n < 2 ? 1.0 : top;
  audit.within_declared = audit.A0_fit <= space.A0() * (1.0 + 1e-12);
  return audit;
}

namespace {

struct BallPair {
  std::size_t x;
  double r;
};

std::vector<BallPair> ball_census(const FinitePointSpace& space, std::uint64_t seed,
                                  std::size_t count, bool& exhaustive) {
  std::vector<BallPair> out;
  const std::size_t n = space.size();
  if (n <= kExhaustiveBudget) {
    exhaustive = true;
    for (std::size_t x = 0; x < n; ++x) {
      for (double r : space.radius_census(x)) out.push_back({x, r});
    }
  } else {
    exhaustive = false;
    Rng rng(seed);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t x = rng.index(n);
      const std::size_t y = rng.index(n);
      out.push_back({x, space.distance(x, y) + space.epsilon0()});
    }
  }
  return out;
}

}  // namespace

DoublingAudit doubling_audit(const FinitePointSpace& space, std::uint64_t sample_seed,
                             std::size_t pair_count) {
  if (pair_count == 0) throw SpaceError("pair_count must be >= 1");
  DoublingAudit audit;
  const auto census = ball_census(space, sample_seed, pair_count, audit.exhaustive);
  audit.samples = census.size();
  double best = 1.0;
  for (const auto& b : census) {
    const double ratio = space.volume(b.x, 2.0 * b.r) / space.volume(b.x, b.r);
    if (ratio > best) {
      best = ratio;
      audit.worst_point = b.x;
      audit.worst_radius = b.r;
    }
  }
  audit.C_mu_fit = best;
  audit.omega_fit = std::log2(best);
  double residual = 0.0;
  for (const auto& b : census) {
    for (double lambda : {2.0, 4.0, 8.0}) {
      const double ratio = space.volume(b.x, lambda * b.r) /
                           (std::pow(lambda, audit.omega_fit) * space.volume(b.x, b.r));
      if (ratio > residual) {
        residual = ratio;
        audit.worst_lambda = lambda;
      }
    }
  }
  audit.consistency_residual = census.empty() ? 1.0 : residual;
  return audit;
}

GeometryAudit geometry_equivalence_audit(const FinitePointSpace& space, std::uint64_t sample_seed) {
  if (space.size() < 2) throw SpaceError("geometry audit needs at least two points");
  const std::size_t n = space.size();
  GeometryAudit audit;
  // Radii: the realized census shared by all points, thinned by a seeded
  // sample when the space is large.
  std::vector<double> radii;
  for (std::size_t x = 0; x < n; ++x) {
    for (double r : space.radius_census(x)) radii.push_back(r);
  }
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  constexpr std::size_t kRadiusBudget = 48;
  if (radii.size() > kRadiusBudget) {
    std::vector<double> thinned;
    for (std::size_t s = 0; s < kRadiusBudget; ++s) {
      thinned.push_back(radii[s * (radii.size() - 1) / (kRadiusBudget - 1)]);
    }
    thinned.erase(std::unique(thinned.begin(), thinned.end()), thinned.end());
    radii = std::move(thinned);
  }
  std::vector<std::size_t> points(n);
  std::iota(points.begin(), points.end(), 0);
  if (n > kExhaustiveBudget) {
    Rng rng(sample_seed);
    points.clear();
    for (int s = 0; s < 64; ++s) points.push_back(rng.index(n));
  }
  const double gammas[] = {0.5, 1.0, 2.0};
  const double betas[] = {0.5, 1.0};

  struct Partial {
    double vv = 1, a = 1, b = 1, ii = 0, iii_in = 0, iii_out = 0, iv = 0;
    std::size_t configs = 0;
  };
  std::vector<Partial> parts(points.size());
  parallel_for(0, points.size(), [&](std::size_t pi) {
    const std::size_t x = points[pi];
    Partial p;
    for (std::size_t y = 0; y < n; ++y) {
      if (y == x) continue;
      p.vv = std::max(p.vv, space.volume_between(x, y) / space.volume_between(y, x));
      const double dxy = space.distance(x, y);
      for (double r : radii) {
        const double lhs = space.volume(x, r) + space.volume_between(x, y);
        const double enlarged = space.volume(x, r + dxy);
        p.a = std::max(p.a, lhs / enlarged);
        p.b = std::max(p.b, enlarged / lhs);
        ++p.configs;
      }
    }
    for (double r : radii) {
      const double vr = space.volume(x, r);
      for (double gamma : gammas) {
        double sum = 0.0;
        for (std::size_t y = 0; y < n; ++y) {
          const double d = space.distance(x, y);
          sum += space.weight(y) / (vr + space.volume_between(x, y)) * std::pow(r / (r + d), gamma);
        }
        p.ii = std::max(p.ii, sum);
        // (iv): tail beyond R, normalized by (r / (r + R))^gamma.
        for (double R : radii) {
          double tail = 0.0;
          for (std::size_t y = 0; y < n; ++y) {
            const double d = space.distance(x, y);
            if (d >= R) tail += space.weight(y) / (vr + space.volume_between(x, y)) * std::pow(r / (r + d), gamma);
          }
          p.iv = std::max(p.iv, tail / std::pow(r / (r + R), gamma));
          ++p.configs;
        }
      }
      for (double beta : betas) {
        const double R = r;
        double inner = 0.0;
        double outer = 0.0;
        for (std::size_t y = 0; y < n; ++y) {
          if (y == x) continue;
          const double d = space.distance(x, y);
          const double v = space.volume_between(x, y);
          if (d <= R) inner += space.weight(y) / v * std::pow(d / R, beta);
          if (d >= R) outer += space.weight(y) / v * std::pow(R / d, beta);
        }
        p.iii_in = std::max(p.iii_in, inner);
        p.iii_out = std::max(p.iii_out, outer);
      }
    }
    parts[pi] = p;
  });
  for (const auto& p : parts) {
    audit.V_xy_over_V_yx = std::max(audit.V_xy_over_V_yx, p.vv);
    audit.ball_sum_over_enlarged = std::max(audit.ball_sum_over_enlarged, p.a);
    audit.enlarged_over_ball_sum = std::max(audit.enlarged_over_ball_sum, p.b);
    audit.integral_ii = std::max(audit.integral_ii, p.ii);
    audit.integral_iii_inner = std::max(audit.integral_iii_inner, p.iii_in);
    audit.integral_iii_outer = std::max(audit.integral_iii_outer, p.iii_out);
    audit.integral_iv_ratio = std::max(audit.integral_iv_ratio, p.iv);
    audit.configurations += p.configs;
  }
  return audit;
}

Vector maximal_operator(const FinitePointSpace& space, const Vector& f) {
  const std::size_t n = space.size();
  if (static_cast<std::size_t>(f.size()) != n) throw SpaceError("function length does not match the space");
  Vector out(static_cast<Eigen::Index>(n));
  parallel_for(0, n, [&](std::size_t x) {
    double best = 0.0;
    for (double r : space.radius_census(x)) {
      double integral = 0.0;
      double volume = 0.0;
      for (std::size_t y = 0; y < n; ++y) {
        if (space.distance(x, y) < r) {
          integral += std::abs(f(static_cast<Eigen::Index>(y))) * space.weight(y);
          volume += space.weight(y);
        }
      }
      best = std::max(best, integral / volume);
    }
    out(static_cast<Eigen::Index>(x)) = best;
  });
  return out;
}

double lp_norm(const Vector& w, const Vector& f, double p) {
  if (!(p > 0.0)) throw SpaceError("lp_norm needs p > 0");
  if (f.size() != w.size()) throw SpaceError("function length does not match the space");
  if (std::isinf(p)) return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) sum += std::pow(std::abs(f(i)), p) * w(i);
  return std::pow(sum, 1.0 / p);
}

double lp_norm(const FinitePointSpace& space, const Vector& f, double p) {
  return lp_norm(space.weights(), f, p);
}

}  // namespace calderon
