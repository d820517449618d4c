#include "calderon/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace calderon {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::vector<std::string> kStageOrder{"space", "dyadic", "family", "formulae", "decay"};

std::string to_string(FamilyConstructor c) {
  switch (c) {
    case FamilyConstructor::Haar: return "haar";
    case FamilyConstructor::Smoothed: return "smoothed";
    case FamilyConstructor::Load: return "load";
  }
  return "haar";
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << bytes;
  if (!out) throw ConfigError("short write to " + path.string());
}

json file_hash_or_null(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return nullptr;
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

// Tracks which keys of a JSON object were consumed so leftovers can be rejected.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  const json* get(const std::string& key) {
    used_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(where_ + "." + key + " must be a number");
    return v->get<double>();
  }
  double positive(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(where_ + "." + key + " must be positive");
    return v;
  }
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) throw ConfigError(where_ + "." + key + " must be a non-negative integer");
    return v->get<std::uint64_t>();
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned() || v->get<std::uint64_t>() == 0) {
      throw ConfigError(where_ + "." + key + " must be a positive integer");
    }
    return v->get<std::size_t>();
  }
  std::string text(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(where_ + "." + key + " must be a string");
    return v->get<std::string>();
  }
  /// Integer >= 0, or "auto" (empty).
  std::optional<int> int_or_auto(const std::string& key) {
    const json* v = get(key);
    if (!v || (v->is_string() && v->get<std::string>() == "auto")) return std::nullopt;
    if (!v->is_number_integer() || v->get<long long>() < 0 || v->get<long long>() > 64) {
      throw ConfigError(where_ + "." + key + " must be \"auto\" or an integer in [0, 64]");
    }
    return v->get<int>();
  }
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

void absorb(StageRecord& rec, const std::string& key, const EstimateReport& report) {
  rec.body["reports"][key] = report.to_json();
  for (const auto& c : report.conditions) {
    if (c.kind == ConditionKind::Exact && !c.pass) {
      rec.gating_pass = false;
      rec.body["gating_failures"].push_back(key + "/" + c.name);
    }
  }
}

void absorb(StageRecord& rec, const std::string& key, const CrfResult& result) {
  absorb(rec, key, result.report);
  for (const auto& d : result.duals) {
    rec.body["certificates"].push_back({{"formula", key},
                                        {"variant", d.variant},
                                        {"certificate", d.certificate.to_json()},
                                        {"sound", d.certificate.sound()},
                                        {"reconstruction", d.reconstruction.to_json()}});
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(const json& v) {
  if (v.is_number()) return format_g17(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return "";
}

std::string summary_csv(const RunReport& report) {
  std::ostringstream out;
  out << "stage,report,condition,kind,value,tolerance,pass\n";
  for (const auto& st : report.stages) {
    auto it = st.body.find("reports");
    if (it == st.body.end()) continue;
    for (auto r = it->begin(); r != it->end(); ++r) {
      for (const auto& c : r.value().at("conditions")) {
        const bool exact = c.at("kind") == "exact";
        out << st.name << ',' << csv_field(r.key()) << ',' << csv_field(c.at("name").get<std::string>()) << ','
            << (exact ? "exact" : "fitted") << ',' << csv_number(exact ? c.at("max_violation") : c.at("C_fit")) << ','
            << (exact ? csv_number(c.at("tolerance")) : std::string()) << ','
            << (exact ? (c.at("pass").get<bool>() ? "true" : "false") : "") << '\n';
      }
    }
  }
  for (const auto& t : report.decay) {
    out << "decay," << to_string(t.quantity) << ",ratio,fitted," << format_g17(t.ratio) << ",,"
        << (t.degenerate ? "degenerate" : (t.monotone ? "monotone" : "not_monotone")) << '\n';
  }
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Formatting and hashing

std::string format_g17(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

bool ExperimentConfig::has_stage(const std::string& stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

json ExperimentConfig::to_json() const {
  json doc;
  doc["name"] = name;
  // Inputs are identified by content, so the echo does not depend on where they live.
  doc["space"] = {{"file", space_path.filename().string()}, {"sha256", file_hash_or_null(space_path)}};
  doc["delta"] = net.delta;
  doc["k_range"] = net.k_range ? json{net.k_range->first, net.k_range->second} : json("auto");
  doc["c0"] = net.c0;
  doc["C0"] = net.C0;
  doc["strict"] = net.strict;
  json fam = {{"constructor", to_string(constructor)}};
  if (constructor == FamilyConstructor::Load) {
    fam["manifest_sha256"] = file_hash_or_null(family_path / "manifest.json");
  } else if (constructor == FamilyConstructor::Smoothed) {
    fam["nu"] = smoothing.nu;
    fam["a"] = smoothing.a;
  }
  doc["family"] = fam;
  doc["mode"] = calderon::to_string(mode);
  doc["N"] = N ? json(*N) : json("auto");
  doc["j0"] = j0 ? json(*j0) : json("auto");
  json samp = json::array();
  for (auto s : samplers) samp.push_back(calderon::to_string(s));
  doc["samplers"] = samp;
  doc["seeds"] = {{"audit", audit_seed}, {"probes", probe_seed}, {"sampler", sampler_seed}};
  doc["tolerances"] = {{"identity", identity_tol},
                       {"neumann", neumann_tol},
                       {"reconstruction", reconstruction_l2},
                       {"lp", reconstruction_lp}};
  doc["budgets"] = {{"triples", triple_budget}, {"pairs", pair_budget}, {"random_probes", random_probes}};
  json dec = json::array();
  for (const auto& d : decay) {
    dec.push_back({{"quantity", calderon::to_string(d.quantity)}, {"sweep", d.sweep}, {"gating", d.gating}});
  }
  doc["decay"] = dec;
  doc["stages"] = stages;
  return doc;
}

ExperimentConfig parse_config(const json& doc, const fs::path& base_dir) {
  ExperimentConfig cfg;
  Fields top(doc, "config");
  cfg.name = top.text("name", cfg.name);

  const json* space = top.get("space");
  if (!space || !space->is_string()) throw ConfigError("config.space must name a space file");
  cfg.space_path = space->get<std::string>();
  if (cfg.space_path.is_relative()) cfg.space_path = base_dir / cfg.space_path;

  cfg.net.delta = top.number("delta", 0.5);
  if (!(cfg.net.delta > 0.0 && cfg.net.delta < 1.0)) throw ConfigError("config.delta must lie in (0, 1)");
  if (const json* kr = top.get("k_range")) {
    if (kr->is_string() && kr->get<std::string>() == "auto") {
      cfg.net.k_range.reset();
    } else if (kr->is_array() && kr->size() == 2 && (*kr)[0].is_number_integer() && (*kr)[1].is_number_integer()) {
      cfg.net.k_range = std::make_pair((*kr)[0].get<int>(), (*kr)[1].get<int>());
      if (cfg.net.k_range->first > cfg.net.k_range->second) throw ConfigError("config.k_range is empty");
    } else {
      throw ConfigError("config.k_range must be \"auto\" or [k_min, k_max]");
    }
  }
  cfg.net.c0 = top.positive("c0", 1.0);
  cfg.net.C0 = top.positive("C0", 1.0);
  if (const json* st = top.get("strict")) {
    if (!st->is_boolean()) throw ConfigError("config.strict must be a boolean");
    cfg.net.strict = st->get<bool>();
  }

  if (const json* fam = top.get("family")) {
    Fields f(*fam, "family");
    const std::string ctor = f.text("constructor", "smoothed");
    if (ctor == "haar") {
      cfg.constructor = FamilyConstructor::Haar;
    } else if (ctor == "smoothed") {
      cfg.constructor = FamilyConstructor::Smoothed;
    } else if (ctor == "load") {
      cfg.constructor = FamilyConstructor::Load;
    } else {
      throw ConfigError("family.constructor must be haar, smoothed or load");
    }
    cfg.smoothing.nu = f.positive("nu", 1.0);
    cfg.smoothing.a = f.positive("a", 1.0);
    if (cfg.smoothing.a > 1.0) throw ConfigError("family.a must lie in (0, 1]");
    const std::string path = f.text("path", "");
    if (cfg.constructor == FamilyConstructor::Load) {
      if (path.empty()) throw ConfigError("family.path is required when loading a family");
      cfg.family_path = path;
      if (cfg.family_path.is_relative()) cfg.family_path = base_dir / cfg.family_path;
    }
    f.finish();
  }

  try {
    cfg.mode = mode_from_string(top.text("mode", "homogeneous"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.mode: ") + e.what());
  }
  cfg.N = top.int_or_auto("N");
  cfg.j0 = top.int_or_auto("j0");

  if (const json* s = top.get("samplers")) {
    if (!s->is_array() || s->empty()) throw ConfigError("config.samplers must be a non-empty array");
    cfg.samplers.clear();
    for (const auto& v : *s) {
      if (!v.is_string()) throw ConfigError("config.samplers entries must be strings");
      const std::string name = v.get<std::string>();
      if (name != "center" && name != "random" && name != "worst-case" && name != "worst_case") {
        throw ConfigError("unknown sampler '" + name + "'");
      }
      cfg.samplers.push_back(sampler_from_string(name));
    }
  }

  if (const json* s = top.get("seeds")) {
    Fields f(*s, "seeds");
    cfg.audit_seed = f.seed("audit", cfg.audit_seed);
    cfg.probe_seed = f.seed("probes", cfg.probe_seed);
    cfg.sampler_seed = f.seed("sampler", cfg.sampler_seed);
    f.finish();
  }
  if (const json* t = top.get("tolerances")) {
    Fields f(*t, "tolerances");
    cfg.identity_tol = f.positive("identity", cfg.identity_tol);
    cfg.neumann_tol = f.positive("neumann", cfg.neumann_tol);
    cfg.reconstruction_l2 = f.positive("reconstruction", cfg.reconstruction_l2);
    cfg.reconstruction_lp = f.positive("lp", cfg.reconstruction_lp);
    f.finish();
  }
  if (const json* b = top.get("budgets")) {
    Fields f(*b, "budgets");
    cfg.triple_budget = f.count("triples", cfg.triple_budget);
    cfg.pair_budget = f.count("pairs", cfg.pair_budget);
    cfg.random_probes = f.count("random_probes", cfg.random_probes);
    f.finish();
  }
  if (const json* d = top.get("decay")) {
    if (!d->is_array()) throw ConfigError("config.decay must be an array");
    for (const auto& entry : *d) {
      Fields f(entry, "decay[]");
      DecaySpec spec;
      try {
        spec.quantity = decay_quantity_from_string(f.text("quantity", ""));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("decay quantity: ") + e.what());
      }
      const json* sweep = f.get("sweep");
      if (!sweep || !sweep->is_array() || sweep->empty()) throw ConfigError("decay[].sweep must be a non-empty array");
      for (const auto& v : *sweep) {
        if (!v.is_number_integer() || v.get<int>() < 0) throw ConfigError("decay[].sweep entries must be integers >= 0");
        spec.sweep.push_back(v.get<int>());
      }
      if (const json* g = f.get("gating")) {
        if (!g->is_boolean()) throw ConfigError("decay[].gating must be a boolean");
        spec.gating = g->get<bool>();
      }
      f.finish();
      cfg.decay.push_back(std::move(spec));
    }
  }
  if (const json* s = top.get("stages")) {
    if (!s->is_array()) throw ConfigError("config.stages must be an array");
    cfg.stages.clear();
    for (const auto& v : *s) {
      if (!v.is_string() || std::find(kStageOrder.begin(), kStageOrder.end(), v.get<std::string>()) == kStageOrder.end()) {
        throw ConfigError("unknown stage " + v.dump());
      }
      cfg.stages.push_back(v.get<std::string>());
    }
  }
  if (const json* o = top.get("output")) {
    if (!o->is_string()) throw ConfigError("config.output must be a string");
    cfg.output_dir = o->get<std::string>();
  }
  top.finish();

  // Inputs must be readable before anything is written.
  try {
    (void)load_space(cfg.space_path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (cfg.constructor == FamilyConstructor::Load && !fs::exists(cfg.family_path / "manifest.json")) {
    throw ConfigError("no family manifest in " + cfg.family_path.string());
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_bytes(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Stages

StageRecord space_stage(const FinitePointSpace& space, const ExperimentConfig& config) {
  StageRecord rec;
  rec.name = "space";
  const auto qm = quasi_metric_audit(space, config.audit_seed, config.triple_budget);
  const auto db = doubling_audit(space, config.audit_seed, config.pair_budget);
  const auto ge = geometry_equivalence_audit(space, config.audit_seed);
  const auto& ids = space.ids();

  EstimateReport r;
  r.name = "space";
  r.seed = config.audit_seed;
  r.census = qm.triples;
  r.add_exact("symmetry", "d(x, y) = d(y, x)", qm.symmetric ? 0.0 : 1.0, 0.0);
  auto& tri = r.add_exact("quasi_triangle", "fitted A0 within the declared A0",
                          qm.within_declared ? 0.0 : qm.A0_fit - qm.declared_A0, 0.0);
  tri.samples = qm.triples;
  tri.witness = ids[qm.witness[0]] + "," + ids[qm.witness[1]] + "," + ids[qm.witness[2]];
  if (!qm.exhaustive) tri.flags.push_back("sampled");
  r.add_fitted("A0_fit", "quasi-triangle constant", qm.A0_fit).samples = qm.triples;
  auto& cmu = r.add_fitted("doubling_C_mu", "doubling constant", db.C_mu_fit);
  cmu.samples = db.samples;
  cmu.witness = ids[db.worst_point] + " r=" + format_g17(db.worst_radius) + " lambda=" + format_g17(db.worst_lambda);
  if (!db.exhaustive) cmu.flags.push_back("sampled");
  r.add_fitted("doubling_omega", "upper dimension", db.omega_fit).residual = db.consistency_residual;
  r.add_fitted("V_xy_over_V_yx", "ball volume symmetry", ge.V_xy_over_V_yx).samples = ge.configurations;
  r.add_fitted("ball_sum_over_enlarged", "V_r(x) + V(x,y) vs mu(B(x, r + d))", ge.ball_sum_over_enlarged);
  r.add_fitted("enlarged_over_ball_sum", "mu(B(x, r + d)) vs V_r(x) + V(x,y)", ge.enlarged_over_ball_sum);
  r.add_fitted("integral_decay", "gamma-decay integral", ge.integral_ii);
  r.add_fitted("integral_inner", "sum over d <= R", ge.integral_iii_inner);
  r.add_fitted("integral_outer", "sum over d >= R", ge.integral_iii_outer);
  r.add_fitted("integral_ratio", "mixed integral ratio", ge.integral_iv_ratio);
  absorb(rec, "space", r);
  rec.body["n"] = space.size();
  rec.body["A0"] = space.A0();
  rec.body["diameter"] = space.diameter();
  rec.body["total_measure"] = space.total_measure();
  rec.body["min_positive_distance"] = number_json(space.min_positive_distance());
  return rec;
}

StageRecord dyadic_stage(const DyadicSystem& system, const ExperimentConfig& config) {
  StageRecord rec;
  rec.name = "dyadic";
  const auto& ch = system.checks();
  const auto& net = system.net();
  EstimateReport r;
  r.name = "dyadic";
  r.seed = config.audit_seed;
  r.add_exact("partition", "cubes partition X at every level", ch.partition ? ch.partition_measure_error : 1.0, 1e-12);
  r.add_exact("nesting", "cubes nest across levels", ch.nesting ? 0.0 : 1.0, 0.0);
  // The sandwich is only guaranteed when 12 A0^3 C0 delta <= c0; outside that
  // regime it is reported but does not gate.
  const double A0 = system.space().A0();
  const bool guaranteed = net.strict || 12.0 * A0 * A0 * A0 * net.C0 * net.delta <= net.c0;
  if (guaranteed) {
    r.add_exact("sandwich", "ball sandwich with the derived constants", ch.sandwich ? 0.0 : 1.0, 0.0).witness =
        ch.sandwich_witness;
  } else {
    auto& sw = r.add_fitted("sandwich", "ball sandwich with the derived constants", ch.sandwich ? 0.0 : 1.0);
    sw.witness = ch.sandwich_witness;
    sw.flags.push_back("delta outside the guaranteed regime; diagnostic only");
  }
  r.add_fitted("inner_radius", "min inner radius / delta^k", ch.inner_radius_fit);
  r.add_fitted("outer_radius", "max outer radius / delta^k", ch.outer_radius_fit);
  r.add_fitted("net_separation", "min d(z, z') / delta^k", net.separation_fit);
  r.add_fitted("net_covering", "max d(x, net) / delta^k", net.covering_fit);
  if (system.k_max() > system.k_min()) {
    const auto es = verify_expsum(system, config.smoothing.a, config.smoothing.nu, config.audit_seed);
    auto& c1 = r.add_fitted("expsum_C1", "sum over delta^k >= r against V_r(x)", es.C1_fit);
    c1.samples = es.pairs_r;
    c1.a_used = config.smoothing.a;
    auto& c2 = r.add_fitted("expsum_C2", "full-range sum against V(x, y)", es.C2_fit);
    c2.samples = es.pairs_xy;
    c2.a_used = config.smoothing.a;
    if (es.empty_levels) c2.flags.push_back(std::to_string(es.empty_levels) + " levels without new centers");
  }
  absorb(rec, "dyadic", r);
  json counts = json::array();
  for (int k = system.k_min(); k <= system.k_max(); ++k) counts.push_back(system.level(k).centers.size());
  rec.body["k_range"] = {system.k_min(), system.k_max()};
  rec.body["cube_counts"] = counts;
  rec.body["finest_is_singleton"] = system.finest_is_singleton();
  rec.body["c_inner"] = system.c_inner();
  rec.body["C_outer"] = system.C_outer();
  return rec;
}

OperatorFamily make_family(const FinitePointSpace& space, const DyadicSystem& system, const ExperimentConfig& config) {
  switch (config.constructor) {
    case FamilyConstructor::Haar: return build_haar_family(system, config.mode);
    case FamilyConstructor::Smoothed: return build_smoothed_family(space, system, config.smoothing, config.mode);
    case FamilyConstructor::Load: {
      OperatorFamily f;
      try {
        f = load_family(config.family_path, space.weights());
      } catch (const SpaceError& e) {
        throw ConfigError(e.what());
      }
      if (f.mode != config.mode) {
        throw ConfigError("loaded family is " + to_string(f.mode) + " but the config asks for " + to_string(config.mode));
      }
      return f;
    }
  }
  throw ConfigError("unknown family constructor");
}

StageRecord family_stage(const OperatorFamily& family, const DyadicSystem& system, const ExperimentConfig& config) {
  StageRecord rec;
  rec.name = "family";
  const Vector& w = family.weights;
  EstimateReport id;
  id.name = "family_identities";
  id.add_exact("sum_identity", "sum of Q_k = I_mode", max_abs(family.sum() - mode_identity(family.mode, w)),
               config.identity_tol);
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const double target = family.integral_target(i);
    rows = std::max(rows, (row_integrals(family.q[i], w).array() - target).abs().maxCoeff());
    cols = std::max(cols, (column_integrals(family.q[i], w).array() - target).abs().maxCoeff());
  }
  id.add_exact("row_integrals", "row integrals of Q_k", rows, config.identity_tol);
  id.add_exact("column_integrals", "column integrals of Q_k", cols, config.identity_tol);
  absorb(rec, "identities", id);

  AtiAuditOptions ati;
  ati.tolerance = config.identity_tol;
  ati.seed = config.audit_seed;
  ati.pair_budget = config.pair_budget;
  absorb(rec, "ati", verify_ati(family, system.space(), ati));
  ExpAtiAuditOptions exp;
  exp.tolerance = config.identity_tol;
  exp.seed = config.audit_seed;
  exp.pair_budget = config.pair_budget;
  absorb(rec, "exp_ati", verify_exp_ati(family, system, exp));

  rec.body["provenance"] = to_string(family.provenance);
  rec.body["mode"] = to_string(family.mode);
  rec.body["levels"] = family.levels;
  rec.body["warnings"] = family.warnings;
  return rec;
}

AutoChoice resolve_parameters(const OperatorFamily& family, const DyadicSystem& system, const ExperimentConfig& config) {
  AutoChoice choice;
  if (!config.N || !config.j0) {
    choice = choose_parameters(family, system, config.samplers.front(), config.sampler_seed);
  }
  if (config.N) {
    choice.N = *config.N;
    choice.rho_continuous = operator_norm_l2(family.weights, split_identity(family, choice.N).R).value;
    choice.log.push_back("N fixed at " + std::to_string(choice.N));
  }
  if (config.j0) {
    choice.j0 = *config.j0;
    choice.log.push_back("j0 fixed at " + std::to_string(choice.j0));
  }
  return choice;
}

StageRecord formulae_stage(const OperatorFamily& family, const DyadicSystem& system, const ExperimentConfig& config,
                           const AutoChoice& params, const std::string& which) {
  if (which != "all" && which != "continuous" && which != "discrete" && which != "inhomogeneous") {
    throw ConfigError("unknown formula selection '" + which + "'");
  }
  if (which == "inhomogeneous" && family.mode != Mode::Inhomogeneous) {
    throw ConfigError("inhomogeneous formulae need an inhomogeneous family");
  }
  StageRecord rec;
  rec.name = "formulae";
  rec.body["parameters"] = {{"N", params.N},
                            {"j0", params.j0},
                            {"auto_N", !config.N.has_value()},
                            {"auto_j0", !config.j0.has_value()},
                            {"rho_continuous", params.rho_continuous},
                            {"rho_discrete", params.rho_discrete},
                            {"log", params.log}};
  rec.body["certificates"] = json::array();

  CrfOptions co;
  co.N = params.N;
  co.tol = config.neumann_tol;
  co.identity_tol = config.identity_tol;
  co.reconstruction_l2 = config.reconstruction_l2;
  co.reconstruction_lp = config.reconstruction_lp;
  co.probes.seed = config.probe_seed;
  co.probes.random = config.random_probes;

  const IdentitySplit split = split_identity(family, params.N);
  EstimateReport sr;
  sr.name = "split";
  sr.add_exact("T_plus_R", "T_N + R_N = I_mode", split.identity_violation, config.identity_tol);
  sr.add_exact("remainder_ledger", "R_N as the sum of off-window compositions", split.ledger_mismatch, 1e-8);
  sr.add_fitted("R_norm", "||R_N||_2", params.rho_continuous);
  absorb(rec, "split", sr);

  const bool cont = which == "all" || which == "continuous";
  const bool disc = which == "all" || which == "discrete" || which == "inhomogeneous";
  if (family.mode == Mode::Homogeneous) {
    if (cont) {
      absorb(rec, "continuous_left", continuous_crf(family, system, co, ContinuousVariant::Left));
      absorb(rec, "continuous_right", continuous_crf(family, system, co, ContinuousVariant::Right));
    }
    if (disc) {
      for (Sampler s : config.samplers) {
        const SubcubeRefinement ref(system, params.j0, s, config.sampler_seed);
        for (bool dual : {false, true}) {
          for (int v = 0; v < 3; ++v) {
            const std::string key =
                "discrete_" + to_string(s) + "_" + (dual ? "dual_" : "primal_") + std::to_string(v);
            absorb(rec, key, discrete_crf(family, ref, co, v, dual));
          }
        }
      }
    }
  } else {
    if (disc) {
      for (Sampler s : config.samplers) {
        const SubcubeRefinement ref(system, params.j0, s, config.sampler_seed);
        absorb(rec, "inhomogeneous_" + to_string(s), inhomogeneous_crf(family, system, co, &ref));
      }
    } else {
      absorb(rec, "inhomogeneous_continuous", inhomogeneous_crf(family, system, co, nullptr));
    }
  }
  return rec;
}

StageRecord decay_stage(const OperatorFamily& family, const DyadicSystem& system, const ExperimentConfig& config,
                        const AutoChoice& params, std::vector<DecayTable>& tables) {
  StageRecord rec;
  rec.name = "decay";
  DecayOptions o;
  o.N = params.N;
  o.sampler = config.samplers.front();
  o.sampler_seed = config.sampler_seed;
  o.probe_seed = config.probe_seed;
  o.probe_count = config.random_probes;
  rec.body["tables"] = json::array();
  if (config.decay.empty()) rec.body["note"] = "no decay tables configured";
  for (const auto& spec : config.decay) {
    DecayTable t = decay_study(family, system, spec.quantity, spec.sweep, o);
    const std::string q = to_string(spec.quantity);
    rec.body["tables"].push_back(q);
    if (spec.gating && !t.degenerate && !(t.monotone && t.ratio < 1.0)) {
      rec.gating_pass = false;
      rec.body["gating_failures"].push_back("decay/" + q);
    }
    tables.push_back(std::move(t));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Orchestration

RunReport run_experiment(const ExperimentConfig& config) {
  RunReport report;
  report.config = config.to_json();

  std::size_t last_needed = 0;  // stages up to here must at least build their objects
  for (std::size_t i = 0; i < kStageOrder.size(); ++i) {
    if (config.has_stage(kStageOrder[i])) last_needed = i;
  }

  std::optional<FinitePointSpace> space;
  std::optional<DyadicSystem> system;
  std::optional<OperatorFamily> family;
  std::optional<AutoChoice> params;

  for (std::size_t i = 0; i < kStageOrder.size(); ++i) {
    const std::string& name = kStageOrder[i];
    const bool requested = config.has_stage(name);
    StageRecord rec;
    rec.name = name;
    if (report.failure_code) {
      rec.status = "skipped";
      rec.reason = "an earlier stage failed";
      report.stages.push_back(std::move(rec));
      continue;
    }
    if (i > last_needed) {
      rec.status = "skipped";
      rec.reason = "not requested";
      report.stages.push_back(std::move(rec));
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (name == "space") {
        try {
          space.emplace(load_space(config.space_path));
        } catch (const SpaceError& e) {
          throw ConfigError(e.what());
        }
        if (requested) rec = space_stage(*space, config);
      } else if (name == "dyadic") {
        system.emplace(build_dyadic(*space, build_nets(*space, config.net)));
        if (requested) rec = dyadic_stage(*system, config);
      } else if (name == "family") {
        family.emplace(make_family(*space, *system, config));
        if (requested) rec = family_stage(*family, *system, config);
      } else if (name == "formulae") {
        params.emplace(resolve_parameters(*family, *system, config));
        if (requested) rec = formulae_stage(*family, *system, config, *params);
      } else if (name == "decay") {
        rec = decay_stage(*family, *system, config, *params, report.decay);
      }
      if (!requested) {
        rec = StageRecord{};
        rec.name = name;
        rec.status = "skipped";
        rec.reason = "not requested; inputs built for later stages";
      }
    } catch (const ConfigError& e) {
      rec = StageRecord{};
      rec.name = name;
      rec.status = "failed";
      rec.reason = e.what();
      report.failure_code = kExitConfig;
    } catch (const std::exception& e) {
      rec = StageRecord{};
      rec.name = name;
      rec.status = "failed";
      rec.reason = e.what();
      report.failure_code = kExitGating;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!rec.gating_pass) {
      for (const auto& g : rec.body["gating_failures"]) report.gating_failures.push_back(name + "/" + g.get<std::string>());
    }
    report.stages.push_back(std::move(rec));
  }
  return report;
}

json RunReport::to_json(bool include_timings) const {
  json doc;
  doc["name"] = config.value("name", "experiment");
  doc["config"] = config;
  json st = json::array();
  json timings = json::object();
  for (const auto& s : stages) {
    json j = {{"name", s.name}, {"status", s.status}, {"gating_pass", s.gating_pass}, {"body", s.body}};
    if (!s.reason.empty()) j["reason"] = s.reason;
    st.push_back(std::move(j));
    if (s.status != "skipped") timings[s.name] = s.seconds;
  }
  doc["stages"] = st;
  json dec = json::array();
  for (const auto& t : decay) dec.push_back(t.to_json());
  doc["decay"] = dec;
  doc["gating_failures"] = gating_failures;
  doc["exit_code"] = exit_code();
  if (include_timings) doc["timings"] = timings;
  return doc;
}

std::string RunReport::hash() const { return sha256_hex(to_json(false).dump()); }

int RunReport::exit_code() const {
  if (failure_code) return failure_code;
  return gating_failures.empty() ? kExitOk : kExitGating;
}

std::vector<fs::path> emit_plot_data(const RunReport& report, const fs::path& dir) {
  std::vector<fs::path> written;
  for (const auto& t : report.decay) {
    std::ostringstream out;
    out << t.parameter << ',' << to_string(t.quantity) << ",fit\n";
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      out << t.sweep[i] << ',' << format_g17(t.values[i]) << ',' << format_g17(t.fitted(i)) << '\n';
    }
    const fs::path path = dir / ("decay_" + to_string(t.quantity) + ".csv");
    write_bytes(path, out.str());
    written.push_back(path);
  }
  return written;
}

std::vector<fs::path> write_artifacts(const RunReport& report, const ExperimentConfig& config) {
  const fs::path& dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<fs::path> files;
  files.push_back(dir / "report.json");
  write_bytes(files.back(), report.to_json(true).dump(1) + "\n");
  files.push_back(dir / "summary.csv");
  write_bytes(files.back(), summary_csv(report));
  for (auto& p : emit_plot_data(report, dir)) files.push_back(p);

  json manifest;
  manifest["name"] = config.name;
  manifest["report_hash"] = report.hash();
  manifest["exit_code"] = report.exit_code();
  json list = json::array();
  for (const auto& p : files) {
    const std::string bytes = read_bytes(p);
    list.push_back({{"path", p.filename().string()}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }
  manifest["files"] = list;
  manifest["decay_tables"] = report.decay.size();
  if (report.decay.empty()) manifest["notes"] = json::array({"no decay tables; no plot data written"});
  manifest["hash_scope"] = "report_hash covers report.json without timings";
  files.push_back(dir / "manifest.json");
  write_bytes(files.back(), manifest.dump(1) + "\n");
  return files;
}

}  // namespace calderon
