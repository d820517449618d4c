// calderon_lab: command-line front end for the space / dyadic / family /
// reproducing-formula pipeline. Every subcommand prints JSON on stdout unless
// --out redirects it.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "calderon/harness.hpp"
#include "calderon/parallel.hpp"

using namespace calderon;
using json = nlohmann::json;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  bool strict_geometry = false;
};

// Pipeline inputs shared by the space-driven subcommands.
struct Inputs {
  std::string space;
  double delta = 0.5;
  std::vector<int> k_range;
  std::string constructor = "smoothed";
  std::string family_dir;
  double nu = 1.0;
  double a = 1.0;
  std::string mode = "homogeneous";
  std::string N = "auto";
  std::string j0 = "auto";
  std::vector<std::string> samplers{"center"};
};

void add_space(CLI::App* cmd, Inputs& in) {
  cmd->add_option("space", in.space, "space JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--delta", in.delta, "dyadic ratio in (0, 1)");
  cmd->add_option("--k-range", in.k_range, "k_min k_max (default: automatic)")->expected(2);
}

void add_family(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--constructor", in.constructor, "haar | smoothed")->check(CLI::IsMember({"haar", "smoothed"}));
  cmd->add_option("--family", in.family_dir, "load a saved family instead of constructing one");
  cmd->add_option("--nu", in.nu, "smoothed kernel rate");
  cmd->add_option("--a", in.a, "smoothed kernel exponent in (0, 1]");
  cmd->add_option("--mode", in.mode, "homogeneous | inhomogeneous")
      ->check(CLI::IsMember({"homogeneous", "inhomogeneous"}));
}

void add_parameters(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--N", in.N, "window half-width or 'auto'");
  cmd->add_option("--j0", in.j0, "subcube depth or 'auto'");
  cmd->add_option("--sampler", in.samplers, "center | random | worst-case (repeatable)");
}

ExperimentConfig make_config(const Inputs& in, const Common& common) {
  json doc = {{"space", in.space}, {"delta", in.delta}, {"mode", in.mode}, {"strict", common.strict_geometry}};
  if (in.k_range.size() == 2) doc["k_range"] = in.k_range;
  if (!in.family_dir.empty()) {
    doc["family"] = {{"constructor", "load"}, {"path", in.family_dir}};
  } else {
    doc["family"] = {{"constructor", in.constructor}, {"nu", in.nu}, {"a", in.a}};
  }
  auto int_or_auto = [](const std::string& s) -> json {
    if (s == "auto") return "auto";
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("expected an integer or 'auto', got '" + s + "'");
  };
  doc["N"] = int_or_auto(in.N);
  doc["j0"] = int_or_auto(in.j0);
  doc["samplers"] = in.samplers;
  if (common.seed) doc["seeds"] = {{"audit", *common.seed}, {"probes", *common.seed}, {"sampler", *common.seed}};
  // Paths on the command line are relative to the working directory.
  return parse_config(doc, std::filesystem::path{});
}

void emit(const json& doc, const Common& common) {
  const std::string text = doc.dump(1) + "\n";
  if (common.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(common.out, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + common.out);
  out << text;
}

json stage_json(const StageRecord& rec) {
  return {{"stage", rec.name}, {"gating_pass", rec.gating_pass}, {"body", rec.body}};
}

int gate(bool pass) { return pass ? kExitOk : kExitGating; }

struct Pipeline {
  FinitePointSpace space;
  std::optional<DyadicSystem> system;
  std::optional<OperatorFamily> family;

  explicit Pipeline(const ExperimentConfig& cfg) : space(load_space(cfg.space_path)) {
    system.emplace(build_dyadic(space, build_nets(space, cfg.net)));
  }
  void with_family(const ExperimentConfig& cfg) { family.emplace(make_family(space, *system, cfg)); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calderon reproducing formulae on finite quasi-metric measure spaces"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "override every seed");
  app.add_option("--threads", common.threads, "worker threads (fallback: CALDERON_LAB_THREADS)");
  app.add_option("--out", common.out, "output file (directory for 'run' and 'family build')");
  app.add_flag("--strict-geometry", common.strict_geometry, "enforce the strict net and sandwich constraints");
  app.fallthrough();

  Inputs in;
  int code = kExitOk;
  std::function<int()> action;

  auto* space_cmd = app.add_subcommand("space", "space audits")->require_subcommand(1);
  auto* space_audit = space_cmd->add_subcommand("audit", "quasi-metric, doubling and geometry audits");
  space_audit->add_option("space", in.space, "space JSON file")->required()->check(CLI::ExistingFile);
  space_audit->callback([&] {
    action = [&] {
      const auto cfg = make_config(in, common);
      const auto rec = space_stage(load_space(cfg.space_path), cfg);
      emit(stage_json(rec), common);
      return gate(rec.gating_pass);
    };
  });

  auto* dyadic_cmd = app.add_subcommand("dyadic", "dyadic cube systems")->require_subcommand(1);
  auto* dyadic_build = dyadic_cmd->add_subcommand("build", "nets, cubes and their checks");
  add_space(dyadic_build, in);
  dyadic_build->callback([&] {
    action = [&] {
      const auto cfg = make_config(in, common);
      Pipeline p(cfg);
      const auto rec = dyadic_stage(*p.system, cfg);
      json doc = stage_json(rec);
      doc["system"] = json::parse(p.system->to_json());
      emit(doc, common);
      return gate(rec.gating_pass);
    };
  });

  auto* family_cmd = app.add_subcommand("family", "operator families")->require_subcommand(1);
  auto* family_build = family_cmd->add_subcommand("build", "construct a family and save it under --out");
  add_space(family_build, in);
  add_family(family_build, in);
  family_build->callback([&] {
    action = [&] {
      if (common.out.empty()) throw ConfigError("family build needs --out <directory>");
      const auto cfg = make_config(in, common);
      Pipeline p(cfg);
      p.with_family(cfg);
      save_family(*p.family, common.out);
      json doc = {{"saved", common.out}, {"levels", p.family->levels}, {"warnings", p.family->warnings}};
      std::cout << doc.dump(1) << "\n";
      return kExitOk;
    };
  });
  auto* family_audit = family_cmd->add_subcommand("audit", "identities and ATI audits of a family");
  add_space(family_audit, in);
  add_family(family_audit, in);
  family_audit->callback([&] {
    action = [&] {
      const auto cfg = make_config(in, common);
      Pipeline p(cfg);
      p.with_family(cfg);
      const auto rec = family_stage(*p.family, *p.system, cfg);
      emit(stage_json(rec), common);
      return gate(rec.gating_pass);
    };
  });

  auto* calderon_cmd = app.add_subcommand("calderon", "reproducing formulae")->require_subcommand(1);
  for (const char* which : {"continuous", "discrete", "inhomogeneous"}) {
    auto* sub = calderon_cmd->add_subcommand(which, std::string(which) + " reproducing formulae");
    add_space(sub, in);
    add_family(sub, in);
    add_parameters(sub, in);
    sub->callback([&, which] {
      action = [&, which] {
        if (std::string(which) == "inhomogeneous") in.mode = "inhomogeneous";
        const auto cfg = make_config(in, common);
        Pipeline p(cfg);
        p.with_family(cfg);
        const auto params = resolve_parameters(*p.family, *p.system, cfg);
        const auto rec = formulae_stage(*p.family, *p.system, cfg, params, which);
        emit(stage_json(rec), common);
        return gate(rec.gating_pass);
      };
    });
  }

  auto* study_cmd = app.add_subcommand("study", "parameter studies")->require_subcommand(1);
  auto* study_decay = study_cmd->add_subcommand("decay", "decay table of one quantity over a sweep");
  add_space(study_decay, in);
  add_family(study_decay, in);
  add_parameters(study_decay, in);
  std::string quantity = "RN_l2";
  std::vector<int> sweep{0, 1, 2, 3, 4};
  study_decay->add_option("--quantity", quantity, "RN_l2 | RN_testspace_ratio | GN_l2 | CZ_CT_of_RN");
  study_decay->add_option("--sweep", sweep, "parameter values")->delimiter(',');
  study_decay->callback([&] {
    action = [&] {
      auto cfg = make_config(in, common);
      DecaySpec spec;
      try {
        spec.quantity = decay_quantity_from_string(quantity);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
      spec.sweep = sweep;
      cfg.decay = {spec};
      Pipeline p(cfg);
      p.with_family(cfg);
      const auto params = resolve_parameters(*p.family, *p.system, cfg);
      RunReport report;
      const auto rec = decay_stage(*p.family, *p.system, cfg, params, report.decay);
      emit(report.decay.front().to_json(), common);
      return gate(rec.gating_pass);
    };
  });

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "run a full experiment from a config file");
  run_cmd->add_option("config", config_path, "experiment config JSON")->required();
  run_cmd->callback([&] {
    action = [&] {
      auto cfg = load_config(config_path);
      if (common.seed) cfg.audit_seed = cfg.probe_seed = cfg.sampler_seed = *common.seed;
      if (common.strict_geometry) cfg.net.strict = true;
      if (!common.out.empty()) cfg.output_dir = common.out;
      const auto report = run_experiment(cfg);
      if (report.failure_code == kExitConfig) {
        for (const auto& s : report.stages) {
          if (s.status == "failed") std::cerr << "error: " << s.reason << "\n";
        }
        return kExitConfig;
      }
      write_artifacts(report, cfg);
      std::cout << json{{"name", cfg.name},
                        {"output", cfg.output_dir.string()},
                        {"report_hash", report.hash()},
                        {"exit_code", report.exit_code()},
                        {"gating_failures", report.gating_failures}}
                       .dump(1)
                << "\n";
      return report.exit_code();
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  std::size_t threads = 1;
  if (common.threads) {
    threads = *common.threads;
  } else if (const char* env = std::getenv("CALDERON_LAB_THREADS")) {
    try {
      threads = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      std::cerr << "error: CALDERON_LAB_THREADS must be a positive integer\n";
      return kExitConfig;
    }
  }
  if (threads == 0) {
    std::cerr << "error: thread count must be positive\n";
    return kExitConfig;
  }
  set_thread_count(threads);

  try {
    code = action();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SpaceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitGating;
  }
  return code;
}
