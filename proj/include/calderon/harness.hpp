#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "calderon/dyadic.hpp"
#include "calderon/engine.hpp"
#include "calderon/family.hpp"

namespace calderon {

/// Invalid configuration or unreadable input; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitGating = 1;
inline constexpr int kExitConfig = 2;

struct DecaySpec {
  DecayQuantity quantity = DecayQuantity::RN_l2;
  std::vector<int> sweep;
  /// A non-degenerate table that is not strictly decreasing fails the run.
  bool gating = false;
};

enum class FamilyConstructor { Haar, Smoothed, Load };

struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path space_path;
  NetOptions net;
  FamilyConstructor constructor = FamilyConstructor::Smoothed;
  SmoothingParams smoothing;
  std::filesystem::path family_path;  // Load only
  Mode mode = Mode::Homogeneous;
  std::optional<int> N;   // empty = auto
  std::optional<int> j0;  // empty = auto
  std::vector<Sampler> samplers{Sampler::Center};

  std::uint64_t audit_seed = 7;
  std::uint64_t probe_seed = 11;
  std::uint64_t sampler_seed = 3;

  double identity_tol = 1e-10;
  double neumann_tol = 1e-10;
  double reconstruction_l2 = 1e-6;
  double reconstruction_lp = 1e-5;

  std::size_t triple_budget = 20000;
  std::size_t pair_budget = 4096;
  std::size_t random_probes = 8;

  std::vector<DecaySpec> decay;
  std::vector<std::string> stages{"space", "dyadic", "family", "formulae", "decay"};
  std::filesystem::path output_dir = "out";

  bool has_stage(const std::string& stage) const;
  /// Canonical echo of every resolved field (paths as given).
  nlohmann::json to_json() const;
};

/// Validates a parsed document; relative paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

struct StageRecord {
  std::string name;
  std::string status = "ran";  // ran | skipped | failed
  std::string reason;
  nlohmann::json body = nlohmann::json::object();
  bool gating_pass = true;
  double seconds = 0.0;
};

struct RunReport {
  nlohmann::json config;
  std::vector<StageRecord> stages;
  std::vector<DecayTable> decay;
  /// Nonzero when a stage threw: 2 for input errors, 1 otherwise.
  int failure_code = 0;
  std::vector<std::string> gating_failures;

  /// Full document; timings appear only under "timings".
  nlohmann::json to_json(bool include_timings = true) const;
  /// SHA-256 of the timing-free document.
  std::string hash() const;
  int exit_code() const;
};

// Individual stages, shared by run_experiment and the CLI subcommands.
StageRecord space_stage(const FinitePointSpace& space, const ExperimentConfig& config);
StageRecord dyadic_stage(const DyadicSystem& system, const ExperimentConfig& config);
OperatorFamily make_family(const FinitePointSpace& space, const DyadicSystem& system,
                           const ExperimentConfig& config);
StageRecord family_stage(const OperatorFamily& family, const DyadicSystem& system,
                         const ExperimentConfig& config);
/// N and j0 from the config, with automatic choices filled in.
AutoChoice resolve_parameters(const OperatorFamily& family, const DyadicSystem& system,
                              const ExperimentConfig& config);
/// which: "continuous", "discrete", "inhomogeneous" or "all" (what run_experiment uses).
StageRecord formulae_stage(const OperatorFamily& family, const DyadicSystem& system,
                           const ExperimentConfig& config, const AutoChoice& params,
                           const std::string& which = "all");
StageRecord decay_stage(const OperatorFamily& family, const DyadicSystem& system,
                        const ExperimentConfig& config, const AutoChoice& params,
                        std::vector<DecayTable>& tables);

/// Runs the configured stages in order. A stage that throws stops the run and
/// is recorded as failed; the remaining stages are marked skipped.
RunReport run_experiment(const ExperimentConfig& config);

/// report.json, summary.csv, decay_<quantity>.csv and manifest.json (with
/// SHA-256 of every file) in config.output_dir. Returns the written paths.
std::vector<std::filesystem::path> write_artifacts(const RunReport& report, const ExperimentConfig& config);

/// One CSV per decay table: parameter,value,fit.
std::vector<std::filesystem::path> emit_plot_data(const RunReport& report, const std::filesystem::path& dir);

/// 17 significant digits: enough for binary64 to round-trip.
std::string format_g17(double value);
std::string sha256_hex(const std::string& bytes);

}  // namespace calderon
