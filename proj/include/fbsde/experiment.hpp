#pragma once

// Experiment configuration documents, orchestration and report emission.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fbsde/lq_control.hpp"
#include "fbsde/model.hpp"
#include "fbsde/solver.hpp"

namespace fbsde {

inline constexpr std::string_view kArtifactVersion = "0.1.0";
inline constexpr const char* kOutputDirEnv = "FBSDE_LAB_OUT";

enum class ExperimentKind { Solve, Field, LpVerify, Stability, Lq, Oracle, KpGate };

std::string_view to_string(ExperimentKind kind);
std::optional<ExperimentKind> parse_kind(std::string_view name);

struct GridSettings {
  double t0 = 0.0;
  double T = 1.0;
  std::size_t n_steps = 64;
};

struct LpSettings {
  std::vector<double> p_values{4.0};
  std::vector<double> xi_ladder{0.0, 1.0, 2.0, 4.0};
  std::vector<double> offsets{1.0};  // xi' - xi for stability runs
  std::size_t n_probes = 2000;
  double probe_radius = 2.0;
};

struct KpSettings {
  double p = 2.0;
  std::optional<double> bdg_upper;  // default 4p
  std::optional<double> bdg_lower;  // default 1
  double L_sigma = 0.0;
  double K = 0.0;
  std::optional<double> sqrt_C1;
};

struct LqSettings {
  double epsilon = 0.1;
  int n_perturbations = 20;
  std::size_t certificate_samples = 10000;
  std::vector<double> xi_prime;  // empty: the zero vector
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Solve;
  std::uint64_t seed = 0;
  nlohmann::json problem;  // canonical problem section (defaults filled)
  GridSettings grid;
  std::size_t n_paths = 1000;
  SolverParams solver;
  LpSettings lp;
  KpSettings kp;
  LqSettings lq;
  std::string output_dir;
};

/// Parses and validates a JSON configuration document. Unknown keys are
/// rejected by name; syntax errors carry line and column.
ExperimentConfig parse_config(std::string_view document);

nlohmann::json to_json(const ExperimentConfig& config);
std::string emit_config(const ExperimentConfig& config);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// Builds the FBSDE named by a canonical problem section.
FBSDEProblem problem_from_config(const nlohmann::json& problem, const GridSettings& grid);
LQSpec lq_spec_from_config(const nlohmann::json& problem, const GridSettings& grid);

struct RunReport {
  nlohmann::json document;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Runs the experiment and writes report.json plus the kind's CSV tables
/// into config.output_dir. Module errors are rethrown with the experiment
/// kind prepended, keeping their type.
RunReport run_experiment(const ExperimentConfig& config);

}  // namespace fbsde
