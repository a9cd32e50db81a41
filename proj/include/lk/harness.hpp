#pragma once

#include "lk/embedded.hpp"
#include "lk/problems.hpp"
#include "lk/verify.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace lk {

enum class SolverKind { llk, classical_lk, landweber, elk };
enum class LambdaMode { exact, half };

SolverKind parse_solver(std::string_view name);
const char* to_string(SolverKind kind);

/// Environment variable that relocates relative output directories.
inline constexpr const char* kOutputRootEnv = "LK_OUTPUT_ROOT";

/**
 * One experiment: a problem, a solver, and the (noise, seed) grid to run.
 *
 * Each entry of delta_sets is one noise configuration: either N per-equation
 * levels or a single level used for every equation.
 */
struct ExperimentSpec {
  std::string problem_id;
  SolverKind solver = SolverKind::llk;
  double tau = 3.0;
  std::vector<std::vector<double>> delta_sets;
  std::vector<std::uint64_t> seeds;
  LambdaMode lambda_mode = LambdaMode::exact;
  double epsilon_scale = 1.0; ///< eps(delta) = epsilon_scale * delta
  BalancingCriterion balancing = BalancingCriterion::gradient_norm;
  std::int64_t max_cycles = 10000;
  double fill = 0.9;
  std::filesystem::path output_dir = "lk-out";
};

/// Parses a config document. Real-valued fields are decimal strings (JSON
/// numbers are accepted too); see README for the schema.
ExperimentSpec parse_spec(const nlohmann::json& doc);
ExperimentSpec load_spec(const std::filesystem::path& file);

/// output_dir, placed under $LK_OUTPUT_ROOT when that is set and the path is relative.
std::filesystem::path resolve_output_dir(const ExperimentSpec& spec);

struct SummaryRow {
  std::string solver;
  double delta_max = 0;
  std::uint64_t seed = 0;
  std::int64_t n_star = 0;
  std::string reason;
  double terminal_error_to_exact = 0;
  /// max_i r_i / (tau delta^i); eLK uses the component residuals over tau * delta_max
  double terminal_max_residual_ratio = 0;
  std::int64_t adjoint_evals = 0;
  double wall_time = 0;
  std::string trace_file;
};

struct Summary {
  std::string problem_id;
  std::vector<SummaryRow> rows;
  std::vector<std::string> violations; ///< failed post-hoc invariants
  bool ok() const { return violations.empty(); }
};

/// Result of one (deltas, seed) run, before anything is written.
struct RunRecord {
  SummaryRow row;
  std::vector<StepRecord<double>> trace;
};

/// Expands a delta set to one level per equation.
std::vector<double> expand_deltas(const std::vector<double>& set, std::size_t count);

RunRecord run_single(const TestProblem& problem, const ExperimentSpec& spec,
                     const std::vector<double>& deltas, std::uint64_t seed);

/// Post-hoc checks computed from a run's trace and summary row.
std::vector<std::string> check_run_invariants(SolverKind kind, std::size_t count,
                                              const RunRecord& run);

/// Runs the whole grid, writing one CSV trace per run and summary.json.
Summary run_experiment(const ExperimentSpec& spec);

inline constexpr std::string_view kTraceHeader =
    "n,phase,active_index,omega,residual_norm,threshold,error_to_exact,adjoint_evals_cum";

void write_trace_csv(std::ostream& out, const std::vector<StepRecord<double>>& trace);

nlohmann::json to_json(const Summary& summary);

struct SavingsRow {
  double delta_max = 0;
  std::uint64_t seed = 0;
  std::int64_t cycles = 0;
  std::vector<std::int64_t> llk_per_cycle;
  std::vector<std::int64_t> classical_per_cycle;
  std::int64_t llk_total = 0;
  std::int64_t classical_total = 0;
  /// Equation whose update was first skipped, -1 when none was.
  int first_loped_index = -1;
};

struct SavingsReport {
  std::string problem_id;
  std::vector<SavingsRow> rows;
};

/// Adjoint evaluations per cycle of lLK against classical LK run for the same
/// number of cycles (discrepancy stop disabled). The two specs must share the
/// problem, noise grid and seeds.
SavingsReport loping_savings(const ExperimentSpec& llk_spec, const ExperimentSpec& classical_spec);

nlohmann::json to_json(const SavingsReport& report);

struct VerificationSummary {
  std::vector<RegularityReport<double>> reports;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Regularity suite on B_rho(x0): adjoint <= 1e-10, Taylor slope in [1.7, 2.3]
/// or exact, block norms <= 1 + 1e-8, sampled eta < 0.45.
VerificationSummary verify_problem(const TestProblem& problem, std::uint64_t seed = 0);

} // namespace lk
