#include "lk/harness.hpp"

#include <array>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

namespace lk {

namespace {

using nlohmann::json;

double parse_real(const json& value, std::string_view field)
{
  if (value.is_number())
    return value.get<double>();
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    double out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc{} && p == s.data() + s.size() && std::isfinite(out))
      return out;
  }
  throw std::invalid_argument("config field '" + std::string(field) +
                              "' must be a decimal number, got " + value.dump());
}

std::uint64_t parse_uint(const json& value, std::string_view field)
{
  if (value.is_number_unsigned())
    return value.get<std::uint64_t>();
  if (value.is_number_integer() && value.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(value.get<std::int64_t>());
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc{} && p == s.data() + s.size())
      return out;
  }
  throw std::invalid_argument("config field '" + std::string(field) +
                              "' must be a non-negative integer, got " + value.dump());
}

std::vector<double> parse_real_list(const json& value, std::string_view field)
{
  if (!value.is_array() || value.empty())
    throw std::invalid_argument("config field '" + std::string(field) +
                                "' must be a non-empty list");
  std::vector<double> out;
  for (const auto& v : value)
    out.push_back(parse_real(v, field));
  return out;
}

void append_number(std::string& out, double v)
{
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), p);
}

double safe_ratio(double r, double threshold)
{
  if (threshold > 0)
    return r / threshold;
  return r > 0 ? std::numeric_limits<double>::infinity() : 0.0;
}

std::vector<std::int64_t> per_cycle_adjoints(const std::vector<StepRecord<double>>& trace,
                                             std::size_t count)
{
  std::vector<std::int64_t> out;
  for (const auto& rec : trace) {
    const auto cycle = static_cast<std::size_t>(rec.n) / count;
    if (out.size() <= cycle)
      out.resize(cycle + 1, 0);
    out[cycle] += rec.omega;
  }
  return out;
}

void ensure_tau(const ExperimentSpec& spec, const TestProblem& problem)
{
  const double bound = check_tau(problem.eta_cert);
  if (!(spec.tau > bound))
    throw std::invalid_argument("tau = " + std::to_string(spec.tau) + " must exceed " +
                                std::to_string(bound) + " for " + problem.id +
                                " (eta = " + std::to_string(problem.eta_cert) + ")");
}

std::filesystem::path prepare_output_dir(const ExperimentSpec& spec)
{
  const auto dir = resolve_output_dir(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

void write_json(const std::filesystem::path& file, const json& doc)
{
  std::ofstream out(file);
  if (!out)
    throw std::runtime_error("cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

} // namespace

SolverKind parse_solver(std::string_view name)
{
  if (name == "llk")
    return SolverKind::llk;
  if (name == "classical_lk")
    return SolverKind::classical_lk;
  if (name == "landweber")
    return SolverKind::landweber;
  if (name == "elk")
    return SolverKind::elk;
  throw std::invalid_argument("unknown solver '" + std::string(name) + "'");
}

const char* to_string(SolverKind kind)
{
  switch (kind) {
  case SolverKind::llk: return "llk";
  case SolverKind::classical_lk: return "classical_lk";
  case SolverKind::landweber: return "landweber";
  case SolverKind::elk: return "elk";
  }
  return "?";
}

ExperimentSpec parse_spec(const json& doc)
{
  if (!doc.is_object())
    throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known{
      "problem_id", "solver",     "tau",       "deltas",     "delta_ladder", "seeds",
      "lambda_mode", "epsilon",   "balancing", "max_cycles", "fill",         "output_dir"};
  for (const auto& [key, _] : doc.items())
    if (!known.contains(key))
      throw std::invalid_argument("unknown config field '" + key + "'");

  ExperimentSpec spec;
  if (!doc.contains("problem_id") || !doc["problem_id"].is_string())
    throw std::invalid_argument("config field 'problem_id' is required");
  spec.problem_id = doc["problem_id"].get<std::string>();
  if (!doc.contains("solver") || !doc["solver"].is_string())
    throw std::invalid_argument("config field 'solver' is required");
  spec.solver = parse_solver(doc["solver"].get<std::string>());
  if (!doc.contains("tau"))
    throw std::invalid_argument("config field 'tau' is required");
  spec.tau = parse_real(doc["tau"], "tau");

  const bool has_deltas = doc.contains("deltas");
  const bool has_ladder = doc.contains("delta_ladder");
  if (has_deltas == has_ladder)
    throw std::invalid_argument("config needs exactly one of 'deltas' and 'delta_ladder'");
  if (has_deltas)
    spec.delta_sets.push_back(parse_real_list(doc["deltas"], "deltas"));
  else
    for (double d : parse_real_list(doc["delta_ladder"], "delta_ladder"))
      spec.delta_sets.push_back({d});
  for (const auto& set : spec.delta_sets)
    for (double d : set)
      if (d < 0)
        throw std::invalid_argument("noise levels must be non-negative");

  if (!doc.contains("seeds") || !doc["seeds"].is_array() || doc["seeds"].empty())
    throw std::invalid_argument("config field 'seeds' must be a non-empty list");
  for (const auto& s : doc["seeds"])
    spec.seeds.push_back(parse_uint(s, "seeds"));

  if (doc.contains("lambda_mode")) {
    const auto mode = doc["lambda_mode"].get<std::string>();
    if (mode == "exact")
      spec.lambda_mode = LambdaMode::exact;
    else if (mode == "half")
      spec.lambda_mode = LambdaMode::half;
    else
      throw std::invalid_argument("lambda_mode must be 'exact' or 'half'");
  }
  if (doc.contains("epsilon")) {
    const auto& eps = doc["epsilon"];
    if (eps.is_string() && eps.get<std::string>() == "identity")
      spec.epsilon_scale = 1.0;
    else if (eps.is_object() && eps.size() == 1 && eps.contains("scaled"))
      spec.epsilon_scale = parse_real(eps["scaled"], "epsilon.scaled");
    else
      throw std::invalid_argument("epsilon must be \"identity\" or {\"scaled\": \"<c>\"}");
    if (!(spec.epsilon_scale > 0))
      throw std::invalid_argument("epsilon scale must be positive");
  }
  if (doc.contains("balancing")) {
    const auto crit = doc["balancing"].get<std::string>();
    if (crit == "gradient_norm")
      spec.balancing = BalancingCriterion::gradient_norm;
    else if (crit == "difference_residual")
      spec.balancing = BalancingCriterion::difference_residual;
    else
      throw std::invalid_argument("balancing must be 'gradient_norm' or 'difference_residual'");
  }
  if (doc.contains("max_cycles")) {
    spec.max_cycles = static_cast<std::int64_t>(parse_uint(doc["max_cycles"], "max_cycles"));
    if (spec.max_cycles < 1)
      throw std::invalid_argument("max_cycles must be positive");
  }
  if (doc.contains("fill"))
    spec.fill = parse_real(doc["fill"], "fill");
  if (doc.contains("output_dir"))
    spec.output_dir = doc["output_dir"].get<std::string>();
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& file)
{
  std::ifstream in(file);
  if (!in)
    throw std::runtime_error("cannot read config " + file.string());
  return parse_spec(json::parse(in));
}

std::filesystem::path resolve_output_dir(const ExperimentSpec& spec)
{
  const char* root = std::getenv(kOutputRootEnv);
  if (root && *root && spec.output_dir.is_relative())
    return std::filesystem::path(root) / spec.output_dir;
  return spec.output_dir;
}

std::vector<double> expand_deltas(const std::vector<double>& set, std::size_t count)
{
  if (set.size() == 1)
    return std::vector<double>(count, set.front());
  if (set.size() != count)
    throw std::invalid_argument("noise set has " + std::to_string(set.size()) +
                                " entries, problem has " + std::to_string(count) + " equations");
  return set;
}

RunRecord run_single(const TestProblem& problem, const ExperimentSpec& spec,
                     const std::vector<double>& deltas, std::uint64_t seed)
{
  const auto& system = problem.system;
  const std::size_t count = system.size();
  const NoisySample sample = add_noise(problem, expand_deltas(deltas, count), spec.fill, seed);

  RunRecord run;
  run.row.solver = to_string(spec.solver);
  run.row.delta_max = sample.noise.delta_max();
  run.row.seed = seed;

  const auto start = std::chrono::steady_clock::now();
  Vector<double> final_point;
  double ratio = 0;
  if (spec.solver == SolverKind::elk) {
    EmbeddedConfig<double> cfg;
    cfg.tau = spec.tau;
    cfg.lambda = spec.lambda_mode == LambdaMode::exact
                     ? choose_lambda<double>(static_cast<Index>(count))
                     : 0.5;
    cfg.epsilon_fn = [c = spec.epsilon_scale](double d) { return c * d; };
    cfg.max_cycles = spec.max_cycles;
    cfg.eta_assumed = problem.eta_cert;
    cfg.balancing = spec.balancing;
    cfg.ball_radius = problem.rho;
    cfg.record_error_to = problem.x_exact;
    auto result = run_elk(system, problem.x0, sample.data, sample.noise, cfg);
    final_point = average_components(result.final_iterate);
    for (std::size_t i = 0; i < count; ++i) {
      const double r = (system[i].apply(result.final_iterate.col(static_cast<Index>(i))) -
                        sample.data[i])
                           .norm();
      ratio = std::max(ratio, safe_ratio(r, spec.tau * sample.noise.delta_max()));
    }
    run.row.n_star = result.termination_index;
    run.row.reason = to_string(result.reason);
    run.trace = std::move(result.trace);
  } else {
    SolverConfig<double> cfg(spec.tau, problem.eta_cert, spec.max_cycles);
    cfg.record_error_to = problem.x_exact;
    cfg.ball_radius = problem.rho;
    KaczmarzResult<double> result =
        spec.solver == SolverKind::llk
            ? run_llk(system, problem.x0, sample.data, sample.noise, cfg)
        : spec.solver == SolverKind::classical_lk
            ? run_classical_lk(system, problem.x0, sample.data, sample.noise, cfg)
            : run_landweber(system, problem.x0, sample.data, sample.noise, cfg);
    final_point = result.final_iterate;
    for (std::size_t i = 0; i < count; ++i) {
      const double r = (system[i].apply(final_point) - sample.data[i]).norm();
      ratio = std::max(ratio, safe_ratio(r, spec.tau * sample.noise[i]));
    }
    run.row.n_star = result.termination_index;
    run.row.reason = to_string(result.reason);
    run.trace = std::move(result.trace);
  }
  run.row.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  run.row.terminal_error_to_exact = (final_point - problem.x_exact).norm();
  run.row.terminal_max_residual_ratio = ratio;
  run.row.adjoint_evals = run.trace.empty() ? 0 : run.trace.back().adjoint_evals_cum;
  return run;
}

std::vector<std::string> check_run_invariants(SolverKind kind, std::size_t count,
                                              const RunRecord& run)
{
  std::vector<std::string> out;
  const std::string tag = std::string(to_string(kind)) + " delta=" +
                          std::to_string(run.row.delta_max) + " seed=" +
                          std::to_string(run.row.seed) + ": ";
  const bool stationary = run.row.reason == to_string(Termination::stationary_cycle);
  if (run.trace.empty())
    out.push_back(tag + "empty trace");

  if (kind == SolverKind::llk) {
    std::int64_t evals = 0;
    for (const auto& rec : run.trace) {
      if (rec.omega != (rec.residual_norm > rec.threshold ? 1 : 0))
        out.push_back(tag + "omega inconsistent with residual at n=" + std::to_string(rec.n));
      evals += rec.omega;
      if (rec.adjoint_evals_cum != evals)
        out.push_back(tag + "adjoint count mismatch at n=" + std::to_string(rec.n));
    }
    if (stationary) {
      if (run.row.n_star % static_cast<std::int64_t>(count) != 0)
        out.push_back(tag + "n_star is not a multiple of N");
      for (std::size_t k = 0; k < count && k < run.trace.size(); ++k)
        if (run.trace[run.trace.size() - 1 - k].omega != 0)
          out.push_back(tag + "final cycle is not stationary");
    }
  }
  if (kind == SolverKind::elk && stationary && run.trace.size() >= 2) {
    if (run.trace[run.trace.size() - 1].omega || run.trace[run.trace.size() - 2].omega)
      out.push_back(tag + "final eLK cycle has a nonzero weight");
  }
  if ((kind == SolverKind::llk || kind == SolverKind::elk) && stationary &&
      !(run.row.terminal_max_residual_ratio <= 1.0))
    out.push_back(tag + "terminal residual ratio " +
                  std::to_string(run.row.terminal_max_residual_ratio) + " exceeds 1");
  return out;
}

Summary run_experiment(const ExperimentSpec& spec)
{
  const TestProblem problem = make_problem(spec.problem_id);
  ensure_tau(spec, problem);
  for (const auto& set : spec.delta_sets)
    expand_deltas(set, problem.system.size());
  const auto dir = prepare_output_dir(spec);

  Summary summary;
  summary.problem_id = problem.id;
  for (std::size_t d = 0; d < spec.delta_sets.size(); ++d) {
    for (std::uint64_t seed : spec.seeds) {
      RunRecord run = run_single(problem, spec, spec.delta_sets[d], seed);
      const std::string name = std::string("trace_") + to_string(spec.solver) + "_d" +
                               std::to_string(d) + "_s" + std::to_string(seed) + ".csv";
      std::ofstream out(dir / name);
      if (!out)
        throw std::runtime_error("cannot write " + (dir / name).string());
      write_trace_csv(out, run.trace);
      run.row.trace_file = name;
      for (auto& v : check_run_invariants(spec.solver, problem.system.size(), run))
        summary.violations.push_back(std::move(v));
      summary.rows.push_back(std::move(run.row));
    }
  }
  write_json(dir / "summary.json", to_json(summary));
  return summary;
}

void write_trace_csv(std::ostream& out, const std::vector<StepRecord<double>>& trace)
{
  std::string buf(kTraceHeader);
  buf += '\n';
  for (const auto& rec : trace) {
    buf += std::to_string(rec.n);
    buf += ',';
    buf += to_string(rec.phase);
    buf += ',';
    buf += std::to_string(rec.active_index);
    buf += ',';
    buf += std::to_string(rec.omega);
    buf += ',';
    append_number(buf, rec.residual_norm);
    buf += ',';
    append_number(buf, rec.threshold);
    buf += ',';
    if (rec.error_to_ref)
      append_number(buf, *rec.error_to_ref);
    buf += ',';
    buf += std::to_string(rec.adjoint_evals_cum);
    buf += '\n';
  }
  out << buf;
}

nlohmann::json to_json(const Summary& summary)
{
  json rows = json::array();
  for (const auto& r : summary.rows)
    rows.push_back({{"solver", r.solver},
                    {"delta_max", r.delta_max},
                    {"seed", r.seed},
                    {"n_star", r.n_star},
                    {"reason", r.reason},
                    {"terminal_error_to_exact", r.terminal_error_to_exact},
                    {"terminal_max_residual_ratio", r.terminal_max_residual_ratio},
                    {"adjoint_evals", r.adjoint_evals},
                    {"wall_time", r.wall_time},
                    {"trace_file", r.trace_file}});
  return {{"problem_id", summary.problem_id},
          {"rows", rows},
          {"invariants_ok", summary.ok()},
          {"violations", summary.violations}};
}

SavingsReport loping_savings(const ExperimentSpec& llk_spec, const ExperimentSpec& classical_spec)
{
  if (llk_spec.problem_id != classical_spec.problem_id ||
      llk_spec.delta_sets != classical_spec.delta_sets || llk_spec.seeds != classical_spec.seeds)
    throw std::invalid_argument("loping_savings: specs must share problem, noise and seeds");

  const TestProblem problem = make_problem(llk_spec.problem_id);
  ensure_tau(llk_spec, problem);
  ensure_tau(classical_spec, problem);
  const auto& system = problem.system;
  const std::size_t count = system.size();

  SavingsReport report;
  report.problem_id = problem.id;
  for (const auto& set : llk_spec.delta_sets) {
    for (std::uint64_t seed : llk_spec.seeds) {
      const NoisySample sample =
          add_noise(problem, expand_deltas(set, count), llk_spec.fill, seed);

      SolverConfig<double> llk_cfg(llk_spec.tau, problem.eta_cert, llk_spec.max_cycles);
      llk_cfg.ball_radius = problem.rho;
      const auto llk = run_llk(system, problem.x0, sample.data, sample.noise, llk_cfg);

      SavingsRow row;
      row.delta_max = sample.noise.delta_max();
      row.seed = seed;
      row.llk_per_cycle = per_cycle_adjoints(llk.trace, count);
      row.cycles = static_cast<std::int64_t>(row.llk_per_cycle.size());

      SolverConfig<double> cl_cfg(classical_spec.tau, problem.eta_cert, row.cycles);
      cl_cfg.ball_radius = problem.rho;
      cl_cfg.discrepancy_stop = false;
      const auto classical =
          run_classical_lk(system, problem.x0, sample.data, sample.noise, cl_cfg);
      row.classical_per_cycle = per_cycle_adjoints(classical.trace, count);

      row.llk_total = llk.trace.empty() ? 0 : llk.trace.back().adjoint_evals_cum;
      row.classical_total = classical.trace.empty() ? 0 : classical.trace.back().adjoint_evals_cum;
      for (const auto& rec : llk.trace)
        if (rec.omega == 0) {
          row.first_loped_index = rec.active_index;
          break;
        }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

nlohmann::json to_json(const SavingsReport& report)
{
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"delta_max", r.delta_max},
                    {"seed", r.seed},
                    {"cycles", r.cycles},
                    {"llk_per_cycle", r.llk_per_cycle},
                    {"classical_per_cycle", r.classical_per_cycle},
                    {"llk_total", r.llk_total},
                    {"classical_total", r.classical_total},
                    {"skipped", r.classical_total - r.llk_total},
                    {"first_loped_index", r.first_loped_index}});
  return {{"problem_id", report.problem_id}, {"rows", rows}};
}

VerificationSummary verify_problem(const TestProblem& problem, std::uint64_t seed)
{
  VerificationSummary out;
  for (std::size_t i = 0; i < problem.system.size(); ++i) {
    auto rep = regularity_report(problem.system[i], i, problem.x0, problem.rho, seed + i);
    const std::string tag = "block " + std::to_string(i) + ": ";
    if (!(rep.adjoint_error <= 1e-10))
      out.failures.push_back(tag + "adjoint error " + std::to_string(rep.adjoint_error));
    const bool exact = std::isinf(rep.frechet_order) && rep.frechet_order > 0;
    if (!exact && !(rep.frechet_order >= 1.7 && rep.frechet_order <= 2.3))
      out.failures.push_back(tag + "Taylor slope " + std::to_string(rep.frechet_order));
    if (!(rep.norm_estimate <= 1 + 1e-8))
      out.failures.push_back(tag + "derivative norm " + std::to_string(rep.norm_estimate));
    if (!(rep.eta_estimate < 0.45))
      out.failures.push_back(tag + "cone constant " + std::to_string(rep.eta_estimate));
    out.reports.push_back(rep);
  }
  return out;
}

} // namespace lk
