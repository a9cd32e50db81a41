// Command-line front end: run experiments, verify problem regularity, list
// problems and report the adjoint evaluations saved by loping.

#include "lk/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

void print_rows(const lk::Summary& summary)
{
  for (const auto& r : summary.rows)
    std::cout << r.solver << "  delta_max=" << r.delta_max << "  seed=" << r.seed
              << "  n*=" << r.n_star << " (" << r.reason << ")"
              << "  error=" << r.terminal_error_to_exact
              << "  residual/threshold=" << r.terminal_max_residual_ratio
              << "  adjoints=" << r.adjoint_evals << '\n';
}

int cmd_run(const std::string& config)
{
  const auto spec = lk::load_spec(config);
  const auto summary = lk::run_experiment(spec);
  print_rows(summary);
  std::cout << "wrote " << lk::resolve_output_dir(spec).string() << "/summary.json\n";
  for (const auto& v : summary.violations)
    std::cerr << "invariant violated: " << v << '\n';
  return summary.ok() ? 0 : 1;
}

int cmd_verify(const std::string& id, std::uint64_t seed)
{
  const auto problem = lk::make_problem(id);
  const auto result = lk::verify_problem(problem, seed);
  std::cout << problem.id << ": N=" << problem.system.size() << " dim=" << problem.system.dim_x()
            << " rho=" << problem.rho << " eta_cert=" << problem.eta_cert << '\n';
  for (const auto& r : result.reports)
    std::cout << "  block " << r.block_index << "  adjoint_err=" << r.adjoint_error
              << "  taylor_slope=" << r.frechet_order << "  norm=" << r.norm_estimate
              << "  eta=" << r.eta_estimate << '\n';
  for (const auto& f : result.failures)
    std::cerr << "FAILED " << f << '\n';
  std::cout << (result.ok() ? "all checks passed" : "verification failed") << '\n';
  return result.ok() ? 0 : 1;
}

int cmd_savings(const std::string& config)
{
  auto llk = lk::load_spec(config);
  llk.solver = lk::SolverKind::llk;
  auto classical = llk;
  classical.solver = lk::SolverKind::classical_lk;
  const auto report = lk::loping_savings(llk, classical);
  for (const auto& r : report.rows)
    std::cout << "delta_max=" << r.delta_max << "  seed=" << r.seed << "  cycles=" << r.cycles
              << "  llk=" << r.llk_total << "  classical=" << r.classical_total
              << "  first_loped=" << r.first_loped_index << '\n';

  const auto dir = lk::resolve_output_dir(llk);
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "savings.json");
  if (!out)
    throw std::runtime_error("cannot write " + (dir / "savings.json").string());
  out << lk::to_json(report).dump(2) << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Kaczmarz-type iterative regularization for systems of ill-posed equations"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "run the (noise, seed) grid of a config file");
  run->add_option("--config", config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string problem;
  std::uint64_t seed = 0;
  auto* verify = app.add_subcommand("verify", "check adjoint, derivative, norms and cone constant");
  verify->add_option("--problem", problem, "problem id")->required();
  verify->add_option("--seed", seed, "sampling seed");

  auto* list = app.add_subcommand("list-problems", "print the bundled problem ids");

  auto* savings = app.add_subcommand("savings", "adjoint evaluations of lLK vs classical LK");
  savings->add_option("--config", config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config);
    if (verify->parsed())
      return cmd_verify(problem, seed);
    if (list->parsed()) {
      for (const auto& id : lk::problem_ids())
        std::cout << id << '\n';
      return 0;
    }
    if (savings->parsed())
      return cmd_savings(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
