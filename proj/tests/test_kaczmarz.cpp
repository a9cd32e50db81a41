#include "lk/kaczmarz.hpp"

#include <gtest/gtest.h>

#include <cmath>

using lk::BlockData;
using lk::Matrix;
using lk::NoiseLevels;
using lk::OperatorBlock;
using lk::OperatorSystem;
using lk::SolverConfig;
using lk::Vector;

namespace {

OperatorSystem<double> coordinate_system(int dim)
{
  std::vector<OperatorBlock<double>> blocks;
  for (int i = 0; i < dim; ++i)
    blocks.push_back(OperatorBlock<double>::from_matrix(Matrix<double>::Identity(dim, dim).row(i)));
  return OperatorSystem<double>(std::move(blocks));
}

struct RandomSystem {
  OperatorSystem<double> system;
  Vector<double> x_exact;
  BlockData<double> exact;
};

// N blocks of shape rows x dim with unit spectral norm and a smoothing decay
// in the column scaling, so the stacked problem is moderately ill-conditioned.
RandomSystem random_system(int count, int rows, int dim, std::uint64_t seed)
{
  lk::Rng rng(seed);
  std::vector<OperatorBlock<double>> blocks;
  BlockData<double> exact;
  const Vector<double> x = lk::gaussian_vector<double>(dim, rng);
  for (int i = 0; i < count; ++i) {
    Matrix<double> a = Matrix<double>::NullaryExpr(rows, dim, [&] {
      return std::normal_distribution<double>()(rng);
    });
    for (int k = 0; k < dim; ++k)
      a.col(k) /= 1.0 + k;
    a /= Eigen::JacobiSVD<Matrix<double>>(a).singularValues()(0);
    exact.push_back(a * x);
    blocks.push_back(OperatorBlock<double>::from_matrix(a));
  }
  return {OperatorSystem<double>(std::move(blocks)), x, exact};
}

BlockData<double> perturb(const BlockData<double>& exact, const NoiseLevels<double>& noise,
                          std::uint64_t seed)
{
  lk::Rng rng(seed);
  BlockData<double> out;
  for (std::size_t i = 0; i < exact.size(); ++i)
    out.push_back(exact[i] + 0.9 * noise[i] * lk::random_unit_vector<double>(exact[i].size(), rng));
  return out;
}

} // namespace

TEST(LopWeight, StrictThreshold)
{
  EXPECT_EQ(lk::lop_weight(0.031, 3.0, 0.01), 1);
  EXPECT_EQ(lk::lop_weight(0.03, 3.0, 0.01), 0);
  EXPECT_EQ(lk::lop_weight(0.0, 3.0, 0.0), 0);
  EXPECT_EQ(lk::lop_weight(1e-300, 3.0, 0.0), 1);
}

TEST(CheckTau, Values)
{
  EXPECT_DOUBLE_EQ(lk::check_tau(0.0), 2.0);
  EXPECT_DOUBLE_EQ(lk::check_tau(0.25), 5.0);
  EXPECT_THROW(lk::check_tau(0.5), std::domain_error);
  EXPECT_THROW(lk::check_tau(-0.1), std::domain_error);
}

TEST(SolverConfig, Validation)
{
  EXPECT_THROW(SolverConfig<double>(2.0), std::invalid_argument);
  EXPECT_THROW(SolverConfig<double>(5.0, 0.25), std::invalid_argument);
  EXPECT_NO_THROW(SolverConfig<double>(5.01, 0.25));
  EXPECT_THROW(SolverConfig<double>(3.0, 0.0, 0), std::invalid_argument);
}

TEST(NoiseLevels, Validation)
{
  EXPECT_THROW(NoiseLevels<double>({}), std::invalid_argument);
  EXPECT_THROW(NoiseLevels<double>({0.1, -0.1}), std::invalid_argument);
  EXPECT_THROW(NoiseLevels<double>({NAN}), std::invalid_argument);
  const NoiseLevels<double> n({0.1, 0.3, 0.2});
  EXPECT_EQ(n.delta_max(), 0.3);
  EXPECT_EQ(n.delta_min(), 0.1);
}

TEST(LlkStep, ScalarIdentity)
{
  // F(x) = x, y = 0, x0 = 1: x1 = 1 - 1 * (1 - 0) = 0
  std::vector<OperatorBlock<double>> blocks{
      OperatorBlock<double>::from_matrix(Matrix<double>::Identity(1, 1))};
  const OperatorSystem<double> system(std::move(blocks));
  const BlockData<double> data{Vector<double>::Zero(1)};
  const auto noise = NoiseLevels<double>::uniform(1, 0.0);
  const SolverConfig<double> cfg(3.0);

  auto [x1, rec] = lk::llk_step<double>(system, Vector<double>::Ones(1), 0, data, noise, cfg);
  EXPECT_EQ(x1(0), 0.0);
  EXPECT_EQ(rec.omega, 1);
  EXPECT_EQ(rec.residual_norm, 1.0);
  EXPECT_EQ(rec.adjoint_evals_cum, 1);
}

TEST(LlkStep, LopedStepSkipsAdjoint)
{
  int adjoint_calls = 0;
  const OperatorBlock<double> block(
      1, 1, [](const Vector<double>& x) -> Vector<double> { return x; },
      [](const Vector<double>&, const Vector<double>& h) -> Vector<double> { return h; },
      [&](const Vector<double>&, const Vector<double>& w) -> Vector<double> {
        ++adjoint_calls;
        return w;
      });
  const OperatorSystem<double> system({block});
  const BlockData<double> data{Vector<double>::Constant(1, 1.0)};
  const auto noise = NoiseLevels<double>::uniform(1, 0.1);
  const SolverConfig<double> cfg(3.0);

  const Vector<double> x = Vector<double>::Constant(1, 1.2); // residual 0.2 < 0.3
  auto [next, rec] = lk::llk_step<double>(system, x, 7, data, noise, cfg, 4);
  EXPECT_EQ(next, x);
  EXPECT_EQ(rec.omega, 0);
  EXPECT_EQ(rec.adjoint_evals_cum, 4);
  EXPECT_EQ(adjoint_calls, 0);
}

TEST(RunLlk, TwoCoordinateToy)
{
  const auto system = coordinate_system(2);
  const BlockData<double> data{Vector<double>::Zero(1), Vector<double>::Zero(1)};
  const auto noise = NoiseLevels<double>::uniform(2, 0.0);
  SolverConfig<double> cfg(3.0);
  cfg.keep_iterates = true;

  const auto result = lk::run_llk<double>(system, Vector<double>::Ones(2), data, noise, cfg);
  EXPECT_EQ(result.final_iterate, Vector<double>::Zero(2));
  EXPECT_EQ(result.reason, lk::Termination::stationary_cycle);
  EXPECT_EQ(result.termination_index, 2);
  ASSERT_EQ(result.trace.size(), 4u);
  EXPECT_EQ(result.iterates.size(), result.trace.size() + 1);
  EXPECT_EQ(result.iterates[1], (Vector<double>(2) << 0, 1).finished());
  EXPECT_EQ(result.trace.back().adjoint_evals_cum, 2);
}

TEST(RunLlk, NoiseFreeMatchesClassical)
{
  const auto p = random_system(4, 3, 10, 21);
  const auto noise = NoiseLevels<double>::uniform(4, 0.0);
  SolverConfig<double> cfg(3.0, 0.0, 30);
  cfg.keep_iterates = true;
  cfg.discrepancy_stop = false;
  const Vector<double> x0 = Vector<double>::Zero(10);

  const auto llk = lk::run_llk<double>(p.system, x0, p.exact, noise, cfg);
  const auto classical = lk::run_classical_lk<double>(p.system, x0, p.exact, noise, cfg);
  ASSERT_EQ(llk.iterates.size(), classical.iterates.size());
  for (std::size_t k = 0; k < llk.iterates.size(); ++k)
    ASSERT_EQ(llk.iterates[k], classical.iterates[k]) << "iterate " << k;
}

TEST(RunLlk, StationaryRunProperties)
{
  const int count = 5;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = random_system(count, 4, 12, seed);
    const auto noise = NoiseLevels<double>({1e-2, 2e-2, 5e-3, 1e-2, 3e-2});
    const auto data = perturb(p.exact, noise, seed + 100);
    SolverConfig<double> cfg(3.0);
    cfg.keep_iterates = true;
    cfg.record_error_to = p.x_exact;

    const auto result = lk::run_llk<double>(p.system, Vector<double>::Zero(12), data, noise, cfg);
    ASSERT_EQ(result.reason, lk::Termination::stationary_cycle);
    EXPECT_EQ(result.termination_index % count, 0);
    for (int i = 0; i < count; ++i)
      EXPECT_LE((p.system[i].apply(result.final_iterate) - data[i]).norm(), 3.0 * noise[i]);

    std::int64_t evals = 0;
    for (std::size_t k = 0; k < result.trace.size(); ++k) {
      const auto& rec = result.trace[k];
      const auto i = static_cast<std::size_t>(rec.active_index);
      evals += rec.omega;
      EXPECT_EQ(rec.adjoint_evals_cum, evals);
      const auto gap = lk::monotonicity_gap<double>(result.iterates[k], result.iterates[k + 1],
                                                    p.x_exact, rec, 0.0, noise[i]);
      EXPECT_LE(gap.lhs, gap.rhs + 1e-12);
      EXPECT_NEAR(*rec.error_to_ref, (result.iterates[k] - p.x_exact).norm(), 1e-15);
    }

    const auto energy = lk::residual_energy_bound<double>(result, noise, Vector<double>::Zero(12),
                                                          p.x_exact, 0.0, 3.0);
    EXPECT_LE(energy.lhs, energy.rhs * (1 + 1e-12));
  }
}

TEST(RunLlk, LeavingTheBallThrows)
{
  const auto system = coordinate_system(2);
  const BlockData<double> data{Vector<double>::Constant(1, 10.0), Vector<double>::Zero(1)};
  const auto noise = NoiseLevels<double>::uniform(2, 0.0);
  SolverConfig<double> cfg(3.0);
  cfg.ball_radius = 1.0;
  EXPECT_THROW(lk::run_llk<double>(system, Vector<double>::Zero(2), data, noise, cfg),
               lk::SolverError);
}

TEST(RunLlk, RejectsMismatchedData)
{
  const auto system = coordinate_system(2);
  const SolverConfig<double> cfg(3.0);
  const BlockData<double> short_data{Vector<double>::Zero(1)};
  EXPECT_THROW(lk::run_llk<double>(system, Vector<double>::Zero(2), short_data,
                           NoiseLevels<double>::uniform(2, 0.0), cfg),
               std::invalid_argument);
  const BlockData<double> data{Vector<double>::Zero(1), Vector<double>::Zero(1)};
  EXPECT_THROW(lk::run_llk<double>(system, Vector<double>::Zero(2), data,
                           NoiseLevels<double>::uniform(3, 0.0), cfg),
               std::invalid_argument);
}

TEST(RunLlk, NonFiniteResidualThrows)
{
  const auto system = coordinate_system(2);
  const BlockData<double> data{Vector<double>::Constant(1, NAN), Vector<double>::Zero(1)};
  const SolverConfig<double> cfg(3.0);
  EXPECT_THROW(lk::run_llk<double>(system, Vector<double>::Zero(2), data,
                           NoiseLevels<double>::uniform(2, 0.1), cfg),
               lk::SolverError);
}

TEST(ClassicalLk, DiscrepancyStop)
{
  const auto p = random_system(4, 3, 10, 8);
  const auto noise = NoiseLevels<double>::uniform(4, 1e-2);
  const auto data = perturb(p.exact, noise, 9);
  const SolverConfig<double> cfg(3.0);

  const auto result =
      lk::run_classical_lk<double>(p.system, Vector<double>::Zero(10), data, noise, cfg);
  ASSERT_EQ(result.reason, lk::Termination::discrepancy);
  const auto& last = result.trace.back();
  EXPECT_EQ(last.n, result.termination_index);
  EXPECT_EQ(last.omega, 0);
  EXPECT_LE(last.residual_norm, last.threshold);
  for (std::size_t k = 0; k + 1 < result.trace.size(); ++k) {
    EXPECT_EQ(result.trace[k].omega, 1);
    EXPECT_GT(result.trace[k].residual_norm, result.trace[k].threshold);
  }
  EXPECT_EQ(last.adjoint_evals_cum, result.termination_index);
}

TEST(Landweber, StepFormula)
{
  const auto p = random_system(3, 2, 5, 4);
  lk::Rng rng(1);
  const Vector<double> x = lk::gaussian_vector<double>(5, rng);

  // x - (1/N) sum_i A_i^T (A_i x - y_i)
  Vector<double> expected = x;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& b = p.system[i];
    expected -= b.deriv_adjoint_apply(x, b.apply(x) - p.exact[i]) / 3.0;
  }
  const Vector<double> got =
      lk::landweber_step<double>(lk::stack(p.system), x, lk::stack_data(p.exact));
  EXPECT_LE((got - expected).norm(), 1e-14 * expected.norm());
}

TEST(Landweber, NoiseLevelAndStop)
{
  EXPECT_DOUBLE_EQ(lk::stacked_noise_level(NoiseLevels<double>({3.0, 4.0})), std::sqrt(12.5));

  const auto p = random_system(4, 3, 10, 12);
  const auto noise = NoiseLevels<double>::uniform(4, 1e-2);
  const auto data = perturb(p.exact, noise, 13);
  const SolverConfig<double> cfg(3.0);
  const auto result =
      lk::run_landweber<double>(p.system, Vector<double>::Zero(10), data, noise, cfg);
  ASSERT_EQ(result.reason, lk::Termination::discrepancy);
  EXPECT_LE(result.trace.back().residual_norm, 3.0 * 1e-2);
  EXPECT_EQ(result.trace.back().adjoint_evals_cum, 4 * result.termination_index);
}

TEST(MonotonicityGap, HandExample)
{
  // x_n = 1, x_{n+1} = 0, x = 0, r = 1, delta = 0, eta = 0:
  // lhs = 0 - 1, rhs = 1 * (0 - 1)
  lk::StepRecord<double> rec;
  rec.omega = 1;
  rec.residual_norm = 1.0;
  const auto gap = lk::monotonicity_gap<double>(Vector<double>::Ones(1), Vector<double>::Zero(1),
                                                Vector<double>::Zero(1), rec, 0.0, 0.0);
  EXPECT_EQ(gap.lhs, -1.0);
  EXPECT_EQ(gap.rhs, -1.0);

  rec.omega = 0;
  const auto idle = lk::monotonicity_gap<double>(Vector<double>::Ones(1), Vector<double>::Ones(1),
                                                 Vector<double>::Zero(1), rec, 0.0, 0.0);
  EXPECT_EQ(idle.lhs, 0.0);
  EXPECT_EQ(idle.rhs, 0.0);
}

TEST(FiniteStopBound, HandAssembledRun)
{
  lk::KaczmarzResult<double> run;
  run.reason = lk::Termination::stationary_cycle;
  run.termination_index = 2;
  run.final_iterate = Vector<double>::Constant(1, 1.0);
  for (int n = 0; n < 4; ++n) {
    lk::StepRecord<double> rec;
    rec.n = n;
    rec.omega = n < 2 ? 1 : 0;
    rec.residual_norm = n < 2 ? double(n + 1) : 0.1;
    run.trace.push_back(rec);
  }
  const auto noise = NoiseLevels<double>({0.1, 0.2});
  const Vector<double> x_ref = Vector<double>::Constant(1, 3.0);

  // lhs = 2 (3 * 0.1)^2 / 2, sum = 1 + 4, rhs = 3 * 4 / (3 - 2)
  const auto b = lk::finite_stop_bound<double>(run, noise, x_ref, 0.0, 3.0);
  EXPECT_NEAR(b.lhs, 0.09, 1e-15);
  EXPECT_EQ(b.sum, 5.0);
  EXPECT_EQ(b.rhs, 12.0);

  // tau (|x0 - x|^2 - |x_* - x|^2) / (tau - 2) with x0 = 0: 3 (9 - 4) / 1
  const auto e =
      lk::residual_energy_bound<double>(run, noise, Vector<double>::Zero(1), x_ref, 0.0, 3.0);
  EXPECT_EQ(e.lhs, 5.0);
  EXPECT_EQ(e.rhs, 15.0);

  run.reason = lk::Termination::max_cycles;
  EXPECT_THROW(lk::finite_stop_bound<double>(run, noise, x_ref, 0.0, 3.0), std::invalid_argument);
  run.reason = lk::Termination::stationary_cycle;
  EXPECT_THROW(lk::finite_stop_bound<double>(run, NoiseLevels<double>({0.0, 0.1}), x_ref, 0.0, 3.0),
               std::invalid_argument);
}
