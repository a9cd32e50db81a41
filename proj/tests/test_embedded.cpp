#include "lk/embedded.hpp"

#include <gtest/gtest.h>

#include <cmath>

using lk::BlockData;
using lk::Index;
using lk::Matrix;
using lk::NoiseLevels;
using lk::OperatorBlock;
using lk::OperatorSystem;
using lk::StackedVector;
using lk::Vector;

namespace {

// Explicit N x N matrix of D on scalar components: (Dx)^i = x^{i+1} - x^i.
Matrix<double> difference_matrix(int count)
{
  Matrix<double> d = Matrix<double>::Zero(count, count);
  for (int i = 0; i < count; ++i) {
    d(i, i) -= 1;
    d(i, (i + 1) % count) += 1;
  }
  return d;
}

StackedVector<double> row(std::initializer_list<double> v)
{
  StackedVector<double> x(1, static_cast<Index>(v.size()));
  Index k = 0;
  for (double e : v)
    x(0, k++) = e;
  return x;
}

struct Toy {
  OperatorSystem<double> system;
  Vector<double> x_exact;
  BlockData<double> exact;
};

Toy toy(int count, int rows, int dim, std::uint64_t seed)
{
  lk::Rng rng(seed);
  const Vector<double> x = lk::gaussian_vector<double>(dim, rng);
  std::vector<OperatorBlock<double>> blocks;
  BlockData<double> exact;
  for (int i = 0; i < count; ++i) {
    Matrix<double> a = Matrix<double>::NullaryExpr(rows, dim, [&] {
      return std::normal_distribution<double>()(rng);
    });
    a /= Eigen::JacobiSVD<Matrix<double>>(a).singularValues()(0);
    exact.push_back(a * x);
    blocks.push_back(OperatorBlock<double>::from_matrix(a));
  }
  return {OperatorSystem<double>(std::move(blocks)), x, exact};
}

} // namespace

TEST(Difference, TwoComponents)
{
  EXPECT_EQ(lk::d_apply(row({2.0, 5.0})), row({3.0, -3.0}));
  EXPECT_EQ(lk::d_adjoint(row({1.0, 0.0})), row({-1.0, 1.0}));
}

TEST(Difference, AdjointOfUnitVector)
{
  // D^*(w)^i = w^{i-1} - w^i with w = e_0
  EXPECT_EQ(lk::d_adjoint(row({1.0, 0.0, 0.0})), row({-1.0, 1.0, 0.0}));
}

TEST(Difference, MatchesExplicitMatrix)
{
  lk::Rng rng(2);
  for (int count : {2, 3, 5, 8}) {
    const Matrix<double> d = difference_matrix(count);
    const StackedVector<double> x = Matrix<double>::NullaryExpr(4, count, [&] {
      return std::normal_distribution<double>()(rng);
    });
    // stacked layout: row k of x holds coordinate k of every component
    EXPECT_LE((lk::d_apply(x) - x * d.transpose()).norm(), 1e-14);
    EXPECT_LE((lk::d_adjoint(x) - x * d).norm(), 1e-14);
    const StackedVector<double> w = Matrix<double>::NullaryExpr(4, count, [&] {
      return std::normal_distribution<double>()(rng);
    });
    EXPECT_NEAR(lk::stacked_dot(lk::d_apply(x), w), lk::stacked_dot(x, lk::d_adjoint(w)), 1e-12);
  }
}

TEST(Balancing, CirculantEntries)
{
  for (int count : {2, 3, 5}) {
    const double lambda = 0.3;
    const Matrix<double> d = difference_matrix(count);
    const Matrix<double> circulant = d.transpose() * d; // 2 on the diagonal, -1 next to it
    for (int j = 0; j < count; ++j) {
      const StackedVector<double> e = Matrix<double>::Identity(count, count).row(j);
      const StackedVector<double> col = lk::g_apply(e, lambda);
      for (int i = 0; i < count; ++i)
        EXPECT_EQ(col(0, i), lambda * lambda * circulant(j, i))
            << "N=" << count << " (" << i << "," << j << ")";
    }
  }
}

TEST(Balancing, HandExamples)
{
  EXPECT_EQ(lk::g_apply(row({1.0, 0.0, 0.0}), 0.5), row({0.5, -0.25, -0.25}));

  lk::EmbeddedConfig<double> cfg;
  cfg.lambda = 0.5;
  cfg.tau = 3;
  const auto noise = NoiseLevels<double>::uniform(2, 0.0);
  auto [next, rec] = lk::balancing_step<double>(row({1.0, 0.0}), 0, noise, cfg);
  EXPECT_EQ(next, row({0.5, 0.5}));
  EXPECT_EQ(rec.omega, 1);
  EXPECT_EQ(rec.phase, lk::Phase::balance);
}

TEST(Balancing, ConstantsAreFixed)
{
  lk::Rng rng(4);
  const Vector<double> v = lk::gaussian_vector<double>(6, rng);
  for (int count : {2, 3, 7}) {
    const auto x = lk::constant_stacked(v, count);
    EXPECT_LE(lk::g_apply(x, lk::choose_lambda<double>(count)).norm(), 1e-14);
  }
}

TEST(Lambda, DifferenceNorm)
{
  EXPECT_DOUBLE_EQ(lk::choose_lambda<double>(2), 0.5);
  for (int count = 2; count <= 16; ++count) {
    const double sigma = Eigen::JacobiSVD<Matrix<double>>(difference_matrix(count))
                             .singularValues()(0);
    EXPECT_NEAR(lk::difference_operator_norm<double>(count), sigma, 1e-12);
    EXPECT_NEAR(lk::choose_lambda<double>(count), 1.0 / sigma, 1e-12);
  }
  EXPECT_NEAR(lk::choose_lambda<double>(3), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_EQ(lk::choose_lambda<double>(1), 1.0);
}

TEST(Average, Mean)
{
  StackedVector<double> x(2, 2);
  x << 1, 3,
       2, 4;
  EXPECT_EQ(lk::average_components(x), (Vector<double>(2) << 2, 3).finished());
  EXPECT_DOUBLE_EQ(lk::component_spread(x), std::sqrt(2.0)); // columns differ from (2, 3) by (1, 1)
  EXPECT_EQ(lk::component_spread(lk::constant_stacked<double>(Vector<double>::Ones(3), 4)), 0.0);
}

TEST(EmbeddedConfig, Validation)
{
  lk::EmbeddedConfig<double> cfg;
  EXPECT_NO_THROW(cfg.validate(8));
  cfg.lambda = 0.6;
  EXPECT_THROW(cfg.validate(8), std::invalid_argument);
  cfg.lambda = 0.5;
  cfg.tau = 2.0;
  EXPECT_THROW(cfg.validate(8), std::invalid_argument);
  cfg.tau = 3.0;
  cfg.epsilon_fn = [](double d) { return d + 1; };
  EXPECT_THROW(cfg.validate(8), std::invalid_argument);
  cfg.epsilon_fn = [](double) { return 0.0; };
  EXPECT_THROW(cfg.validate(8), std::invalid_argument);
  cfg.epsilon_fn = [](double d) { return std::sqrt(d); };
  EXPECT_NO_THROW(cfg.validate(8));
}

TEST(EmbeddingStep, SharedWeightAndCost)
{
  const auto t = toy(3, 2, 5, 1);
  const auto noise = NoiseLevels<double>::uniform(3, 1e-2);
  lk::EmbeddedConfig<double> cfg;
  cfg.lambda = lk::choose_lambda<double>(3);
  const auto x = lk::constant_stacked<double>(Vector<double>::Zero(5), 3);

  auto [next, rec] = lk::embedding_step<double>(t.system, x, 0, t.exact, noise, cfg, 10);
  EXPECT_EQ(rec.omega, 1);
  EXPECT_EQ(rec.adjoint_evals_cum, 13);
  EXPECT_NEAR(rec.residual_norm, lk::stacked_norm(t.exact), 1e-14);
  for (Index i = 0; i < 3; ++i) {
    const auto& b = t.system[static_cast<std::size_t>(i)];
    const Vector<double> expected = -b.deriv_adjoint_apply(x.col(i), -t.exact[i]);
    EXPECT_LE((next.col(i) - expected).norm(), 1e-15);
  }
}

TEST(RunElk, TerminatesWithBothInequalities)
{
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const int count = 4;
    const auto t = toy(count, 3, 8, seed);
    const double delta = 1e-2;
    const auto noise = NoiseLevels<double>::uniform(count, delta);
    BlockData<double> data = t.exact;
    lk::Rng rng(seed + 50);
    for (auto& y : data)
      y += 0.9 * delta * lk::random_unit_vector<double>(y.size(), rng);

    lk::EmbeddedConfig<double> cfg;
    cfg.lambda = lk::choose_lambda<double>(count);
    cfg.keep_iterates = true;
    const auto result = lk::run_elk<double>(t.system, Vector<double>::Zero(8), data, noise, cfg);
    ASSERT_EQ(result.reason, lk::Termination::stationary_cycle);
    ASSERT_EQ(result.trace.size(), 2 * static_cast<std::size_t>(result.termination_index + 1));
    EXPECT_EQ(result.iterates.size(), result.trace.size() + 1);

    BlockData<double> residuals;
    for (int i = 0; i < count; ++i)
      residuals.push_back(t.system[i].apply(result.final_iterate.col(i)) - data[i]);
    EXPECT_LE(lk::stacked_norm(residuals), cfg.tau * delta);
    EXPECT_LE(lk::g_apply(result.final_iterate, cfg.lambda).norm(), cfg.tau * delta);

    const auto& first = result.iterates[1]; // after the first embedding step
    EXPECT_LT(lk::component_spread(result.final_iterate), lk::component_spread(first));

    std::int64_t evals = 0;
    for (const auto& rec : result.trace) {
      if (rec.phase == lk::Phase::embed)
        evals += count * rec.omega;
      EXPECT_EQ(rec.adjoint_evals_cum, evals);
    }
  }
}

TEST(LandweberViaAveraging, MatchesStackedStep)
{
  const auto t = toy(5, 2, 7, 3);
  const auto stacked = lk::stack(t.system);
  const Vector<double> y = lk::stack_data(t.exact);
  lk::Rng rng(8);
  for (int k = 0; k < 10; ++k) {
    const Vector<double> x = lk::gaussian_vector<double>(7, rng);
    const Vector<double> a = lk::landweber_via_averaging<double>(t.system, x, t.exact);
    const Vector<double> b = lk::landweber_step<double>(stacked, x, y);
    EXPECT_LE((a - b).norm(), 1e-12 * b.norm());
  }
}
