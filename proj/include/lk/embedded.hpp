#pragma once

#include "lk/kaczmarz.hpp"

#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>

namespace lk {

/// Element (x^0, ..., x^{N-1}) of X^N, stored column-wise: column i is x^i.
/// The inner product is the Frobenius one, sum_i <x^i, z^i>.
template <typename Scalar>
using StackedVector = Matrix<Scalar>;

/// The constant stacked vector (x)_i.
template <typename Scalar>
StackedVector<Scalar> constant_stacked(const Vector<Scalar>& x, Index count)
{
  return x.replicate(1, count);
}

template <typename Scalar>
Scalar stacked_dot(const StackedVector<Scalar>& a, const StackedVector<Scalar>& b)
{
  return (a.array() * b.array()).sum();
}

/// D(x)^i = x^{i+1} - x^i, indices mod N.
template <typename Scalar>
StackedVector<Scalar> d_apply(const StackedVector<Scalar>& x)
{
  const Index count = x.cols();
  StackedVector<Scalar> out(x.rows(), count);
  for (Index i = 0; i < count; ++i)
    out.col(i) = x.col((i + 1) % count) - x.col(i);
  return out;
}

/// D^*(w)^i = w^{i-1} - w^i, indices mod N.
template <typename Scalar>
StackedVector<Scalar> d_adjoint(const StackedVector<Scalar>& w)
{
  const Index count = w.cols();
  StackedVector<Scalar> out(w.rows(), count);
  for (Index i = 0; i < count; ++i)
    out.col(i) = w.col((i + count - 1) % count) - w.col(i);
  return out;
}

/// G(x) = lambda^2 D^* D x, i.e. G(x)^i = lambda^2 (2 x^i - x^{i-1} - x^{i+1}).
template <typename Scalar>
StackedVector<Scalar> g_apply(const StackedVector<Scalar>& x, Scalar lambda)
{
  const Index count = x.cols();
  StackedVector<Scalar> out(x.rows(), count);
  for (Index i = 0; i < count; ++i)
    out.col(i) = 2 * x.col(i) - x.col((i + count - 1) % count) - x.col((i + 1) % count);
  return lambda * lambda * out;
}

/// Spectral norm of the cyclic difference operator, max_k 2|sin(pi k / N)|.
template <typename Scalar = double>
Scalar difference_operator_norm(Index count)
{
  Scalar best(0);
  for (Index k = 0; k < count; ++k)
    best = std::max(best, 2 * std::abs(std::sin(std::numbers::pi_v<Scalar> * Scalar(k) /
                                                 Scalar(count))));
  return best;
}

/// lambda = 1 / |D|, the largest value with |lambda D| <= 1. For N < 2 the
/// operator D vanishes and balancing is a no-op; 1 is returned.
template <typename Scalar = double>
Scalar choose_lambda(Index count)
{
  if (count < 2) {
    std::clog << "warning: choose_lambda: N < 2, balancing step is a no-op\n";
    return Scalar(1);
  }
  return Scalar(1) / difference_operator_norm<Scalar>(count);
}

enum class BalancingCriterion {
  gradient_norm,      ///< |G x| > tau eps(delta)
  difference_residual ///< |lambda D x| > tau eps(delta)
};

template <typename Scalar>
struct EmbeddedConfig {
  Scalar tau = 3;
  Scalar lambda = Scalar(0.5);
  /// Artificial noise level eps(delta); strictly increasing with eps(0) = 0.
  std::function<Scalar(Scalar)> epsilon_fn = [](Scalar d) { return d; };
  std::int64_t max_cycles = 10000;
  Scalar eta_assumed = 0;
  BalancingCriterion balancing = BalancingCriterion::gradient_norm;
  std::optional<Scalar> ball_radius;
  /// error_to_ref in the trace is measured for the component mean.
  std::optional<Vector<Scalar>> record_error_to;
  bool keep_iterates = false;

  /// Throws std::invalid_argument unless the configuration suits a system of
  /// `count` equations.
  void validate(Index count) const
  {
    if (!(tau > check_tau(eta_assumed)))
      throw std::invalid_argument("EmbeddedConfig: tau must exceed 2(1+eta)/(1-2eta)");
    if (!(lambda > Scalar(0)))
      throw std::invalid_argument("EmbeddedConfig: lambda must be positive");
    if (lambda * difference_operator_norm<Scalar>(count) > Scalar(1) + Scalar(1e-12))
      throw std::invalid_argument("EmbeddedConfig: |lambda D| exceeds 1");
    if (max_cycles < 1)
      throw std::invalid_argument("EmbeddedConfig: max_cycles must be positive");
    if (!epsilon_fn || epsilon_fn(Scalar(0)) != Scalar(0))
      throw std::invalid_argument("EmbeddedConfig: epsilon must satisfy eps(0) = 0");
    Scalar prev(0);
    for (Scalar d : {Scalar(1e-8), Scalar(1e-4), Scalar(1e-2), Scalar(1), Scalar(1e2)}) {
      const Scalar e = epsilon_fn(d);
      if (!(e > prev))
        throw std::invalid_argument("EmbeddedConfig: epsilon must be strictly increasing");
      prev = e;
    }
  }
};

template <typename Scalar>
using EmbeddedResult = RunResult<StackedVector<Scalar>, Scalar>;

/// (1/N) sum_i x^i
template <typename Scalar>
Vector<Scalar> average_components(const StackedVector<Scalar>& x)
{
  return x.rowwise().mean();
}

/// max_i |x^i - mean|
template <typename Scalar>
Scalar component_spread(const StackedVector<Scalar>& x)
{
  const Vector<Scalar> mean = average_components(x);
  return (x.colwise() - mean).colwise().norm().maxCoeff();
}

/**
 * Block step: every component takes its own Landweber step,
 *
 *   x^i <- x^i - omega F_i'(x^i)^* (F_i(x^i) - y^{delta,i}),
 *
 * with one shared weight omega = 1 iff the stacked residual exceeds
 * tau * max_i delta^i.
 */
template <typename Scalar>
std::pair<StackedVector<Scalar>, StepRecord<Scalar>>
embedding_step(const OperatorSystem<Scalar>& system, const StackedVector<Scalar>& x, std::int64_t n,
               const BlockData<Scalar>& data, const NoiseLevels<Scalar>& noise,
               const EmbeddedConfig<Scalar>& config, std::int64_t adjoint_evals_before = 0)
{
  const std::size_t count = system.size();
  if (static_cast<std::size_t>(x.cols()) != count || x.rows() != system.dim_x())
    throw std::invalid_argument("embedding_step: stacked vector does not match the system");

  BlockData<Scalar> residuals(count);
  for (std::size_t i = 0; i < count; ++i)
    residuals[i] = system[i].apply(x.col(static_cast<Index>(i))) - data[i];

  StepRecord<Scalar> rec;
  rec.n = n;
  rec.phase = Phase::embed;
  rec.active_index = -1;
  rec.residual_norm = stacked_norm(residuals);
  if (!std::isfinite(rec.residual_norm))
    throw SolverError("non-finite residual at step " + std::to_string(n));
  rec.threshold = config.tau * noise.delta_max();
  rec.omega = lop_weight(rec.residual_norm, config.tau, noise.delta_max());
  rec.adjoint_evals_cum = adjoint_evals_before + rec.omega * static_cast<std::int64_t>(count);
  if (config.record_error_to)
    rec.error_to_ref = (average_components(x) - *config.record_error_to).norm();

  if (rec.omega == 0)
    return {x, rec};
  StackedVector<Scalar> out = x;
  for (std::size_t i = 0; i < count; ++i) {
    const auto col = static_cast<Index>(i);
    out.col(col) -= system[i].deriv_adjoint_apply(x.col(col), residuals[i]);
  }
  return {out, rec};
}

/// Balancing step x <- x - omega G(x), omega = 1 iff the balancing residual
/// exceeds tau * eps(max_i delta^i).
template <typename Scalar>
std::pair<StackedVector<Scalar>, StepRecord<Scalar>>
balancing_step(const StackedVector<Scalar>& x, std::int64_t n, const NoiseLevels<Scalar>& noise,
               const EmbeddedConfig<Scalar>& config, std::int64_t adjoint_evals_before = 0)
{
  const StackedVector<Scalar> g = g_apply(x, config.lambda);

  StepRecord<Scalar> rec;
  rec.n = n;
  rec.phase = Phase::balance;
  rec.active_index = -1;
  rec.residual_norm = config.balancing == BalancingCriterion::gradient_norm
                          ? g.norm()
                          : config.lambda * d_apply(x).norm();
  if (!std::isfinite(rec.residual_norm))
    throw SolverError("non-finite balancing residual at step " + std::to_string(n));
  rec.threshold = config.tau * config.epsilon_fn(noise.delta_max());
  rec.omega = rec.residual_norm > rec.threshold ? 1 : 0;
  rec.adjoint_evals_cum = adjoint_evals_before;
  if (config.record_error_to)
    rec.error_to_ref = (average_components(x) - *config.record_error_to).norm();

  if (rec.omega == 0)
    return {x, rec};
  return {x - g, rec};
}

/**
 * Embedded Landweber-Kaczmarz: starting from the constant vector (x0)_i,
 * alternate embedding_step and balancing_step until both weights vanish in
 * the same cycle. termination_index is that cycle's index.
 */
template <typename Scalar>
EmbeddedResult<Scalar> run_elk(const OperatorSystem<Scalar>& system, const Vector<Scalar>& x0,
                               const BlockData<Scalar>& data, const NoiseLevels<Scalar>& noise,
                               const EmbeddedConfig<Scalar>& config)
{
  detail::check_data(system, data, noise);
  const auto count = static_cast<Index>(system.size());
  config.validate(count);

  auto check_ball = [&](const StackedVector<Scalar>& x, std::int64_t n) {
    if (!config.ball_radius)
      return;
    const Scalar worst = (x.colwise() - x0).colwise().norm().maxCoeff();
    if (worst > *config.ball_radius)
      throw SolverError("component left B_rho(x0) in cycle " + std::to_string(n));
  };

  EmbeddedResult<Scalar> result;
  StackedVector<Scalar> x = constant_stacked(x0, count);
  std::int64_t evals = 0;
  for (std::int64_t n = 0; n < config.max_cycles; ++n) {
    if (config.keep_iterates)
      result.iterates.push_back(x);
    auto [half, embed_rec] = embedding_step(system, x, n, data, noise, config, evals);
    evals = embed_rec.adjoint_evals_cum;
    const int embed_omega = embed_rec.omega;
    result.trace.push_back(std::move(embed_rec));
    if (embed_omega)
      check_ball(half, n);

    if (config.keep_iterates)
      result.iterates.push_back(half);
    auto [next, balance_rec] = balancing_step(half, n, noise, config, evals);
    const int balance_omega = balance_rec.omega;
    result.trace.push_back(std::move(balance_rec));

    if (embed_omega == 0 && balance_omega == 0) {
      if (config.keep_iterates)
        result.iterates.push_back(next);
      result.termination_index = n;
      result.reason = Termination::stationary_cycle;
      result.final_iterate = std::move(next);
      return result;
    }
    x = std::move(next);
    check_ball(x, n);
  }
  if (config.keep_iterates)
    result.iterates.push_back(x);
  result.termination_index = config.max_cycles;
  result.reason = Termination::max_cycles;
  result.final_iterate = std::move(x);
  return result;
}

/// One Landweber step written as the mean of the N single-equation steps
/// x - F_i'(x)^* (F_i(x) - y^{delta,i}).
template <typename Scalar>
Vector<Scalar> landweber_via_averaging(const OperatorSystem<Scalar>& system,
                                       const Vector<Scalar>& x, const BlockData<Scalar>& data)
{
  if (data.size() != system.size())
    throw std::invalid_argument("landweber_via_averaging: data must have one entry per equation");
  StackedVector<Scalar> half(system.dim_x(), static_cast<Index>(system.size()));
  for (std::size_t i = 0; i < system.size(); ++i)
    half.col(static_cast<Index>(i)) =
        x - system[i].deriv_adjoint_apply(x, system[i].apply(x) - data[i]);
  return average_components(half);
}

} // namespace lk
