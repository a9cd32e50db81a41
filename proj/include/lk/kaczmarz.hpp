#pragma once

#include "lk/operator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lk {

/// Raised when a run cannot continue: non-finite residuals, or an iterate
/// leaving the ball on which the convergence assumptions were verified.
class SolverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Per-equation noise bounds delta^i with |y^{delta,i} - y^i| < delta^i.
template <typename Scalar>
class NoiseLevels {
public:
  explicit NoiseLevels(std::vector<Scalar> deltas)
      : deltas_{std::move(deltas)}
  {
    if (deltas_.empty())
      throw std::invalid_argument("NoiseLevels: empty");
    for (Scalar d : deltas_)
      if (!std::isfinite(d) || d < Scalar(0))
        throw std::invalid_argument("NoiseLevels: entries must be finite and non-negative");
  }

  static NoiseLevels uniform(std::size_t n, Scalar delta)
  {
    return NoiseLevels(std::vector<Scalar>(n, delta));
  }

  std::size_t size() const { return deltas_.size(); }
  Scalar operator[](std::size_t i) const { return deltas_.at(i); }
  const std::vector<Scalar>& deltas() const { return deltas_; }

  /// delta = max_i delta^i
  Scalar delta_max() const { return *std::max_element(deltas_.begin(), deltas_.end()); }
  Scalar delta_min() const { return *std::min_element(deltas_.begin(), deltas_.end()); }

private:
  std::vector<Scalar> deltas_;
};

/// Infimum of admissible tau for a tangential-cone constant eta:
/// 2 (1 + eta) / (1 - 2 eta). Requires 0 <= eta < 1/2.
template <typename Scalar>
Scalar check_tau(Scalar eta)
{
  if (!(eta >= Scalar(0)))
    throw std::domain_error("check_tau: eta must be non-negative");
  if (!(eta < Scalar(0.5)))
    throw std::domain_error("check_tau: cone condition violated (eta >= 1/2)");
  return 2 * (1 + eta) / (1 - 2 * eta);
}

template <typename Scalar>
class SolverConfig {
public:
  explicit SolverConfig(Scalar tau, Scalar eta_assumed = Scalar(0),
                        std::int64_t max_cycles = 10000)
      : tau_{tau}
      , eta_{eta_assumed}
      , max_cycles_{max_cycles}
  {
    if (!(tau_ > check_tau(eta_)))
      throw std::invalid_argument("SolverConfig: tau must exceed 2(1+eta)/(1-2eta) = " +
                                  std::to_string(check_tau(eta_)));
    if (max_cycles_ < 1)
      throw std::invalid_argument("SolverConfig: max_cycles must be positive");
  }

  Scalar tau() const { return tau_; }
  Scalar eta_assumed() const { return eta_; }
  std::int64_t max_cycles() const { return max_cycles_; }

  /// Reference solution for error tracking; never affects control flow.
  std::optional<Vector<Scalar>> record_error_to;
  /// Abort when an iterate leaves B_rho(x0).
  std::optional<Scalar> ball_radius;
  /// Classical LK only: stop at the first active residual below tau*delta.
  bool discrepancy_stop = true;
  /// Keep x_0, x_1, ... in RunResult::iterates.
  bool keep_iterates = false;

private:
  Scalar tau_;
  Scalar eta_;
  std::int64_t max_cycles_;
};

enum class Phase { full, embed, balance };
enum class Termination { stationary_cycle, discrepancy, max_cycles };

inline const char* to_string(Phase p)
{
  switch (p) {
  case Phase::full: return "full";
  case Phase::embed: return "embed";
  case Phase::balance: return "balance";
  }
  return "?";
}

inline const char* to_string(Termination t)
{
  switch (t) {
  case Termination::stationary_cycle: return "stationary_cycle";
  case Termination::discrepancy: return "discrepancy";
  case Termination::max_cycles: return "max_cycles";
  }
  return "?";
}

template <typename Scalar>
struct StepRecord {
  std::int64_t n = 0;
  Phase phase = Phase::full;
  int active_index = 0; ///< [n] for Kaczmarz steps, 0 for Landweber, -1 for eLK
  int omega = 0;
  Scalar residual_norm = 0;
  Scalar threshold = 0;
  std::int64_t adjoint_evals_cum = 0; ///< block adjoint evaluations so far
  std::optional<Scalar> error_to_ref; ///< error of the iterate the residual was taken at
};

template <typename State, typename Scalar>
struct RunResult {
  State final_iterate;
  std::int64_t termination_index = 0;
  Termination reason = Termination::max_cycles;
  std::vector<StepRecord<Scalar>> trace;
  /// With keep_iterates: iterates[k] is the state the k-th trace record was
  /// taken at, and iterates.back() the state after the last record.
  std::vector<State> iterates;
};

template <typename Scalar>
using KaczmarzResult = RunResult<Vector<Scalar>, Scalar>;

/// Bang-bang weight: 1 iff residual_norm > tau * delta_i (strict).
template <typename Scalar>
int lop_weight(Scalar residual_norm, Scalar tau, Scalar delta_i)
{
  return residual_norm > tau * delta_i ? 1 : 0;
}

namespace detail {

template <typename Scalar>
void check_data(const OperatorSystem<Scalar>& system, const BlockData<Scalar>& data,
                const NoiseLevels<Scalar>& noise)
{
  if (data.size() != system.size())
    throw std::invalid_argument("data must have one entry per equation");
  if (noise.size() != system.size())
    throw std::invalid_argument("noise must have one entry per equation");
  for (std::size_t i = 0; i < system.size(); ++i)
    if (data[i].size() != system[i].dim_y())
      throw std::invalid_argument("data block " + std::to_string(i) + " has wrong dimension");
}

template <typename Scalar>
Scalar checked_norm(const Vector<Scalar>& r, std::int64_t n)
{
  const Scalar norm = r.norm();
  if (!std::isfinite(norm))
    throw SolverError("non-finite residual at step " + std::to_string(n));
  return norm;
}

template <typename Scalar>
void check_ball(const Vector<Scalar>& x, const Vector<Scalar>& x0, std::optional<Scalar> radius,
                std::int64_t n)
{
  if (radius && (x - x0).norm() > *radius)
    throw SolverError("iterate left B_rho(x0) after step " + std::to_string(n) +
                      " (|x - x0| = " + std::to_string((x - x0).norm()) +
                      ", rho = " + std::to_string(*radius) + ")");
}

template <typename Scalar>
std::optional<Scalar> error_to(const SolverConfig<Scalar>& config, const Vector<Scalar>& x)
{
  if (!config.record_error_to)
    return std::nullopt;
  return (x - *config.record_error_to).norm();
}

} // namespace detail

/**
 * One loping Landweber-Kaczmarz step
 *
 *   x_{n+1} = x_n - omega_n F_[n]'(x_n)^* (F_[n](x_n) - y^{delta,[n]}).
 *
 * When omega_n = 0 the adjoint is not evaluated and x is returned unchanged.
 */
template <typename Scalar>
std::pair<Vector<Scalar>, StepRecord<Scalar>>
llk_step(const OperatorSystem<Scalar>& system, const Vector<Scalar>& x, std::int64_t n,
         const BlockData<Scalar>& data, const NoiseLevels<Scalar>& noise,
         const SolverConfig<Scalar>& config, std::int64_t adjoint_evals_before = 0)
{
  const std::size_t i = system.cyclic_index(n);
  const auto& block = system[i];
  const Vector<Scalar> residual = block.apply(x) - data[i];

  StepRecord<Scalar> rec;
  rec.n = n;
  rec.phase = Phase::full;
  rec.active_index = static_cast<int>(i);
  rec.residual_norm = detail::checked_norm(residual, n);
  rec.threshold = config.tau() * noise[i];
  rec.omega = lop_weight(rec.residual_norm, config.tau(), noise[i]);
  rec.adjoint_evals_cum = adjoint_evals_before + rec.omega;
  rec.error_to_ref = detail::error_to(config, x);

  if (rec.omega == 0)
    return {x, rec};
  return {x - block.deriv_adjoint_apply(x, residual), rec};
}

/// Loping Landweber-Kaczmarz. Stops at the first cycle in which every weight
/// is zero; termination_index is the first step of that cycle.
template <typename Scalar>
KaczmarzResult<Scalar> run_llk(const OperatorSystem<Scalar>& system, const Vector<Scalar>& x0,
                               const BlockData<Scalar>& data, const NoiseLevels<Scalar>& noise,
                               const SolverConfig<Scalar>& config)
{
  detail::check_data(system, data, noise);
  const auto count = static_cast<std::int64_t>(system.size());

  KaczmarzResult<Scalar> result;
  Vector<Scalar> x = x0;
  std::int64_t evals = 0;
  for (std::int64_t cycle = 0; cycle < config.max_cycles(); ++cycle) {
    bool stationary = true;
    for (std::int64_t k = 0; k < count; ++k) {
      const std::int64_t n = cycle * count + k;
      if (config.keep_iterates)
        result.iterates.push_back(x);
      auto [next, rec] = llk_step(system, x, n, data, noise, config, evals);
      evals = rec.adjoint_evals_cum;
      if (rec.omega)
        stationary = false;
      result.trace.push_back(std::move(rec));
      if (result.trace.back().omega) {
        x = std::move(next);
        detail::check_ball(x, x0, config.ball_radius, n);
      }
    }
    if (stationary) {
      if (config.keep_iterates)
        result.iterates.push_back(x);
      result.termination_index = cycle * count;
      result.reason = Termination::stationary_cycle;
      result.final_iterate = x;
      return result;
    }
  }
  result.termination_index = config.max_cycles() * count;
  result.reason = Termination::max_cycles;
  if (config.keep_iterates)
    result.iterates.push_back(x);
  result.final_iterate = x;
  return result;
}

/**
 * Classical Landweber-Kaczmarz (omega = 1 throughout). With discrepancy_stop
 * it terminates at the smallest n whose active residual satisfies
 * |F_[n](x_n) - y^{delta,[n]}| <= tau delta^[n]; that final check is recorded
 * with omega = 0 and no update.
 */
template <typename Scalar>
KaczmarzResult<Scalar> run_classical_lk(const OperatorSystem<Scalar>& system,
                                        const Vector<Scalar>& x0, const BlockData<Scalar>& data,
                                        const NoiseLevels<Scalar>& noise,
                                        const SolverConfig<Scalar>& config)
{
  detail::check_data(system, data, noise);
  const std::int64_t total = config.max_cycles() * static_cast<std::int64_t>(system.size());

  KaczmarzResult<Scalar> result;
  Vector<Scalar> x = x0;
  std::int64_t evals = 0;
  for (std::int64_t n = 0; n < total; ++n) {
    const std::size_t i = system.cyclic_index(n);
    const auto& block = system[i];
    if (config.keep_iterates)
      result.iterates.push_back(x);
    const Vector<Scalar> residual = block.apply(x) - data[i];

    StepRecord<Scalar> rec;
    rec.n = n;
    rec.active_index = static_cast<int>(i);
    rec.residual_norm = detail::checked_norm(residual, n);
    rec.threshold = config.tau() * noise[i];
    rec.error_to_ref = detail::error_to(config, x);

    if (config.discrepancy_stop && rec.residual_norm <= rec.threshold) {
      rec.omega = 0;
      rec.adjoint_evals_cum = evals;
      result.trace.push_back(std::move(rec));
      if (config.keep_iterates)
        result.iterates.push_back(x);
      result.termination_index = n;
      result.reason = Termination::discrepancy;
      result.final_iterate = x;
      return result;
    }
    rec.omega = 1;
    rec.adjoint_evals_cum = ++evals;
    result.trace.push_back(std::move(rec));
    x = x - block.deriv_adjoint_apply(x, residual);
    detail::check_ball(x, x0, config.ball_radius, n);
  }
  result.termination_index = total;
  result.reason = Termination::max_cycles;
  if (config.keep_iterates)
    result.iterates.push_back(x);
  result.final_iterate = x;
  return result;
}

/// One Landweber step x - F'(x)^* (F(x) - y) on the stacked equation.
template <typename Scalar>
Vector<Scalar> landweber_step(const OperatorBlock<Scalar>& stacked, const Vector<Scalar>& x,
                              const Vector<Scalar>& stacked_data)
{
  return x - stacked.deriv_adjoint_apply(x, stacked.apply(x) - stacked_data);
}

/// Noise level of the stacked equation, 1/sqrt(N) |(delta^i)_i|.
template <typename Scalar>
Scalar stacked_noise_level(const NoiseLevels<Scalar>& noise)
{
  Scalar sq(0);
  for (Scalar d : noise.deltas())
    sq += d * d;
  return std::sqrt(sq / Scalar(noise.size()));
}

/**
 * Landweber iteration on the stacked equation F(x) = y with
 * F = 1/sqrt(N) (F_0, ..., F_{N-1}), stopped by the discrepancy principle
 * |F(x_n) - y| <= tau * stacked_noise_level. max_cycles bounds the number of
 * steps; each step costs N block adjoints.
 */
template <typename Scalar>
KaczmarzResult<Scalar> run_landweber(const OperatorSystem<Scalar>& system,
                                     const Vector<Scalar>& x0, const BlockData<Scalar>& data,
                                     const NoiseLevels<Scalar>& noise,
                                     const SolverConfig<Scalar>& config)
{
  detail::check_data(system, data, noise);
  const OperatorBlock<Scalar> op = stack(system);
  const Vector<Scalar> y = stack_data(data);
  const Scalar threshold = config.tau() * stacked_noise_level(noise);
  const auto count = static_cast<std::int64_t>(system.size());

  KaczmarzResult<Scalar> result;
  Vector<Scalar> x = x0;
  std::int64_t evals = 0;
  for (std::int64_t n = 0; n < config.max_cycles(); ++n) {
    if (config.keep_iterates)
      result.iterates.push_back(x);
    const Vector<Scalar> residual = op.apply(x) - y;

    StepRecord<Scalar> rec;
    rec.n = n;
    rec.active_index = 0;
    rec.residual_norm = detail::checked_norm(residual, n);
    rec.threshold = threshold;
    rec.error_to_ref = detail::error_to(config, x);

    if (rec.residual_norm <= threshold) {
      rec.omega = 0;
      rec.adjoint_evals_cum = evals;
      result.trace.push_back(std::move(rec));
      if (config.keep_iterates)
        result.iterates.push_back(x);
      result.termination_index = n;
      result.reason = Termination::discrepancy;
      result.final_iterate = x;
      return result;
    }
    rec.omega = 1;
    evals += count;
    rec.adjoint_evals_cum = evals;
    result.trace.push_back(std::move(rec));
    x = x - op.deriv_adjoint_apply(x, residual);
    detail::check_ball(x, x0, config.ball_radius, n);
  }
  result.termination_index = config.max_cycles();
  result.reason = Termination::max_cycles;
  if (config.keep_iterates)
    result.iterates.push_back(x);
  result.final_iterate = x;
  return result;
}

template <typename Scalar>
struct InequalitySides {
  Scalar lhs;
  Scalar rhs;
};

/// Both sides of the one-step error estimate
///   |x_{n+1} - x|^2 - |x_n - x|^2 <= omega r (2(1+eta) delta^i - (1-2eta) r).
template <typename Scalar>
InequalitySides<Scalar> monotonicity_gap(const Vector<Scalar>& x_n, const Vector<Scalar>& x_next,
                                         const Vector<Scalar>& x_ref,
                                         const StepRecord<Scalar>& record, Scalar eta,
                                         Scalar delta_i)
{
  const Scalar r = record.residual_norm;
  const Scalar lhs = (x_next - x_ref).squaredNorm() - (x_n - x_ref).squaredNorm();
  const Scalar rhs = record.omega * r * (2 * (1 + eta) * delta_i - (1 - 2 * eta) * r);
  return {lhs, rhs};
}

template <typename Scalar>
struct FiniteStopBound {
  Scalar lhs; ///< n_* (tau min_i delta^i)^2 / N
  Scalar sum; ///< sum_{n < n_*} omega_n r_n^2
  Scalar rhs; ///< tau |x_ref - x_{n_*}|^2 / ((1 - 2eta) tau - 2(1 + eta))
};

namespace detail {

template <typename Scalar>
Scalar active_residual_energy(const KaczmarzResult<Scalar>& result)
{
  Scalar sum(0);
  for (const auto& rec : result.trace)
    if (rec.n < result.termination_index && rec.omega)
      sum += rec.residual_norm * rec.residual_norm;
  return sum;
}

template <typename Scalar>
Scalar stop_denominator(Scalar eta, Scalar tau)
{
  const Scalar den = (1 - 2 * eta) * tau - 2 * (1 + eta);
  if (!(den > Scalar(0)))
    throw std::invalid_argument("tau does not exceed 2(1+eta)/(1-2eta)");
  return den;
}

template <typename Scalar>
void require_stationary(const KaczmarzResult<Scalar>& result, const NoiseLevels<Scalar>& noise)
{
  if (result.reason != Termination::stationary_cycle)
    throw std::invalid_argument("bound requires a stationary termination");
  if (!(noise.delta_min() > Scalar(0)))
    throw std::invalid_argument("bound is vacuous when min_i delta^i = 0");
}

} // namespace detail

/// Terms of the finite-stopping estimate, with the terminal error on the right.
template <typename Scalar>
FiniteStopBound<Scalar> finite_stop_bound(const KaczmarzResult<Scalar>& result,
                                          const NoiseLevels<Scalar>& noise,
                                          const Vector<Scalar>& x_ref, Scalar eta, Scalar tau)
{
  detail::require_stationary(result, noise);
  const Scalar floor = tau * noise.delta_min();
  FiniteStopBound<Scalar> out;
  out.lhs = Scalar(result.termination_index) * floor * floor / Scalar(noise.size());
  out.sum = detail::active_residual_energy(result);
  out.rhs = tau * (x_ref - result.final_iterate).squaredNorm() / detail::stop_denominator(eta, tau);
  return out;
}

/**
 * The bound obtained by summing the one-step error estimate over the run:
 *
 *   sum omega_n r_n^2 <= tau (|x0 - x|^2 - |x_{n_*} - x|^2) / ((1-2eta) tau - 2(1+eta)).
 *
 * Returns {sum, rhs}.
 */
template <typename Scalar>
InequalitySides<Scalar> residual_energy_bound(const KaczmarzResult<Scalar>& result,
                                              const NoiseLevels<Scalar>& noise,
                                              const Vector<Scalar>& x0,
                                              const Vector<Scalar>& x_ref, Scalar eta, Scalar tau)
{
  detail::require_stationary(result, noise);
  const Scalar drop = (x0 - x_ref).squaredNorm() - (result.final_iterate - x_ref).squaredNorm();
  return {detail::active_residual_energy(result),
          tau * drop / detail::stop_denominator(eta, tau)};
}

} // namespace lk
