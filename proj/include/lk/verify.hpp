#pragma once

#include "lk/operator.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lk {

class VerificationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename Scalar>
std::string format_vector(const Vector<Scalar>& v)
{
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (Index k = 0; k < v.size(); ++k)
    os << (k ? ", " : "") << v(k);
  os << ']';
  return os.str();
}

template <typename Scalar>
bool all_finite(const Vector<Scalar>& v)
{
  return v.array().isFinite().all();
}

} // namespace detail

/// Relative dot-product test for one probe pair:
/// |<F'(x)h, w> - <h, F'(x)^* w>| / (|F'(x)h| |w| + floor).
template <typename Scalar>
Scalar adjoint_mismatch(const OperatorBlock<Scalar>& block, const Vector<Scalar>& x,
                        const Vector<Scalar>& h, const Vector<Scalar>& w)
{
  const Vector<Scalar> jh = block.deriv_apply(x, h);
  const Vector<Scalar> jtw = block.deriv_adjoint_apply(x, w);
  if (!detail::all_finite(jh))
    throw VerificationError("verify_adjoint: non-finite derivative along h = " +
                            detail::format_vector(h));
  if (!detail::all_finite(jtw))
    throw VerificationError("verify_adjoint: non-finite adjoint along w = " +
                            detail::format_vector(w));
  return std::abs(jh.dot(w) - h.dot(jtw)) / (jh.norm() * w.norm() + machine_floor<Scalar>());
}

/// Worst adjoint_mismatch over `trials` random unit probe pairs.
template <typename Scalar>
Scalar verify_adjoint(const OperatorBlock<Scalar>& block, const Vector<Scalar>& x, int trials,
                      std::uint64_t seed)
{
  if (trials < 1)
    throw std::invalid_argument("verify_adjoint: trials must be >= 1");
  Rng rng(seed);
  Scalar worst(0);
  for (int t = 0; t < trials; ++t) {
    const Vector<Scalar> h = random_unit_vector<Scalar>(block.dim_x(), rng);
    const Vector<Scalar> w = random_unit_vector<Scalar>(block.dim_y(), rng);
    worst = std::max(worst, adjoint_mismatch(block, x, h, w));
  }
  return worst;
}

template <typename Scalar>
struct FrechetCheck {
  std::vector<Scalar> steps;      ///< steps actually used (after domain shrinking)
  std::vector<Scalar> remainders; ///< |F(x+th) - F(x) - t F'(x)h|
  Scalar slope;                   ///< log-log slope; +inf when exact
  bool exact;                     ///< remainders are zero up to round-off
};

/**
 * Taylor-remainder test of the derivative along h.
 *
 * For a correct derivative of a smooth map the remainder decays like t^2, so
 * the fitted slope is close to 2; a wrong derivative leaves a linear term and
 * a slope near 1. Linear blocks, and remainders at the round-off level,
 * produce the exact sentinel (slope = +inf).
 *
 * Steps whose trial point leaves the block domain are halved until they fit.
 */
template <typename Scalar>
FrechetCheck<Scalar> verify_frechet(const OperatorBlock<Scalar>& block, const Vector<Scalar>& x,
                                    const Vector<Scalar>& h, std::span<const Scalar> step_ladder)
{
  if (step_ladder.size() < 3)
    throw std::invalid_argument("verify_frechet: need at least 3 steps");
  for (std::size_t k = 0; k < step_ladder.size(); ++k) {
    if (!(step_ladder[k] > Scalar(0)))
      throw std::invalid_argument("verify_frechet: steps must be positive");
    if (k > 0 && !(step_ladder[k] < step_ladder[k - 1]))
      throw std::invalid_argument("verify_frechet: steps must be decreasing");
  }

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Vector<Scalar> fx = block.apply(x);
  const Vector<Scalar> jh = block.deriv_apply(x, h);

  FrechetCheck<Scalar> out{{}, {}, std::numeric_limits<Scalar>::infinity(), true};
  std::vector<Scalar> log_t, log_r;
  for (Scalar t : step_ladder) {
    int halvings = 0;
    while (!block.in_domain(x + t * h) && halvings < 60) {
      t /= 2;
      ++halvings;
    }
    if (!block.in_domain(x + t * h))
      continue;
    const Vector<Scalar> ft = block.apply(x + t * h);
    const Scalar remainder = (ft - fx - t * jh).norm();
    if (!std::isfinite(remainder))
      throw VerificationError("verify_frechet: non-finite remainder at step " +
                              std::to_string(t));
    out.steps.push_back(t);
    out.remainders.push_back(remainder);
    const Scalar roundoff = 64 * eps * (ft.norm() + fx.norm() + t * jh.norm());
    if (remainder > roundoff) {
      log_t.push_back(std::log(t));
      log_r.push_back(std::log(remainder));
    }
  }
  if (out.steps.empty())
    throw VerificationError("verify_frechet: every step leaves the domain");
  if (out.steps.size() < 2)
    throw VerificationError("verify_frechet: fewer than two admissible steps");

  if (block.is_linear() || log_t.size() < 2)
    return out;

  // least-squares line through (log t, log r)
  const auto n = static_cast<Scalar>(log_t.size());
  Scalar mt(0), mr(0);
  for (std::size_t k = 0; k < log_t.size(); ++k) {
    mt += log_t[k];
    mr += log_r[k];
  }
  mt /= n;
  mr /= n;
  Scalar num(0), den(0);
  for (std::size_t k = 0; k < log_t.size(); ++k) {
    num += (log_t[k] - mt) * (log_r[k] - mr);
    den += (log_t[k] - mt) * (log_t[k] - mt);
  }
  out.slope = num / den;
  out.exact = false;
  return out;
}

/// Power iteration on h -> F'(x)^* F'(x) h. Returns |F'(x) v| for the final
/// unit iterate v, a lower bound for |F'(x)| that converges to it.
template <typename Scalar>
Scalar estimate_norm(const OperatorBlock<Scalar>& block, const Vector<Scalar>& x, int iters,
                     std::uint64_t seed)
{
  if (iters < 10)
    throw std::invalid_argument("estimate_norm: iters must be >= 10");
  Rng rng(seed);
  Vector<Scalar> v = random_unit_vector<Scalar>(block.dim_x(), rng);
  int reseeds = 0;
  for (int k = 0; k < iters; ++k) {
    Vector<Scalar> u = block.deriv_adjoint_apply(x, block.deriv_apply(x, v));
    const Scalar norm = u.norm();
    if (!std::isfinite(norm))
      throw VerificationError("estimate_norm: non-finite iterate");
    if (norm <= machine_floor<Scalar>()) {
      // start vector landed in the null space
      if (++reseeds > 8)
        return Scalar(0);
      v = random_unit_vector<Scalar>(block.dim_x(), rng);
      continue;
    }
    v = u / norm;
  }
  return block.deriv_apply(x, v).norm();
}

/**
 * Sampled tangential-cone constant on B_radius(center):
 *
 *   max |F(x) - F(z) - F'(x)(x - z)| / |F(x) - F(z)|
 *
 * over random pairs (x, z). This is a lower estimate of the best admissible
 * eta. Linear blocks return exactly zero.
 */
template <typename Scalar>
Scalar estimate_eta(const OperatorBlock<Scalar>& block, const Vector<Scalar>& center, Scalar radius,
                    int samples, std::uint64_t seed)
{
  if (!(radius > Scalar(0)))
    throw std::invalid_argument("estimate_eta: radius must be positive");
  if (samples < 1)
    throw std::invalid_argument("estimate_eta: samples must be >= 1");
  if (block.is_linear())
    return Scalar(0);

  Rng rng(seed);
  Scalar worst(0);
  int used = 0;
  for (int s = 0; s < samples; ++s) {
    const Vector<Scalar> x = uniform_in_ball(center, radius, rng);
    const Vector<Scalar> z = uniform_in_ball(center, radius, rng);
    const Vector<Scalar> diff = block.apply(x) - block.apply(z);
    const Scalar den = diff.norm();
    if (den < machine_floor<Scalar>())
      continue;
    const Scalar num = (diff - block.deriv_apply(x, x - z)).norm();
    if (!std::isfinite(num) || !std::isfinite(den))
      throw VerificationError("estimate_eta: non-finite operator output");
    worst = std::max(worst, num / den);
    ++used;
  }
  if (used == 0)
    throw VerificationError("estimate_eta: operator locally constant");
  return worst;
}

template <typename Scalar>
struct RegularityReport {
  std::size_t block_index;
  Scalar adjoint_error;
  Scalar frechet_order; ///< +inf for the exact-linear sentinel
  Scalar norm_estimate; ///< max over the probe points
  Scalar eta_estimate;
  Scalar ball_radius;
};

struct RegularityOptions {
  int adjoint_trials = 100;
  int norm_iters = 200;
  int norm_points = 4;
  int eta_samples = 200;
};

/// Runs every regularity check for one block on B_radius(center).
template <typename Scalar>
RegularityReport<Scalar> regularity_report(const OperatorBlock<Scalar>& block,
                                           std::size_t block_index, const Vector<Scalar>& center,
                                           Scalar radius, std::uint64_t seed,
                                           const RegularityOptions& opts = {})
{
  Rng rng(seed);
  RegularityReport<Scalar> report{block_index, Scalar(0), Scalar(0), Scalar(0), Scalar(0), radius};

  report.adjoint_error = verify_adjoint(block, center, opts.adjoint_trials, rng());

  const Vector<Scalar> probe = uniform_in_ball(center, radius / 2, rng);
  const Vector<Scalar> dir = random_unit_vector<Scalar>(block.dim_x(), rng);
  const std::vector<Scalar> ladder{radius * Scalar(1e-1), radius * Scalar(1e-2),
                                   radius * Scalar(1e-3), radius * Scalar(1e-4)};
  report.frechet_order = verify_frechet<Scalar>(block, probe, dir, ladder).slope;

  report.norm_estimate = estimate_norm(block, center, opts.norm_iters, rng());
  for (int p = 0; p < opts.norm_points; ++p) {
    const Vector<Scalar> x = uniform_in_ball(center, radius, rng);
    report.norm_estimate =
        std::max(report.norm_estimate, estimate_norm(block, x, opts.norm_iters, rng()));
  }

  report.eta_estimate = estimate_eta(block, center, radius, opts.eta_samples, rng());
  return report;
}

} // namespace lk
