#pragma once

#include "lk/kaczmarz.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lk {

/// A system of equations with a known exact solution and the constants the
/// convergence theory needs.
struct TestProblem {
  std::string id;
  OperatorSystem<double> system;
  Vector<double> x_exact; ///< x^dagger
  Vector<double> x0;
  double rho;             ///< radius of the ball B_rho(x0) the blocks were certified on
  BlockData<double> exact_data;
  double eta_cert;        ///< tangential-cone constant (0 for linear problems)
  /// Null-space inclusion N(F_i'(x^dagger)) in N(F_i'(x)); only decided for linear problems.
  std::optional<bool> kern_holds;
};

struct NoisySample {
  BlockData<double> data;
  NoiseLevels<double> noise;
  std::vector<double> noise_norms; ///< measured |y^{delta,i} - y^i|
  std::uint64_t seed;
  double fill;
};

/// Midpoint-rule discretization of the Gaussian-kernel integral operator on
/// [0, 1]: A(j, k) = h g_w(s_j - s_k), h = 1/dim, s_j = (j + 1/2) h.
Matrix<double> fredholm_matrix(Index dim, double smoothing);

/// Smooth exact solution sampled at the grid midpoints.
Vector<double> fredholm_solution(Index dim);

/**
 * Linear first-kind integral equation split into N contiguous row blocks,
 * each rescaled to spectral norm one. x0 = 0 and rho = 2.2 |x^dagger|.
 * The seed drives the probe points of the kernel-condition check.
 */
TestProblem make_linear_fredholm(Index dim, Index count, double smoothing = 0.05,
                                 std::uint64_t seed = 0);

/**
 * F_i(x) = c_i A_i (x + alpha x.x) with A_i the Fredholm row blocks, scaled so
 * |F_i'(x)| <= 1 on B_rho(0). Starting from the linear problem's radius, rho
 * and x^dagger are shrunk by 0.7 until the sampled cone constant drops below
 * 0.45. alpha = 0 reproduces make_linear_fredholm.
 *
 * Throws std::runtime_error when no radius can be certified.
 */
TestProblem make_weakly_nonlinear(Index dim, Index count, double alpha = 0.05,
                                  std::uint64_t seed = 0);

/// Perturbs each exact data block by a random vector of norm fill * delta^i.
NoisySample add_noise(const TestProblem& problem, std::span<const double> deltas,
                      double fill = 0.9, std::uint64_t seed = 0);

/**
 * Builds a problem from its identifier:
 *   fredholm-<dim>-<N>           e.g. fredholm-64-8
 *   weak-nl-<dim>-<N>-a<digits>  e.g. weak-nl-64-8-a05 (alpha = 0.05)
 * Throws std::invalid_argument for unknown identifiers.
 */
TestProblem make_problem(std::string_view id);

/// The bundled identifiers.
std::vector<std::string> problem_ids();

/// Rank-based check of N(F_i'(x_ref)) in N(F_i'(x)) at the given points.
bool kernel_condition_holds(const OperatorSystem<double>& system, const Vector<double>& x_ref,
                            std::span<const Vector<double>> points, double tol = 1e-10);

} // namespace lk
