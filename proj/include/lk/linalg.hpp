#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace lk {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Per-equation data y^i (or y^{delta,i}); blocks may differ in length.
template <typename Scalar>
using BlockData = std::vector<Vector<Scalar>>;

/// Guard added to denominators of relative statistics.
template <typename Scalar>
constexpr Scalar machine_floor()
{
  return std::max(Scalar(1e-300), std::numeric_limits<Scalar>::min());
}

using Rng = std::mt19937_64;

template <typename Scalar>
Vector<Scalar> gaussian_vector(Index n, Rng& rng)
{
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  Vector<Scalar> v(n);
  for (Index k = 0; k < n; ++k)
    v(k) = normal(rng);
  return v;
}

/// Uniformly distributed direction on the unit sphere. Degenerate draws are
/// resampled, so the result always has norm one.
template <typename Scalar>
Vector<Scalar> random_unit_vector(Index n, Rng& rng)
{
  for (;;) {
    Vector<Scalar> v = gaussian_vector<Scalar>(n, rng);
    const Scalar norm = v.norm();
    if (norm > machine_floor<Scalar>() && std::isfinite(norm))
      return v / norm;
  }
}

/// Uniform sample from the closed ball B_radius(center).
template <typename Scalar>
Vector<Scalar> uniform_in_ball(const Vector<Scalar>& center, Scalar radius, Rng& rng)
{
  std::uniform_real_distribution<Scalar> unit(Scalar(0), Scalar(1));
  const Index n = center.size();
  Vector<Scalar> dir = random_unit_vector<Scalar>(n, rng);
  const Scalar r = radius * std::pow(unit(rng), Scalar(1) / Scalar(n));
  return center + r * dir;
}

/// Euclidean norm of a list of block vectors, sqrt(sum_i |v_i|^2).
template <typename Scalar>
Scalar stacked_norm(const BlockData<Scalar>& blocks)
{
  Scalar sq(0);
  for (const auto& b : blocks)
    sq += b.squaredNorm();
  return std::sqrt(sq);
}

} // namespace lk
