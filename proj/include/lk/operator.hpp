#pragma once

#include "lk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

namespace lk {

/**
 * One equation F_i : X -> Y_i of a system, together with its linearization.
 *
 * The three actions are stored as callables so that blocks can wrap dense
 * matrices, closed-form nonlinear maps, or anything else with a derivative
 * and its adjoint. A block must be safe to evaluate concurrently from
 * several threads, i.e. the callables must not mutate shared state.
 *
 * An optional domain predicate describes where the block may be evaluated;
 * without one the block is total.
 */
template <typename Scalar>
class OperatorBlock {
public:
  using VectorType = Vector<Scalar>;
  using MapFn = std::function<VectorType(const VectorType&)>;
  /// (base point, direction) -> image
  using LinearizedFn = std::function<VectorType(const VectorType&, const VectorType&)>;
  using DomainFn = std::function<bool(const VectorType&)>;

  OperatorBlock(Index dim_x, Index dim_y, MapFn apply, LinearizedFn deriv, LinearizedFn adjoint,
                bool linear = false)
      : dim_x_{dim_x}
      , dim_y_{dim_y}
      , apply_{std::move(apply)}
      , deriv_{std::move(deriv)}
      , adjoint_{std::move(adjoint)}
      , linear_{linear}
  {
    if (dim_x_ <= 0 || dim_y_ <= 0)
      throw std::invalid_argument("OperatorBlock: dimensions must be positive");
    if (!apply_ || !deriv_ || !adjoint_)
      throw std::invalid_argument("OperatorBlock: all three actions are required");
  }

  /// Linear block x -> A x with exact adjoint A^T.
  static OperatorBlock from_matrix(Matrix<Scalar> a)
  {
    auto shared = std::make_shared<const Matrix<Scalar>>(std::move(a));
    const Index rows = shared->rows();
    const Index cols = shared->cols();
    return OperatorBlock(
        cols, rows, [shared](const VectorType& x) -> VectorType { return (*shared) * x; },
        [shared](const VectorType&, const VectorType& h) -> VectorType { return (*shared) * h; },
        [shared](const VectorType&, const VectorType& w) -> VectorType {
          return shared->transpose() * w;
        },
        true);
  }

  Index dim_x() const { return dim_x_; }
  Index dim_y() const { return dim_y_; }

  /// True when F is linear, so F(x) - F(z) - F'(x)(x - z) vanishes identically.
  bool is_linear() const { return linear_; }

  VectorType apply(const VectorType& x) const
  {
    check_x(x);
    return apply_(x);
  }
  VectorType operator()(const VectorType& x) const { return apply(x); }

  VectorType deriv_apply(const VectorType& x, const VectorType& h) const
  {
    check_x(x);
    check_x(h);
    return deriv_(x, h);
  }

  VectorType deriv_adjoint_apply(const VectorType& x, const VectorType& w) const
  {
    check_x(x);
    if (w.size() != dim_y_)
      throw std::invalid_argument("OperatorBlock: codirection has wrong dimension");
    return adjoint_(x, w);
  }

  OperatorBlock& set_domain(DomainFn domain)
  {
    domain_ = std::move(domain);
    return *this;
  }
  bool in_domain(const VectorType& x) const { return !domain_ || domain_(x); }

  /// The block c * F with derivative c * F'(x) and adjoint c * F'(x)^*.
  OperatorBlock scaled(Scalar c) const
  {
    OperatorBlock out(
        dim_x_, dim_y_, [f = apply_, c](const VectorType& x) -> VectorType { return c * f(x); },
        [d = deriv_, c](const VectorType& x, const VectorType& h) -> VectorType {
          return c * d(x, h);
        },
        [a = adjoint_, c](const VectorType& x, const VectorType& w) -> VectorType {
          return c * a(x, w);
        },
        linear_);
    out.domain_ = domain_;
    return out;
  }

private:
  void check_x(const VectorType& x) const
  {
    if (x.size() != dim_x_)
      throw std::invalid_argument("OperatorBlock: argument has dimension " +
                                  std::to_string(x.size()) + ", expected " +
                                  std::to_string(dim_x_));
  }

  Index dim_x_;
  Index dim_y_;
  MapFn apply_;
  LinearizedFn deriv_;
  LinearizedFn adjoint_;
  DomainFn domain_;
  bool linear_;
};

/// Ordered family F_0, ..., F_{N-1} on a common space X.
template <typename Scalar>
class OperatorSystem {
public:
  using Block = OperatorBlock<Scalar>;

  explicit OperatorSystem(std::vector<Block> blocks)
      : blocks_{std::move(blocks)}
  {
    if (blocks_.empty())
      throw std::invalid_argument("OperatorSystem: at least one block is required");
    for (const auto& b : blocks_)
      if (b.dim_x() != blocks_.front().dim_x())
        throw std::invalid_argument("OperatorSystem: blocks disagree on dim_x");
  }

  std::size_t size() const { return blocks_.size(); }
  Index dim_x() const { return blocks_.front().dim_x(); }

  const Block& operator[](std::size_t i) const { return blocks_.at(i); }

  /// [n] = n mod N
  std::size_t cyclic_index(std::int64_t n) const
  {
    const auto count = static_cast<std::int64_t>(blocks_.size());
    return static_cast<std::size_t>(((n % count) + count) % count);
  }
  const Block& cyclic(std::int64_t n) const { return blocks_[cyclic_index(n)]; }

  bool is_linear() const
  {
    return std::all_of(blocks_.begin(), blocks_.end(),
                       [](const Block& b) { return b.is_linear(); });
  }

  auto begin() const { return blocks_.begin(); }
  auto end() const { return blocks_.end(); }

private:
  std::vector<Block> blocks_;
};

/// The single equation 1/sqrt(N) (F_0, ..., F_{N-1})(x) = 1/sqrt(N) (y^0, ..., y^{N-1}).
template <typename Scalar>
OperatorBlock<Scalar> stack(const OperatorSystem<Scalar>& system)
{
  using VectorType = Vector<Scalar>;
  std::vector<Index> offsets{0};
  for (const auto& b : system)
    offsets.push_back(offsets.back() + b.dim_y());
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(system.size()));

  auto apply = [system, offsets, scale](const VectorType& x) -> VectorType {
    VectorType out(offsets.back());
    for (std::size_t i = 0; i < system.size(); ++i)
      out.segment(offsets[i], system[i].dim_y()) = scale * system[i].apply(x);
    return out;
  };
  auto deriv = [system, offsets, scale](const VectorType& x, const VectorType& h) -> VectorType {
    VectorType out(offsets.back());
    for (std::size_t i = 0; i < system.size(); ++i)
      out.segment(offsets[i], system[i].dim_y()) = scale * system[i].deriv_apply(x, h);
    return out;
  };
  auto adjoint = [system, offsets, scale](const VectorType& x, const VectorType& w) -> VectorType {
    VectorType out = VectorType::Zero(system.dim_x());
    for (std::size_t i = 0; i < system.size(); ++i)
      out += system[i].deriv_adjoint_apply(x, w.segment(offsets[i], system[i].dim_y()));
    return scale * out;
  };
  return OperatorBlock<Scalar>(system.dim_x(), offsets.back(), std::move(apply), std::move(deriv),
                               std::move(adjoint), system.is_linear());
}

/// Data vector matching stack(): 1/sqrt(N) (y^0, ..., y^{N-1}).
template <typename Scalar>
Vector<Scalar> stack_data(const BlockData<Scalar>& data)
{
  Index total = 0;
  for (const auto& y : data)
    total += y.size();
  Vector<Scalar> out(total);
  Index offset = 0;
  for (const auto& y : data) {
    out.segment(offset, y.size()) = y;
    offset += y.size();
  }
  return out / std::sqrt(Scalar(data.size()));
}

} // namespace lk
