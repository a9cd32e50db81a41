#include "lk/problems.hpp"
#include "lk/verify.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lk {

namespace {

constexpr double kEtaTarget = 0.45;
constexpr double kRadiusFactor = 2.2;
constexpr double kShrink = 0.7;
constexpr int kMaxShrinks = 20;
constexpr int kEtaSamples = 200;

Matrix<double> derivative_matrix(const OperatorBlock<double>& block, const Vector<double>& x)
{
  Matrix<double> j(block.dim_y(), block.dim_x());
  for (Index k = 0; k < block.dim_x(); ++k)
    j.col(k) = block.deriv_apply(x, Vector<double>::Unit(block.dim_x(), k));
  return j;
}

Index numerical_rank(const Matrix<double>& m, double tol)
{
  Eigen::ColPivHouseholderQR<Matrix<double>> qr(m);
  qr.setThreshold(tol);
  return qr.rank();
}

std::vector<Matrix<double>> row_blocks(const Matrix<double>& a, Index count)
{
  if (count < 1 || a.rows() % count != 0)
    throw std::invalid_argument("dimension " + std::to_string(a.rows()) +
                                " is not divisible by N = " + std::to_string(count));
  const Index rows = a.rows() / count;
  std::vector<Matrix<double>> out;
  for (Index i = 0; i < count; ++i)
    out.emplace_back(a.middleRows(i * rows, rows));
  return out;
}

double spectral_norm(const Matrix<double>& m)
{
  return Eigen::JacobiSVD<Matrix<double>>(m).singularValues()(0);
}

BlockData<double> evaluate(const OperatorSystem<double>& system, const Vector<double>& x)
{
  BlockData<double> out;
  for (const auto& b : system)
    out.push_back(b.apply(x));
  return out;
}

/// c A (x + alpha x.x), derivative c A diag(1 + 2 alpha x)
OperatorBlock<double> quadratic_block(Matrix<double> a, double alpha)
{
  auto m = std::make_shared<const Matrix<double>>(std::move(a));
  const Index rows = m->rows();
  const Index cols = m->cols();
  return OperatorBlock<double>(
      cols, rows,
      [m, alpha](const Vector<double>& x) -> Vector<double> {
        return (*m) * (x + alpha * x.cwiseProduct(x));
      },
      [m, alpha](const Vector<double>& x, const Vector<double>& h) -> Vector<double> {
        return (*m) * (h + 2 * alpha * x.cwiseProduct(h));
      },
      [m, alpha](const Vector<double>& x, const Vector<double>& w) -> Vector<double> {
        return (m->transpose() * w).cwiseProduct(Vector<double>::Ones(x.size()) + 2 * alpha * x);
      });
}

std::optional<std::int64_t> parse_int(std::string_view s)
{
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || v <= 0)
    return std::nullopt;
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos)
      return parts;
    start = pos + 1;
  }
}

} // namespace

Matrix<double> fredholm_matrix(Index dim, double smoothing)
{
  if (dim < 1)
    throw std::invalid_argument("fredholm_matrix: dim must be positive");
  if (!(smoothing > 0))
    throw std::invalid_argument("fredholm_matrix: smoothing must be positive");
  const double h = 1.0 / static_cast<double>(dim);
  const double norm = 1.0 / (smoothing * std::sqrt(2 * std::numbers::pi));
  Matrix<double> a(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index k = 0; k < dim; ++k) {
      const double d = (static_cast<double>(j) - static_cast<double>(k)) * h;
      a(j, k) = h * norm * std::exp(-d * d / (2 * smoothing * smoothing));
    }
  return a;
}

Vector<double> fredholm_solution(Index dim)
{
  Vector<double> x(dim);
  for (Index k = 0; k < dim; ++k) {
    const double t = (static_cast<double>(k) + 0.5) / static_cast<double>(dim);
    const double bump = (t - 0.3) / 0.1;
    x(k) = std::sin(std::numbers::pi * t) + 0.5 * std::exp(-bump * bump);
  }
  return x;
}

bool kernel_condition_holds(const OperatorSystem<double>& system, const Vector<double>& x_ref,
                            std::span<const Vector<double>> points, double tol)
{
  // N(J_ref) is contained in N(J) iff rows(J) lie in rows(J_ref).
  for (const auto& block : system) {
    const Matrix<double> j_ref = derivative_matrix(block, x_ref);
    const Index base = numerical_rank(j_ref, tol);
    for (const auto& x : points) {
      Matrix<double> both(2 * block.dim_y(), block.dim_x());
      both << j_ref, derivative_matrix(block, x);
      if (numerical_rank(both, tol) != base)
        return false;
    }
  }
  return true;
}

TestProblem make_linear_fredholm(Index dim, Index count, double smoothing, std::uint64_t seed)
{
  const auto blocks = row_blocks(fredholm_matrix(dim, smoothing), count);
  std::vector<OperatorBlock<double>> ops;
  for (const auto& b : blocks)
    ops.push_back(OperatorBlock<double>::from_matrix(b / spectral_norm(b)));
  OperatorSystem<double> system(std::move(ops));

  const Vector<double> x_exact = fredholm_solution(dim);
  const Vector<double> x0 = Vector<double>::Zero(dim);
  const double rho = kRadiusFactor * (x_exact - x0).norm();

  Rng rng(seed);
  std::vector<Vector<double>> probes;
  for (int k = 0; k < 3; ++k)
    probes.push_back(uniform_in_ball(x0, rho, rng));
  const bool kern = kernel_condition_holds(system, x_exact, probes);

  BlockData<double> data = evaluate(system, x_exact);
  return TestProblem{"fredholm-" + std::to_string(dim) + "-" + std::to_string(count),
                     std::move(system),
                     x_exact,
                     x0,
                     rho,
                     std::move(data),
                     0.0,
                     kern};
}

TestProblem make_weakly_nonlinear(Index dim, Index count, double alpha, std::uint64_t seed)
{
  if (alpha == 0.0) {
    TestProblem linear = make_linear_fredholm(dim, count, 0.05, seed);
    linear.id = "weak-nl-" + std::to_string(dim) + "-" + std::to_string(count) + "-a0";
    return linear;
  }
  if (!(alpha > 0) || !std::isfinite(alpha))
    throw std::invalid_argument("make_weakly_nonlinear: alpha must be positive");

  const auto blocks = row_blocks(fredholm_matrix(dim, 0.05), count);
  const Vector<double> bump = fredholm_solution(dim);
  const Vector<double> x0 = Vector<double>::Zero(dim);

  double scale = 1.0;
  for (int attempt = 0; attempt <= kMaxShrinks; ++attempt, scale *= kShrink) {
    const Vector<double> x_exact = scale * bump;
    const double rho = kRadiusFactor * (x_exact - x0).norm();
    // |x|_inf <= |x0|_inf + rho on the ball bounds the diagonal factor
    const double diag_bound = 1 + 2 * alpha * (x0.cwiseAbs().maxCoeff() + rho);

    std::vector<OperatorBlock<double>> ops;
    for (const auto& b : blocks)
      ops.push_back(quadratic_block(b / (spectral_norm(b) * diag_bound), alpha));
    OperatorSystem<double> system(std::move(ops));

    double eta = 0;
    for (std::size_t i = 0; i < system.size(); ++i)
      eta = std::max(eta, estimate_eta(system[i], x0, rho, kEtaSamples, seed + i));
    if (eta >= kEtaTarget)
      continue;

    BlockData<double> data = evaluate(system, x_exact);
    return TestProblem{"weak-nl-" + std::to_string(dim) + "-" + std::to_string(count),
                       std::move(system),
                       x_exact,
                       x0,
                       rho,
                       std::move(data),
                       eta,
                       std::nullopt};
  }
  throw std::runtime_error("make_weakly_nonlinear: cannot certify eta < 0.45");
}

NoisySample add_noise(const TestProblem& problem, std::span<const double> deltas, double fill,
                      std::uint64_t seed)
{
  if (deltas.size() != problem.system.size())
    throw std::invalid_argument("add_noise: need one delta per equation");
  if (!(fill > 0 && fill < 1))
    throw std::invalid_argument("add_noise: fill must lie in (0, 1)");

  NoiseLevels<double> noise(std::vector<double>(deltas.begin(), deltas.end()));
  Rng rng(seed);
  BlockData<double> data;
  std::vector<double> norms;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const Vector<double>& exact = problem.exact_data[i];
    if (deltas[i] == 0.0) {
      data.push_back(exact);
      norms.push_back(0.0);
      continue;
    }
    const Vector<double> dir = random_unit_vector<double>(exact.size(), rng);
    data.push_back(exact + (fill * deltas[i]) * dir);
    norms.push_back((data.back() - exact).norm());
  }
  return NoisySample{std::move(data), std::move(noise), std::move(norms), seed, fill};
}

TestProblem make_problem(std::string_view id)
{
  const auto parts = split(id, '-');
  if (parts.size() == 3 && parts[0] == "fredholm") {
    const auto dim = parse_int(parts[1]);
    const auto count = parse_int(parts[2]);
    if (dim && count)
      return make_linear_fredholm(*dim, *count);
  }
  if (parts.size() == 5 && parts[0] == "weak" && parts[1] == "nl" && parts[4].size() > 1 &&
      parts[4][0] == 'a') {
    const auto dim = parse_int(parts[2]);
    const auto count = parse_int(parts[3]);
    const std::string_view digits = parts[4].substr(1);
    const bool numeric = digits.find_first_not_of("0123456789") == std::string_view::npos;
    if (dim && count && numeric) {
      TestProblem p = make_weakly_nonlinear(*dim, *count, std::stod("0." + std::string(digits)));
      p.id = std::string(id);
      return p;
    }
  }
  throw std::invalid_argument("unknown problem id '" + std::string(id) + "'");
}

std::vector<std::string> problem_ids()
{
  return {"fredholm-64-8", "weak-nl-64-8-a05"};
}

} // namespace lk
