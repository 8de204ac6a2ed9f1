#pragma once

// Condition-number regularizer R(S) = ‖SᵀS − α²I‖_F with α² = ‖S‖_F²/k for an
// m x k coefficient matrix (k = r for the square layer case).

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rdlt/linalg.hpp"

namespace rdlt {

/// Below this value of R the gradient is taken as zero (R is not
/// differentiable at 0).
inline constexpr double kRegFloor = 1e-12;

struct RegularizerEval {
  double value = 0.0;
  double alpha_sq = 0.0;
  std::optional<DenseMatrix> gradient;
};

namespace detail {

// SᵀS − α²I together with α².
inline std::pair<DenseMatrix, double> isotropy_residual(const DenseMatrix& s) {
  if (s.empty()) throw std::invalid_argument("regularizer: empty matrix");
  // sum of squares directly; squaring the norm loses exactness (e.g. I_3)
  const double alpha_sq = inner(s, s) / static_cast<double>(s.cols());
  DenseMatrix w = matmul_tn(s, s);
  for (std::size_t i = 0; i < w.rows(); ++i) w(i, i) -= alpha_sq;
  return {std::move(w), alpha_sq};
}

}  // namespace detail

inline RegularizerEval reg_value(const DenseMatrix& s) {
  auto [w, alpha_sq] = detail::isotropy_residual(s);
  return {frobenius_norm(w), alpha_sq, std::nullopt};
}

/// R together with ∇R(S) = 2S(SᵀS − α²I)/R, or the zero matrix when R < floor.
inline RegularizerEval reg_evaluate(const DenseMatrix& s, double floor = kRegFloor) {
  auto [w, alpha_sq] = detail::isotropy_residual(s);
  const double value = frobenius_norm(w);
  DenseMatrix grad(s.rows(), s.cols());
  if (value >= floor) {
    grad = matmul(s, w);
    grad *= 2.0 / value;
  }
  return {value, alpha_sq, std::move(grad)};
}

inline DenseMatrix reg_gradient(const DenseMatrix& s, double floor = kRegFloor) {
  return *reg_evaluate(s, floor).gradient;
}

/// R of a rank-r product W = U S Vᵀ evaluated on W directly:
/// R² = ‖WᵀW‖_F² − ‖W‖_F⁴/r, which equals R(S)² when U, V are orthonormal.
inline double reg_value_dense(const DenseMatrix& w, std::size_t rank) {
  if (rank == 0) throw std::invalid_argument("reg_value_dense: rank must be positive");
  const DenseMatrix gram = w.rows() < w.cols() ? matmul_nt(w, w) : matmul_tn(w, w);
  const double g = frobenius_norm(gram);
  const double f = frobenius_norm(w);
  const double r2 = g * g - f * f * f * f / static_cast<double>(rank);
  return std::sqrt(std::max(r2, 0.0));
}

/// exp(R / (√2 ς_min²)) from precomputed R and smallest singular value.
inline double kappa_bound_from(double reg, double sigma_min) {
  if (!(sigma_min > 0.0)) throw std::invalid_argument("kappa_bound: singular matrix");
  return std::exp(reg / (std::numbers::sqrt2 * sigma_min * sigma_min));
}

/// Upper bound on κ(S) in terms of R(S) and the smallest singular value.
inline double kappa_bound(const DenseMatrix& s) {
  const auto sigma = singular_values(s);
  if (sigma.empty() || !(sigma.back() > 0.0)) throw std::invalid_argument("kappa_bound: singular matrix");
  return kappa_bound_from(reg_value(s).value, sigma.back());
}

/// Regularizer of a Tucker core applied to Mat(S)ᵀ so the Gram matrix is
/// r_O x r_O. Requires r_O ≤ r_I·S_W·S_H.
inline DenseMatrix conv_reg_operand(const DenseTensor4& core) {
  const auto& d = core.dims();
  if (d[0] > d[1] * d[2] * d[3]) {
    throw std::invalid_argument("conv regularizer requires r_O <= r_I*S_W*S_H (got r_O=" + std::to_string(d[0]) +
                                ", r_I*S_W*S_H=" + std::to_string(d[1] * d[2] * d[3]) + ")");
  }
  return unfold_output_mode(core).transpose();
}

inline RegularizerEval conv_reg_value(const DenseTensor4& core) { return reg_value(conv_reg_operand(core)); }

/// ∇ of R(Mat(S)ᵀ) with respect to the core, in core layout.
inline DenseTensor4 conv_reg_gradient(const DenseTensor4& core, double floor = kRegFloor) {
  const DenseMatrix g = reg_gradient(conv_reg_operand(core), floor);
  return refold_output_mode(g.transpose(), core.dims());
}

using RegGradientFn = std::function<DenseMatrix(const DenseMatrix&)>;

struct FlowTrace {
  std::vector<double> times;
  std::vector<DenseMatrix> states;  ///< recorded only when requested
  std::vector<double> lhs;
  std::vector<double> rhs;
  double max_violation = 0.0;  ///< max_t (lhs − rhs); 0 at t = 0 by construction
  double max_violation_time = 0.0;
  std::optional<double> diverged_at;
};

struct FlowOptions {
  bool record_states = false;
  RegGradientFn gradient;  ///< defaults to reg_gradient
};

/// Explicit-Euler integration of dS/dt = M − S − β∇R(S) from S(0) = S0,
/// recording both sides of the long-time stability estimate
///   ½‖S(t)−M‖² + 2β∫₀ᵗ e^{τ−t} R(S(τ)) dτ ≤ ½e^{−t}‖S0−M‖² + 2(1−e^{−t})β(1+2β)‖M‖².
/// The memory integral uses the trapezoidal rule on the step grid.
inline FlowTrace stability_flow(const DenseMatrix& s0, const DenseMatrix& m, double beta, double t_end, double dt,
                                const FlowOptions& options = {}) {
  if (!(dt > 0.0) || !(t_end >= dt)) throw std::invalid_argument("stability_flow: need dt > 0 and t_end >= dt");
  if (beta < 0.0) throw std::invalid_argument("stability_flow: beta must be non-negative");
  require_shape(s0.rows() == m.rows() && s0.cols() == m.cols(), "stability_flow S0 vs M");
  const RegGradientFn grad = options.gradient ? options.gradient : RegGradientFn([](const DenseMatrix& s) {
    return reg_gradient(s);
  });

  const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
  const double m_sq = std::pow(frobenius_norm(m), 2);
  const double e0 = 0.5 * std::pow(frobenius_norm(s0 - m), 2);
  const double decay = std::exp(-dt);

  FlowTrace trace;
  trace.times.reserve(steps + 1);
  trace.lhs.reserve(steps + 1);
  trace.rhs.reserve(steps + 1);

  DenseMatrix s = s0;
  double memory = 0.0;
  double reg_prev = reg_value(s).value;
  auto record = [&](double t) {
    const double lhs = 0.5 * std::pow(frobenius_norm(s - m), 2) + 2.0 * beta * memory;
    const double rhs = std::exp(-t) * e0 + 2.0 * (1.0 - std::exp(-t)) * beta * (1.0 + 2.0 * beta) * m_sq;
    trace.times.push_back(t);
    trace.lhs.push_back(lhs);
    trace.rhs.push_back(rhs);
    if (options.record_states) trace.states.push_back(s);
    if (lhs - rhs > trace.max_violation) {
      trace.max_violation = lhs - rhs;
      trace.max_violation_time = t;
    }
  };
  record(0.0);

  for (std::size_t k = 1; k <= steps; ++k) {
    DenseMatrix step = m - s;
    if (beta != 0.0) step.add_scaled(grad(s), -beta);
    s.add_scaled(step, dt);
    const double t = static_cast<double>(k) * dt;
    if (!all_finite(s.values())) {
      trace.diverged_at = t;
      break;
    }
    const double reg = reg_value(s).value;
    memory = decay * memory + 0.5 * dt * (decay * reg_prev + reg);
    reg_prev = reg;
    record(t);
  }
  return trace;
}

}  // namespace rdlt
