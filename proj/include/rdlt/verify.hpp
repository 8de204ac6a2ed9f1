#pragma once

// Numerical property suite for the regularizer, linear algebra kernels,
// layers, engine, attacks and persistence. Every check is seeded and
// reports its worst observed metric against a fixed tolerance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rdlt/attacks.hpp"
#include "rdlt/checkpoint.hpp"
#include "rdlt/data.hpp"
#include "rdlt/diagnostics.hpp"
#include "rdlt/engine.hpp"
#include "rdlt/format.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/linalg.hpp"
#include "rdlt/random.hpp"
#include "rdlt/regularizer.hpp"

namespace rdlt {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;      ///< worst observed metric (error, violation, ...)
  double tolerance = 0.0;  ///< pass threshold the metric was compared against
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 20240607;
  bool flip_reg_gradient_sign = false;  ///< mutation hook: negate ∇R everywhere the suite uses it
};

namespace verify {

/// ∇R as seen by the suite (respecting the mutation hook).
inline DenseMatrix reg_grad(const DenseMatrix& s, const VerifyOptions& o) {
  DenseMatrix g = reg_gradient(s);
  if (o.flip_reg_gradient_sign) g *= -1.0;
  return g;
}

inline double rel(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Gaussian matrix with singular values pushed away from zero.
inline DenseMatrix well_conditioned(Rng& rng, std::size_t r) {
  DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
  const SvdResult sv = svd(s);
  std::vector<double> sig = sv.singular_values;
  for (double& x : sig) x = 0.2 + x;
  return matmul_nt(matmul(sv.left, DenseMatrix::diagonal(sig)), sv.right);
}

template <class F>
CheckResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline CheckResult finish(double worst, double tol, std::string detail = {}, bool strict_less = false) {
  CheckResult r;
  r.worst = worst;
  r.tolerance = tol;
  r.passed = std::isfinite(worst) && (strict_less ? worst < tol : worst <= tol);
  r.detail = std::move(detail);
  return r;
}

// Central differences of R, norm-wise relative error against the closed form.
inline CheckResult reg_gradient_fd(const VerifyOptions& o, std::size_t per_rank = 25,
                                   std::vector<std::size_t> ranks = {2, 4, 8, 16}, double tol = 1e-6) {
  return timed("regularizer gradient vs finite differences", [&] {
    Rng rng(o.seed ^ 0x1);
    double worst = 0.0;
    std::size_t n = 0;
    for (std::size_t r : ranks)
      for (std::size_t k = 0; k < per_rank; ++k, ++n) {
        DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
        const DenseMatrix g = reg_grad(s, o);
        DenseMatrix fd(r, r);
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double x = s.values()[i];
          const double h = 1e-5 * std::max(1.0, std::abs(x));
          s.values()[i] = x + h;
          const double up = reg_value(s).value;
          s.values()[i] = x - h;
          const double dn = reg_value(s).value;
          s.values()[i] = x;
          fd.values()[i] = (up - dn) / (2.0 * h);
        }
        worst = std::max(worst, frobenius_norm(fd - g) / std::max(frobenius_norm(g), 1e-300));
      }
    return finish(worst, tol, std::to_string(n) + " matrices");
  });
}

inline CheckResult unitary_invariance(const VerifyOptions& o, std::size_t samples = 100, double tol = 1e-9) {
  return timed("regularizer unitary invariance", [&] {
    Rng rng(o.seed ^ 0x2);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 1 + rng.below(16);
      const std::size_t n = r + rng.below(64 - r + 1);
      const std::size_t m = r + rng.below(64 - r + 1);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const DenseMatrix u = rng.orthonormal(n, r), v = rng.orthonormal(m, r);
      const double a = reg_value(s).value;
      const double b = reg_value_dense(matmul_nt(matmul(u, s), v), r);
      worst = std::max(worst, std::abs(a - b) / std::max(1.0, a));
    }
    return finish(worst, tol, std::to_string(samples) + " triples, n <= 64");
  });
}

inline CheckResult kappa_bound_holds(const VerifyOptions& o, std::size_t samples = 1000, std::size_t r_max = 32) {
  return timed("condition-number bound kappa <= exp(R/(sqrt2 sigma_r^2))", [&] {
    Rng rng(o.seed ^ 0x3);
    std::size_t violations = 0;
    double worst_ratio = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 1 + rng.below(r_max);
      const DenseMatrix s = well_conditioned(rng, r);
      const auto sig = singular_values(s);
      const double kappa = sig.front() / sig.back();
      const double bound = kappa_bound_from(reg_value(s).value, sig.back());
      if (!(kappa <= bound)) ++violations;
      worst_ratio = std::max(worst_ratio, std::log(kappa) / std::max(std::log(bound), 1e-300));
    }
    auto r = finish(static_cast<double>(violations), 0.0,
                    std::to_string(samples) + " matrices, max log(kappa)/log(bound) " + format_double(worst_ratio));
    return r;
  });
}

inline CheckResult variance_identity(const VerifyOptions& o, std::size_t samples = 1000, double tol = 1e-10) {
  return timed("variance identity R^2/r = Var(sigma^2)", [&] {
    Rng rng(o.seed ^ 0x4);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 2 + rng.below(31);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const auto sig = singular_values(s);
      double mean = 0.0;
      for (double x : sig) mean += x * x;
      mean /= static_cast<double>(r);
      double var = 0.0;
      for (double x : sig) var += (x * x - mean) * (x * x - mean);
      var /= static_cast<double>(r);
      const double R = reg_value(s).value;
      worst = std::max(worst, rel(R * R / static_cast<double>(r), var));
    }
    return finish(worst, tol, std::to_string(samples) + " matrices");
  });
}

inline CheckResult nagy_inequality(const VerifyOptions& o, std::size_t samples = 1000) {
  return timed("Nagy step R^2/r >= (s1^2 - sr^2)^2/(2r)", [&] {
    Rng rng(o.seed ^ 0x5);
    std::size_t violations = 0;
    double min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 2 + rng.below(31);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const auto sig = singular_values(s);
      const double R = reg_value(s).value;
      const double lhs = R * R / static_cast<double>(r);
      const double d = sig.front() * sig.front() - sig.back() * sig.back();
      const double rhs = d * d / (2.0 * static_cast<double>(r));
      // r = 2 is an equality case, so allow rounding at the last few ulps
      if (!(lhs >= rhs * (1.0 - 1e-12))) ++violations;
      min_margin = std::min(min_margin, (lhs - rhs) / lhs);
    }
    return finish(static_cast<double>(violations), 0.0,
                  std::to_string(samples) + " matrices, min relative margin " + format_double(min_margin));
  });
}

inline CheckResult isotropy_orthogonality(const VerifyOptions& o, std::size_t samples = 1000, double tol = 1e-10) {
  return timed("residual orthogonal to identity <S^T S - a^2 I, I> = 0", [&] {
    Rng rng(o.seed ^ 0x6);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 1 + rng.below(32);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const DenseMatrix gram = matmul_tn(s, s);
      const double a2 = reg_value(s).alpha_sq;
      double trace = 0.0;
      for (std::size_t i = 0; i < r; ++i) trace += gram(i, i) - a2;
      worst = std::max(worst, std::abs(trace) / std::max(1.0, frobenius_norm(gram)));
    }
    return finish(worst, tol, std::to_string(samples) + " matrices");
  });
}

inline CheckResult trace_identity(const VerifyOptions& o, std::size_t samples = 1000, double tol = 1e-8) {
  return timed("trace identity <grad R, S> = 2R", [&] {
    Rng rng(o.seed ^ 0x7);
    double worst = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 2 + rng.below(31);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const double R = reg_value(s).value;
      if (R < kRegFloor) continue;
      ++used;
      worst = std::max(worst, rel(inner(reg_grad(s, o), s), 2.0 * R));
    }
    return finish(worst, tol, std::to_string(used) + " matrices above the floor");
  });
}

inline CheckResult regularizer_descent(const VerifyOptions& o, std::size_t samples = 200) {
  return timed("small gradient step decreases R", [&] {
    Rng rng(o.seed ^ 0x8);
    std::size_t failures = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 2 + rng.below(15);
      const DenseMatrix s = rng.gaussian_matrix(r, r, 1.0);
      const double R = reg_value(s).value;
      const DenseMatrix g = reg_grad(s, o);
      const double eta = 1e-3 * frobenius_norm(s) / frobenius_norm(g);
      DenseMatrix next = s;
      next.add_scaled(g, -eta);
      if (!(reg_value(next).value < R)) ++failures;
    }
    return finish(static_cast<double>(failures), 0.0, std::to_string(samples) + " matrices");
  });
}

struct FlowSweep {
  CheckResult slack;
  CheckResult halving;
  CheckResult order;
  CheckResult linear_decay;
};

/// Stability estimate over random (S0, M) pairs and β grid.
///  slack:   max_t (lhs − rhs)/(1 + ‖M‖²) at dt must be ≤ tol
///  halving: every positive violation at dt shrinks ≥ 1.5× at dt/2
///  order:   Euler endpoint error at t = 1 against a dt/8 reference shrinks ≥ 1.5× when dt halves
///  linear decay (β = 0, M = 0): S(t) = e^{−t}S0 within the first-order Euler budget dt, and lhs ≤ rhs
inline FlowSweep stability_sweep(const VerifyOptions& o, std::size_t pairs = 20,
                                 std::vector<double> betas = {0.0, 0.05, 0.1, 0.5}, double dt = 1e-3,
                                 double t_end = 10.0, double tol = 1e-3) {
  FlowSweep out;
  FlowOptions fo;
  fo.gradient = [o](const DenseMatrix& s) { return reg_grad(s, o); };
  Rng rng(o.seed ^ 0x9);
  std::vector<std::pair<DenseMatrix, DenseMatrix>> cases;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t r = 2 + rng.below(7);
    DenseMatrix s0 = rng.gaussian_matrix(r, r, 1.0);
    DenseMatrix m = rng.gaussian_matrix(r, r, 1.0);
    cases.emplace_back(std::move(s0), std::move(m));
  }
  out.slack = timed("stability estimate slack at dt", [&] {
    double worst = 0.0, worst_halving = std::numeric_limits<double>::infinity();
    std::size_t positive = 0, halving_fail = 0, diverged = 0;
    for (const auto& [s0, m] : cases)
      for (double beta : betas) {
        const FlowTrace a = stability_flow(s0, m, beta, t_end, dt, fo);
        const double scale = 1.0 + std::pow(frobenius_norm(m), 2);
        if (a.diverged_at) ++diverged;
        worst = std::max(worst, a.max_violation / scale);
        if (a.max_violation > 0.0) {
          ++positive;
          const FlowTrace b = stability_flow(s0, m, beta, t_end, dt / 2, fo);
          const double ratio = b.max_violation > 0.0 ? a.max_violation / b.max_violation
                                                     : std::numeric_limits<double>::infinity();
          worst_halving = std::min(worst_halving, ratio);
          if (!(ratio >= 1.5)) ++halving_fail;
        }
      }
    out.halving = finish(static_cast<double>(halving_fail), 0.0,
                         std::to_string(positive) + " runs with positive violation" +
                             (positive ? ", min shrink ratio " + format_double(worst_halving) : std::string()));
    out.halving.name = "stability violation shrinks >= 1.5x under dt halving";
    if (diverged) worst = std::numeric_limits<double>::infinity();
    return finish(worst, tol,
                  std::to_string(cases.size() * betas.size()) + " runs, " + std::to_string(diverged) + " diverged");
  });
  out.order = timed("Euler flow first-order convergence", [&] {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& [s0, m] : cases)
      for (double beta : betas) {
        FlowOptions f = fo;
        f.record_states = true;
        const auto end_state = [&](double h) { return stability_flow(s0, m, beta, 1.0, h, f).states.back(); };
        const DenseMatrix ref = end_state(dt / 8);
        const double e1 = frobenius_norm(end_state(dt) - ref);
        const double e2 = frobenius_norm(end_state(dt / 2) - ref);
        worst = std::min(worst, e2 > 0.0 ? e1 / e2 : std::numeric_limits<double>::infinity());
      }
    CheckResult r = finish(-worst, -1.5, "min error ratio " + format_double(worst) + " (needs >= 1.5)");
    r.worst = worst;
    r.tolerance = 1.5;
    return r;
  });
  out.linear_decay = timed("linear decay case beta=0, M=0", [&] {
    const DenseMatrix s0 = cases.front().first;
    const DenseMatrix zero(s0.rows(), s0.cols());
    FlowOptions f = fo;
    f.record_states = true;
    const FlowTrace tr = stability_flow(s0, zero, 0.0, 1.0, 1e-4, f);
    double worst = 0.0, worst_violation = 0.0;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      DenseMatrix exact = s0;
      exact *= std::exp(-tr.times[k]);
      worst = std::max(worst, frobenius_norm(tr.states[k] - exact) / frobenius_norm(s0));
      worst_violation = std::max(worst_violation, tr.lhs[k] - tr.rhs[k]);
    }
    CheckResult r = finish(worst, 1e-4, "dt=1e-4, max lhs-rhs " + format_double(worst_violation));
    r.passed = r.passed && worst_violation <= 0.0;
    return r;
  });
  return out;
}

inline CheckResult svd_reconstruction(const VerifyOptions& o, std::size_t samples = 1000, std::size_t n_max = 64,
                                      double tol = 1e-9) {
  return timed("SVD reconstruction and orthonormal factors", [&] {
    Rng rng(o.seed ^ 0xA);
    double worst = 0.0, worst_orth = 0.0;
    bool sorted = true;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t m = 1 + rng.below(n_max), n = 1 + rng.below(n_max);
      const DenseMatrix a = rng.gaussian_matrix(m, n, 1.0);
      const SvdResult sv = svd(a);
      worst = std::max(worst, frobenius_norm(sv.reconstruct() - a) / std::max(1.0, frobenius_norm(a)));
      worst_orth = std::max({worst_orth, orthonormality_defect(sv.left), orthonormality_defect(sv.right)});
      sorted = sorted && std::is_sorted(sv.singular_values.rbegin(), sv.singular_values.rend());
    }
    CheckResult r = finish(worst, tol, "orthonormality " + format_double(worst_orth));
    r.passed = r.passed && sorted && worst_orth <= 1e-10;
    return r;
  });
}

inline CheckResult orth_contract(const VerifyOptions& o, std::size_t samples = 500, double tol = 1e-10) {
  return timed("orth: orthonormal columns spanning the input", [&] {
    Rng rng(o.seed ^ 0xB);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t n = 1 + rng.below(40);
      const std::size_t c = 1 + rng.below(n);
      DenseMatrix a = rng.gaussian_matrix(n, c, 1.0);
      if (c > 1 && k % 3 == 0) a.set_col(c - 1, a.col(0));  // rank-deficient
      const DenseMatrix q = orth(a);
      const double proj = frobenius_norm(matmul(q, matmul_tn(q, a)) - a);
      worst = std::max({worst, orthonormality_defect(q), proj / std::max(1.0, frobenius_norm(a))});
      if (q.cols() != c) worst = std::numeric_limits<double>::infinity();
    }
    return finish(worst, tol, std::to_string(samples) + " matrices");
  });
}

inline CheckResult truncation_monotone(const VerifyOptions& o, std::size_t samples = 500) {
  return timed("threshold rank monotone in theta", [&] {
    Rng rng(o.seed ^ 0xC);
    std::size_t failures = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 1 + rng.below(20);
      auto sig = singular_values(rng.gaussian_matrix(r, r, 1.0));
      std::size_t prev = r + 1;
      for (double theta = 0.0; theta < 8.0; theta += 0.05) {
        const std::size_t rank = threshold_rank(sig, theta, 1);
        if (rank > prev) ++failures;
        prev = rank;
      }
    }
    return finish(static_cast<double>(failures), 0.0, std::to_string(samples) + " spectra");
  });
}

inline CheckResult kappa_scale_invariance(const VerifyOptions& o, std::size_t samples = 500, double tol = 1e-10) {
  return timed("condition number scale invariance", [&] {
    Rng rng(o.seed ^ 0xD);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t r = 1 + rng.below(16);
      const DenseMatrix a = well_conditioned(rng, r);
      DenseMatrix b = a;
      const double c = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::exp(rng.uniform(-5.0, 5.0));
      b *= c;
      worst = std::max(worst, rel(condition_number(a), condition_number(b)));
    }
    return finish(worst, tol, std::to_string(samples) + " matrices");
  });
}

inline CheckResult augmentation_lossless(const VerifyOptions& o, std::size_t samples = 200, double tol = 1e-10) {
  return timed("basis augmentation is lossless", [&] {
    Rng rng(o.seed ^ 0xE);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t n_out = 2 + rng.below(40), n_in = 2 + rng.below(40);
      const std::size_t r = 1 + rng.below(std::min(n_out, n_in));
      const FactorizedLinear layer = FactorizedLinear::random(n_out, n_in, r, Activation::identity, rng);
      DenseMatrix gu = rng.gaussian_matrix(n_out, r, 1.0), gv = rng.gaussian_matrix(n_in, r, 1.0);
      if (k % 4 == 0) {  // gradients inside the current span
        gu = layer.U;
        gv = layer.V;
      }
      const AugmentedState st = augment(layer, gu, gv);
      const double err = frobenius_norm(matmul_nt(matmul(st.U_hat, st.S_hat), st.V_hat) - layer.dense_weight());
      worst = std::max({worst, err / std::max(1.0, frobenius_norm(layer.S)), orthonormality_defect(st.U_hat) * 1e-2,
                        orthonormality_defect(st.V_hat) * 1e-2});
    }
    return finish(worst, tol, std::to_string(samples) + " layers (incl. in-span gradients)");
  });
}

inline CheckResult conv_equivalence(const VerifyOptions& o, std::size_t samples = 100, double tol = 1e-8) {
  return timed("low-rank convolution equals dense convolution", [&] {
    Rng rng(o.seed ^ 0xF);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t no = 1 + rng.below(5), ni = 1 + rng.below(4);
      const std::size_t sw = 1 + rng.below(3), sh = 1 + rng.below(3);
      const std::size_t w = 1 + rng.below(7), h = 1 + rng.below(7), b = 1 + rng.below(3);
      const std::size_t ri = 1 + rng.below(ni);
      const std::size_t ro = 1 + rng.below(std::min(no, ri * sw * sh));
      LowRankConv2D layer = LowRankConv2D::random(no, ni, sw, sh, ro, ri, w, h, Activation::identity, rng);
      for (double& v : layer.bias) v = rng.normal();
      const DenseMatrix x = rng.gaussian_matrix(ni * w * h, b, 1.0);
      const DenseMatrix fast = forward_conv_lowrank(layer, x);
      const DenseMatrix slow = dense_convolution(layer.dense_kernel(), layer.bias, x, w, h);
      worst = std::max(worst, frobenius_norm(fast - slow) / std::max(1.0, frobenius_norm(slow)));
    }
    return finish(worst, tol, std::to_string(samples) + " configurations");
  });
}

/// Per-block relative error ‖fd − g‖/max(‖g‖, ‖fd‖) for every parameter block
/// and the input, central differences with step 1e-6·max(1,|θ|).
inline double network_gradient_error(const Network& net, const DenseMatrix& x, std::span<const int> labels,
                                     std::string* worst_block = nullptr) {
  const NetworkGradient g = loss_and_gradient(net, x, labels);
  double worst = 0.0;
  auto fd_block = [&](const std::string& name, std::span<const double> analytic,
                      const std::function<std::span<double>(Network&, DenseMatrix&)>& view) {
    Network work = net;
    DenseMatrix xi = x;
    std::span<double> p = view(work, xi);
    std::vector<double> fd(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = p[i];
      const double h = 1e-6 * std::max(1.0, std::abs(v));
      p[i] = v + h;
      const double up = loss_value(work, xi, labels);
      p[i] = v - h;
      const double dn = loss_value(work, xi, labels);
      p[i] = v;
      fd[i] = (up - dn) / (2.0 * h);
    }
    double num = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (fd[i] - analytic[i]) * (fd[i] - analytic[i]);
      na += analytic[i] * analytic[i];
      nf += fd[i] * fd[i];
    }
    const double denom = std::sqrt(std::max(na, nf));
    const double e = denom > 1e-14 ? std::sqrt(num) / denom : std::sqrt(num);
    if (e > worst) {
      worst = e;
      if (worst_block) *worst_block = name;
    }
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string tag = "layer " + std::to_string(l) + " ";
    if (std::holds_alternative<FactorizedLinear>(net.layers[l])) {
      const auto& lg = std::get<LinearGrad>(g.layers[l]);
      auto lin = [l](Network& n) -> FactorizedLinear& { return std::get<FactorizedLinear>(n.layers[l]); };
      fd_block(tag + "U", lg.U.values(), [&](Network& n, DenseMatrix&) { return lin(n).U.values(); });
      fd_block(tag + "S", lg.S.values(), [&](Network& n, DenseMatrix&) { return lin(n).S.values(); });
      fd_block(tag + "V", lg.V.values(), [&](Network& n, DenseMatrix&) { return lin(n).V.values(); });
      fd_block(tag + "bias", lg.bias, [&](Network& n, DenseMatrix&) { return std::span<double>(lin(n).bias); });
    } else {
      const auto& cg = std::get<ConvGrad>(g.layers[l]);
      auto conv = [l](Network& n) -> LowRankConv2D& { return std::get<LowRankConv2D>(n.layers[l]); };
      fd_block(tag + "U_out", cg.U_out.values(), [&](Network& n, DenseMatrix&) { return conv(n).U_out.values(); });
      fd_block(tag + "U_in", cg.U_in.values(), [&](Network& n, DenseMatrix&) { return conv(n).U_in.values(); });
      fd_block(tag + "core", cg.core.values(), [&](Network& n, DenseMatrix&) { return conv(n).core.values(); });
      fd_block(tag + "bias", cg.bias, [&](Network& n, DenseMatrix&) { return std::span<double>(conv(n).bias); });
    }
  }
  fd_block("input", g.input.values(), [](Network&, DenseMatrix& xi) { return xi.values(); });
  return worst;
}

/// Small 2-layer dense network (relu hidden) and a conv + dense network.
inline std::vector<std::pair<std::string, Network>> gradient_test_networks(Rng& rng) {
  std::vector<std::pair<std::string, Network>> nets;
  auto randomize_bias = [&](Network& n) {
    for (auto& l : n.layers) std::visit([&](auto& x) { for (double& b : x.bias) b = 0.1 * rng.normal(); }, l);
  };
  {
    Network n;
    n.layers.emplace_back(FactorizedLinear::random(7, 5, 3, Activation::relu, rng));
    n.layers.emplace_back(FactorizedLinear::random(3, 7, 2, Activation::softmax, rng));
    randomize_bias(n);
    nets.emplace_back("dense relu", std::move(n));
  }
  {
    Network n;
    n.layers.emplace_back(FactorizedLinear::random(6, 4, 4, Activation::tanh, rng));
    n.layers.emplace_back(FactorizedLinear::random(3, 6, 3, Activation::softmax, rng));
    randomize_bias(n);
    nets.emplace_back("dense tanh", std::move(n));
  }
  {
    Network n;
    n.layers.emplace_back(LowRankConv2D::random(3, 2, 3, 3, 2, 2, 4, 4, Activation::tanh, rng));
    n.layers.emplace_back(FactorizedLinear::random(3, 48, 3, Activation::softmax, rng));
    randomize_bias(n);
    nets.emplace_back("conv tanh + dense", std::move(n));
  }
  {
    Network n;
    n.layers.emplace_back(LowRankConv2D::random(4, 3, 3, 2, 3, 2, 3, 5, Activation::relu, rng));
    n.layers.emplace_back(FactorizedLinear::random(2, 60, 2, Activation::softmax, rng));
    randomize_bias(n);
    nets.emplace_back("conv relu + dense", std::move(n));
  }
  return nets;
}

inline CheckResult network_gradients(const VerifyOptions& o, std::size_t batches = 5, double tol = 1e-5) {
  return timed("network gradients vs finite differences", [&] {
    Rng rng(o.seed ^ 0x10);
    double worst = 0.0;
    std::string where;
    for (auto& [name, net] : gradient_test_networks(rng))
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t bs = 1 + rng.below(4);
        const DenseMatrix x = rng.gaussian_matrix(net.input_dim(), bs, 1.0);
        std::vector<int> labels(bs);
        for (int& y : labels) y = static_cast<int>(rng.below(net.output_dim()));
        std::string block;
        const double e = network_gradient_error(net, x, labels, &block);
        if (e > worst) {
          worst = e;
          where = name + ", " + block;
        }
      }
    return finish(worst, tol, where.empty() ? "" : "worst block: " + where);
  });
}

inline Network toy_classifier(Rng& rng, std::size_t n_in = 4, std::size_t hidden = 8, std::size_t classes = 3) {
  Network n;
  n.layers.emplace_back(FactorizedLinear::random(hidden, n_in, std::min<std::size_t>(4, std::min(hidden, n_in)),
                                                 Activation::relu, rng));
  n.layers.emplace_back(FactorizedLinear::random(classes, hidden, std::min<std::size_t>(2, classes), Activation::softmax,
                                                 rng));
  return n;
}

/// ‖x' − x‖∞ ≤ ε + slack for every attack; ε = 0 neutrality.
inline CheckResult attack_clamp(const VerifyOptions& o, std::size_t inputs = 1000, double slack = 1e-12) {
  return timed("attack perturbations stay in the eps ball", [&] {
    Rng rng(o.seed ^ 0x11);
    const Network net = toy_classifier(rng);
    double worst = 0.0;
    bool neutral = true;
    const std::size_t per_batch = 50;
    for (AttackKind kind : {AttackKind::fgsm_l2, AttackKind::fgsm_l1, AttackKind::jitter, AttackKind::mixup})
      for (std::size_t start = 0; start < inputs; start += per_batch) {
        Batch b{rng.gaussian_matrix(net.input_dim(), per_batch, 1.0), std::vector<int>(per_batch)};
        for (int& y : b.labels) y = static_cast<int>(rng.below(net.output_dim()));
        AttackSpec spec;
        spec.kind = kind;
        spec.data_std = {0.5 + rng.uniform()};
        spec.epsilon = rng.uniform(0.0, 0.5);
        spec.seed = rng.next_u64();
        Rng arng(spec.seed);
        const DenseMatrix adv = attack(net, b, spec, arng);
        worst = std::max(worst, max_abs((adv - b.inputs).values()) - spec.epsilon);
        spec.epsilon = 0.0;
        Rng zrng(spec.seed);
        neutral = neutral && attack(net, b, spec, zrng) == b.inputs;
      }
    CheckResult r = finish(worst, slack, neutral ? "eps=0 neutral" : "eps=0 changed the input");
    r.passed = r.passed && neutral;
    return r;
  });
}

inline CheckResult checkpoint_roundtrip(const VerifyOptions& o) {
  return timed("checkpoint round trip is bit-exact", [&] {
    Rng rng(o.seed ^ 0x12);
    std::size_t failures = 0;
    for (auto& [name, net] : gradient_test_networks(rng)) {
      Checkpoint ck{net, "{\"probe\": true}", rng.next_u64()};
      const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
      bool same = back.seed == ck.seed && back.config_text == ck.config_text &&
                  back.network.layers.size() == net.layers.size();
      for (std::size_t l = 0; same && l < net.layers.size(); ++l)
        same = encode_checkpoint(Checkpoint{Network{{back.network.layers[l]}}, "", 0}) ==
               encode_checkpoint(Checkpoint{Network{{net.layers[l]}}, "", 0});
      same = same && parameter_count(back.network) == parameter_count(net);
      if (!same) ++failures;
    }
    return finish(static_cast<double>(failures), 0.0, "4 networks incl. Tucker factors");
  });
}

inline CheckResult report_bound_consistency(const VerifyOptions& o, std::size_t samples = 200) {
  return timed("spectral report rows satisfy kappa <= bound", [&] {
    Rng rng(o.seed ^ 0x13);
    std::size_t violations = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      Network n;
      const std::size_t a = 2 + rng.below(20), b = 2 + rng.below(20);
      n.layers.emplace_back(FactorizedLinear::random(a, b, 1 + rng.below(std::min(a, b)), Activation::relu, rng));
      n.layers.emplace_back(LowRankConv2D::random(3, 2, 3, 3, 2, 2, 2, 2, Activation::relu, rng));
      for (const auto& row : spectral_report(n).layers)
        if (!(row.kappa <= row.kappa_bound)) ++violations;
    }
    return finish(static_cast<double>(violations), 0.0, std::to_string(samples) + " networks");
  });
}

inline CheckResult sensitivity_bound_holds(const VerifyOptions& o, std::size_t samples = 100) {
  return timed("measured sensitivity <= product of condition numbers", [&] {
    Rng rng(o.seed ^ 0x14);
    Network net;
    net.layers.emplace_back(FactorizedLinear::random(6, 6, 6, Activation::identity, rng));
    net.layers.emplace_back(FactorizedLinear::random(6, 6, 6, Activation::identity, rng));
    const double bound = sensitivity_bound(net);
    double worst = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const DenseMatrix x = rng.gaussian_matrix(6, 1 + rng.below(4), 1.0);
      const DenseMatrix d = rng.gaussian_matrix(x.rows(), x.cols(), std::exp(rng.uniform(-6.0, 0.0)));
      worst = std::max(worst, measured_sensitivity(net, x, d) - bound);
    }
    return finish(worst, 1e-8, "bound " + format_double(bound));
  });
}

/// Short regularized training run asserting the engine invariants each step.
inline CheckResult engine_invariants(const VerifyOptions& o, std::size_t epochs = 3) {
  return timed("engine invariants during training", [&] {
    Rng rng(o.seed ^ 0x15);
    const Dataset data = synth_spirals(3, 40, 0.1, o.seed);
    Network net;
    net.layers.emplace_back(FactorizedLinear::random(16, 2, 2, Activation::relu, rng));
    net.layers.emplace_back(FactorizedLinear::random(16, 16, 4, Activation::relu, rng));
    net.layers.emplace_back(FactorizedLinear::random(3, 16, 2, Activation::softmax, rng));
    EngineConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.local_steps = 3;
    cfg.batch_size = 30;
    cfg.check_invariants = true;
    cfg.seed = o.seed;
    double worst_aug = 0.0, worst_orth = 0.0;
    bool ranks_ok = true;
    TrainHooks hooks;
    hooks.on_step = [&](std::size_t, std::size_t, const StepReport& rep) {
      for (const auto& l : rep.layers) {
        worst_aug = std::max(worst_aug, l.augmentation_defect);
        worst_orth = std::max(worst_orth, l.orthonormality_defect);
        ranks_ok = ranks_ok && l.rank_after <= std::min(l.augmented_rank, 2 * l.rank_before) &&
                   (l.rank_after >= cfg.rank_min || l.rank_after == l.augmented_rank);
      }
    };
    train(net, data, cfg, epochs, nullptr, hooks);
    CheckResult r = finish(worst_aug, 1e-10, "orthonormality " + format_double(worst_orth));
    r.passed = r.passed && worst_orth <= 1e-8 && ranks_ok;
    return r;
  });
}

}  // namespace verify

/// Full suite in a fixed order.
inline std::vector<CheckResult> run_verify(const VerifyOptions& o = {}) {
  using namespace verify;
  std::vector<CheckResult> out;
  out.push_back(reg_gradient_fd(o));
  out.push_back(unitary_invariance(o));
  out.push_back(kappa_bound_holds(o));
  out.push_back(variance_identity(o));
  out.push_back(nagy_inequality(o));
  out.push_back(isotropy_orthogonality(o));
  out.push_back(trace_identity(o));
  out.push_back(regularizer_descent(o));
  const FlowSweep flow = stability_sweep(o);
  out.push_back(flow.slack);
  out.push_back(flow.halving);
  out.push_back(flow.order);
  out.push_back(flow.linear_decay);
  out.push_back(svd_reconstruction(o));
  out.push_back(orth_contract(o));
  out.push_back(truncation_monotone(o));
  out.push_back(kappa_scale_invariance(o));
  out.push_back(augmentation_lossless(o));
  out.push_back(conv_equivalence(o));
  out.push_back(network_gradients(o));
  out.push_back(attack_clamp(o));
  out.push_back(checkpoint_roundtrip(o));
  out.push_back(report_bound_consistency(o));
  out.push_back(sensitivity_bound_holds(o));
  out.push_back(engine_invariants(o));
  return out;
}

inline std::string format_verify_table(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  for (const auto& r : results) {
    os << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ')
       << "worst=" << format_double(r.worst) << " tol=" << format_double(r.tolerance);
    char t[32];
    std::snprintf(t, sizeof t, " (%.2fs)", r.seconds);
    os << t;
    if (!r.detail.empty()) os << "  " << r.detail;
    os << '\n';
  }
  return os.str();
}

}  // namespace rdlt
