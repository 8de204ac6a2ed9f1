#pragma once

// White-box adversarial attacks on a classifier Network: ℓ²-FGSM, ℓ¹-FGSM,
// Jitter and Mixup, each followed by the ℓ∞ clamp around the clean input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdlt/data.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/random.hpp"

namespace rdlt {

enum class AttackKind { fgsm_l2, fgsm_l1, jitter, mixup };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm_l2: return "fgsm_l2";
    case AttackKind::fgsm_l1: return "fgsm_l1";
    case AttackKind::jitter: return "jitter";
    case AttackKind::mixup: return "mixup";
  }
  return "fgsm_l2";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm_l2") return AttackKind::fgsm_l2;
  if (s == "fgsm_l1") return AttackKind::fgsm_l1;
  if (s == "jitter") return AttackKind::jitter;
  if (s == "mixup") return AttackKind::mixup;
  throw std::invalid_argument("unknown attack kind '" + s + "'");
}

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm_l2;
  double epsilon = 0.0;
  std::optional<double> alpha;           ///< step size; ε for FGSM/Jitter, 1 for Mixup
  std::optional<std::size_t> iterations; ///< 1 for FGSM, 5 for Jitter/Mixup
  double jitter_scale = 10.0;
  double jitter_noise = 0.1;
  double mixup_beta = 1e-3;
  bool mixup_kl = true;
  std::optional<double> mixup_fixed_lambda;
  std::vector<double> data_std;  ///< per channel, ℓ¹-FGSM only
  std::uint64_t seed = 0;

  double step_size() const {
    if (alpha) return *alpha;
    return kind == AttackKind::mixup ? 1.0 : epsilon;
  }
  std::size_t iteration_count() const {
    if (iterations) return *iterations;
    return (kind == AttackKind::jitter || kind == AttackKind::mixup) ? 5 : 1;
  }

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("attack: epsilon must be non-negative");
    if (iteration_count() == 0) throw std::invalid_argument("attack: iterations must be at least 1");
    if (kind == AttackKind::fgsm_l1) {
      if (data_std.empty()) throw std::invalid_argument("attack: fgsm_l1 requires data_std");
      for (double s : data_std)
        if (!(s > 0.0)) throw std::invalid_argument("attack: data_std entries must be positive");
    }
    if (mixup_fixed_lambda && (*mixup_fixed_lambda < 0.0 || *mixup_fixed_lambda > 1.0))
      throw std::invalid_argument("attack: mixup lambda must lie in [0, 1]");
  }
};

/// x0 + clip(x − x0, −ε, ε), elementwise.
inline DenseMatrix clamp_linf(const DenseMatrix& x0, const DenseMatrix& x, double eps) {
  require_shape(x0.rows() == x.rows() && x0.cols() == x.cols(), "clamp_linf");
  DenseMatrix out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double base = x0.values()[i];
    out.values()[i] = base + std::max(-eps, std::min(x.values()[i] - base, eps));
  }
  return out;
}

/// Columns whose gradient ∞-norm falls below this are left unperturbed.
inline constexpr double kZeroGradientGuard = 1e-14;

namespace detail {

// x += step · g / ‖g‖_∞, per sample.
inline void normalized_step(DenseMatrix& x, const DenseMatrix& g, std::span<const double> steps) {
  for (std::size_t n = 0; n < x.cols(); ++n) {
    double m = 0.0;
    for (std::size_t f = 0; f < x.rows(); ++f) m = std::max(m, std::abs(g(f, n)));
    if (m < kZeroGradientGuard) continue;
    const double s = steps[n] / m;
    for (std::size_t f = 0; f < x.rows(); ++f) x(f, n) += s * g(f, n);
  }
}

inline std::size_t channel_of(std::size_t feature, std::size_t features, std::size_t channels) {
  if (channels == features) return feature;
  if (channels == 0 || features % channels != 0)
    throw std::invalid_argument("attack: data_std length does not divide the feature count");
  return feature / (features / channels);
}

inline DenseMatrix input_gradient_ce(const Network& net, const DenseMatrix& x, std::span<const int> labels) {
  return loss_and_gradient(net, x, labels).input;
}

inline DenseMatrix onehot(std::span<const int> labels, std::size_t classes) {
  DenseMatrix y(classes, labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) y(static_cast<std::size_t>(labels[n]), n) = 1.0;
  return y;
}

}  // namespace detail

/// One FGSM update of the iterate `x` from the input gradient `g`, projected
/// onto the ε-ball around x0. ℓ²: x + α g/‖g‖_∞ per sample; ℓ¹: x + α·sign(g)/Σ.
inline DenseMatrix fgsm_step(const DenseMatrix& x0, const DenseMatrix& x, const DenseMatrix& g,
                             const AttackSpec& spec) {
  require_shape(g.rows() == x.rows() && g.cols() == x.cols(), "fgsm_step gradient");
  const double alpha = spec.step_size();
  DenseMatrix next = x;
  if (spec.kind == AttackKind::fgsm_l1) {
    if (spec.data_std.empty()) throw std::invalid_argument("attack: fgsm_l1 requires data_std");
    for (std::size_t f = 0; f < next.rows(); ++f) {
      const double sd = spec.data_std[detail::channel_of(f, next.rows(), spec.data_std.size())];
      for (std::size_t n = 0; n < next.cols(); ++n) {
        const double gv = g(f, n);
        const double sign = gv > 0.0 ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
        next(f, n) += alpha * sign / sd;
      }
    }
  } else {
    const std::vector<double> steps(next.cols(), alpha);
    detail::normalized_step(next, g, steps);
  }
  return clamp_linf(x0, next, spec.epsilon);
}

/// FGSM on the cross-entropy loss, iterated `iteration_count()` times.
inline DenseMatrix fgsm(const Network& net, const Batch& batch, const AttackSpec& spec) {
  spec.validate();
  DenseMatrix x = batch.inputs;
  for (std::size_t it = 0; it < spec.iteration_count(); ++it)
    x = fgsm_step(batch.inputs, x, detail::input_gradient_ce(net, x, batch.labels), spec);
  return x;
}

namespace detail {

// Jitter loss Σ_n ‖softmax(s·z/‖z‖_∞) + σ·η − y‖² / scale_n and its gradient
// with respect to the logits z. The ‖z‖_∞ factor is differentiated through
// the arg-max entry.
inline DenseMatrix jitter_logit_gradient(const DenseMatrix& z, std::span<const int> labels, double s, double sigma,
                                         std::span<const double> scale, Rng& rng) {
  const std::size_t k = z.rows();
  DenseMatrix grad(k, z.cols());
  std::vector<double> u(k), p(k), g(k), gu(k);
  for (std::size_t n = 0; n < z.cols(); ++n) {
    std::size_t jmax = 0;
    for (std::size_t i = 0; i < k; ++i)
      if (std::abs(z(i, n)) > std::abs(z(jmax, n))) jmax = i;
    const double m = std::abs(z(jmax, n));
    for (std::size_t i = 0; i < k; ++i) u[i] = m > 0.0 ? s * z(i, n) / m : 0.0;
    const double umax = *std::max_element(u.begin(), u.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += (p[i] = std::exp(u[i] - umax));
    for (std::size_t i = 0; i < k; ++i) p[i] /= sum;
    for (std::size_t i = 0; i < k; ++i) {
      const double target = static_cast<int>(i) == labels[n] ? 1.0 : 0.0;
      g[i] = 2.0 * (p[i] + sigma * rng.normal() - target) / scale[n];
    }
    double gp = 0.0;
    for (std::size_t i = 0; i < k; ++i) gp += g[i] * p[i];
    for (std::size_t i = 0; i < k; ++i) gu[i] = p[i] * (g[i] - gp);
    if (m == 0.0) continue;
    double guz = 0.0;
    for (std::size_t i = 0; i < k; ++i) guz += gu[i] * z(i, n);
    for (std::size_t i = 0; i < k; ++i) grad(i, n) = (s / m) * gu[i];
    grad(jmax, n) -= std::copysign(1.0, z(jmax, n)) * (s / (m * m)) * guz;
  }
  return grad;
}

}  // namespace detail

/// Jitter: iterated normalized-gradient ascent on the noisy softmax MSE loss.
/// From the second iteration the loss is divided by ‖x − x'_k‖_∞ (treated as
/// a per-sample constant).
inline DenseMatrix jitter(const Network& net, const Batch& batch, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const DenseMatrix& x0 = batch.inputs;
  DenseMatrix x = x0;
  const std::vector<double> steps(x.cols(), spec.step_size());
  std::vector<double> scale(x.cols(), 1.0);
  for (std::size_t it = 0; it < spec.iteration_count(); ++it) {
    if (it > 0) {
      for (std::size_t n = 0; n < x.cols(); ++n) {
        double m = 0.0;
        for (std::size_t f = 0; f < x.rows(); ++f) m = std::max(m, std::abs(x(f, n) - x0(f, n)));
        scale[n] = m > 0.0 ? m : 1.0;
      }
    }
    const ForwardPass pass = forward(net, x);
    const DenseMatrix gz =
        detail::jitter_logit_gradient(pass.output, batch.labels, spec.jitter_scale, spec.jitter_noise, scale, rng);
    const DenseMatrix g = backward(net, pass, gz).input;
    detail::normalized_step(x, g, steps);
    x = clamp_linf(x0, x, spec.epsilon);
  }
  return x;
}

/// Mixup with scale invariance: ascent on
///   β Σ_{k=1..5} CE(f(x'/2^k), y) − KL(softmax f(x') ‖ softmax f(x)),
/// followed by x' ← λx' + (1−λ)(x' + δ), λ ~ Beta(β, β) per sample, and the
/// ℓ∞ clamp. The KL term can be disabled with `mixup_kl = false`.
inline DenseMatrix mixup(const Network& net, const Batch& batch, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const DenseMatrix& x0 = batch.inputs;
  const std::size_t b = x0.cols();
  DenseMatrix x = x0;
  const DenseMatrix clean_prob = softmax_columns(predict(net, x0));
  const double alpha = spec.step_size();
  for (std::size_t it = 0; it < spec.iteration_count(); ++it) {
    DenseMatrix g(x.rows(), b);
    double scale = 1.0;
    for (int k = 1; k <= 5; ++k) {
      scale *= 0.5;
      DenseMatrix xs = x * scale;
      const ForwardPass pass = forward(net, xs);
      LossResult ce = cross_entropy(pass.output, batch.labels);
      ce.grad *= static_cast<double>(b);  // per-sample sum
      g.add_scaled(backward(net, pass, ce.grad).input, spec.mixup_beta * scale);
    }
    if (spec.mixup_kl) {
      const ForwardPass pass = forward(net, x);
      const DenseMatrix p = softmax_columns(pass.output);
      DenseMatrix gz(p.rows(), b);
      for (std::size_t n = 0; n < b; ++n) {
        double hp = 0.0;
        for (std::size_t i = 0; i < p.rows(); ++i)
          hp += p(i, n) * (std::log(std::max(p(i, n), 1e-300)) - std::log(std::max(clean_prob(i, n), 1e-300)));
        for (std::size_t i = 0; i < p.rows(); ++i) {
          const double h = std::log(std::max(p(i, n), 1e-300)) - std::log(std::max(clean_prob(i, n), 1e-300));
          gz(i, n) = -p(i, n) * (h - hp);  // −∂KL/∂z
        }
      }
      g += backward(net, pass, gz).input;
    }
    std::vector<double> steps(b);
    for (std::size_t n = 0; n < b; ++n) {
      const double lambda = spec.mixup_fixed_lambda ? *spec.mixup_fixed_lambda : rng.beta(spec.mixup_beta, spec.mixup_beta);
      steps[n] = (1.0 - lambda) * alpha;
    }
    detail::normalized_step(x, g, steps);
    x = clamp_linf(x0, x, spec.epsilon);
  }
  return x;
}

/// Dispatch on spec.kind. FGSM does not consume randomness.
inline DenseMatrix attack(const Network& net, const Batch& batch, const AttackSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case AttackKind::fgsm_l2:
    case AttackKind::fgsm_l1: return fgsm(net, batch, spec);
    case AttackKind::jitter: return jitter(net, batch, spec, rng);
    case AttackKind::mixup: return mixup(net, batch, spec, rng);
  }
  return batch.inputs;
}

inline constexpr std::size_t kAttackChunk = 256;

/// Accuracy (percent) of `target` on examples crafted against `source`.
inline double blackbox_transfer(const Network& source, const Network& target, const Dataset& data,
                                const AttackSpec& spec) {
  if (source.input_dim() != target.input_dim() || source.output_dim() != target.output_dim())
    throw std::invalid_argument("blackbox_transfer: source and target shapes differ");
  if (data.features() != target.input_dim())
    throw std::invalid_argument("blackbox_transfer: dataset features do not match the model input");
  Rng rng(spec.seed);
  std::size_t hit = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kAttackChunk) {
    idx.resize(std::min(kAttackChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Batch b = data.batch(idx);
    const DenseMatrix adv = attack(source, b, spec, rng);
    const auto pred = argmax_columns(predict(target, adv));
    for (std::size_t n = 0; n < idx.size(); ++n) hit += pred[n] == b.labels[n] ? 1 : 0;
  }
  return data.size() ? 100.0 * static_cast<double>(hit) / static_cast<double>(data.size()) : 0.0;
}

/// White-box adversarial accuracy in percent.
inline double evaluate_under_attack(const Network& net, const Dataset& data, const AttackSpec& spec) {
  return blackbox_transfer(net, net, data, spec);
}

}  // namespace rdlt
