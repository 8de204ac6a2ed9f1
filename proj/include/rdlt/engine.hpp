#pragma once

// Rank-adaptive low-rank training with the condition-number regularizer.
//
// One iteration per batch:
//   1. forward/backward at the current factors gives G_U, G_V (and ∇bias);
//   2. every layer augments its bases to [U | G_U], [V | G_V] (orthonormalized)
//      and projects S into the enlarged latent space;
//   3. the latent coefficients take s_* optimizer steps on λ∇L + β∇R with the
//      augmented bases frozen and all other layers held at the batch start;
//   4. a thresholded SVD (Tucker for convolutions) retracts to a new rank.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "rdlt/attacks.hpp"
#include "rdlt/data.hpp"
#include "rdlt/diagnostics.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/linalg.hpp"
#include "rdlt/random.hpp"
#include "rdlt/regularizer.hpp"

namespace rdlt {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct EngineConfig {
  double learning_rate = 0.05;  ///< λ
  double reg_strength = 0.075;  ///< β
  std::size_t local_steps = 10; ///< s_*
  double trunc_tol = 0.1;       ///< τ, ϑ = τ‖Ŝ‖_F
  std::size_t rank_min = 2;
  std::optional<std::size_t> rank_max;  ///< default: min(n_out, n_in) per layer
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  bool fresh_batches = false;    ///< local steps draw successive batches instead of reusing one
  bool check_invariants = false; ///< record augmentation/orthonormality defects per step

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("engine: learning_rate must be finite and non-negative");
    if (!(reg_strength >= 0.0)) throw std::invalid_argument("engine: reg_strength must be non-negative");
    if (local_steps == 0) throw std::invalid_argument("engine: local_steps must be at least 1");
    if (!(trunc_tol >= 0.0 && trunc_tol < 1.0)) throw std::invalid_argument("engine: trunc_tol must lie in [0, 1)");
    if (rank_min == 0) throw std::invalid_argument("engine: rank_min must be at least 1");
    if (rank_max && *rank_max < rank_min) throw std::invalid_argument("engine: rank_max < rank_min");
    if (batch_size == 0) throw std::invalid_argument("engine: batch_size must be positive");
  }

  std::size_t rank_cap(std::size_t layer_limit) const {
    return std::min(rank_max.value_or(layer_limit), layer_limit);
  }
};

/// Adam moments for one parameter block; empty for SGD.
struct OptimizerMoments {
  DenseMatrix m;
  DenseMatrix v;
  std::size_t step = 0;
};

namespace detail {

/// In-place update x ← x − step(direction) where direction is the already
/// weighted gradient (λ∇L + β∇R for coefficients, λ∇ for biases).
/// SGD: step = direction. Adam: step = λ·m̂/(√v̂ + ε).
inline void optimizer_apply(DenseMatrix& x, const DenseMatrix& direction, const EngineConfig& cfg,
                            OptimizerMoments& mom) {
  if (cfg.optimizer.kind == OptimizerKind::sgd) {
    x -= direction;
    return;
  }
  if (mom.m.rows() != x.rows() || mom.m.cols() != x.cols()) {
    mom.m = DenseMatrix(x.rows(), x.cols());
    mom.v = DenseMatrix(x.rows(), x.cols());
    mom.step = 0;
  }
  ++mom.step;
  const double b1 = cfg.optimizer.beta1, b2 = cfg.optimizer.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(mom.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(mom.step));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = direction.values()[i];
    double& m = mom.m.values()[i];
    double& v = mom.v.values()[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    x.values()[i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.optimizer.eps);
  }
}

inline DenseMatrix as_column(std::span<const double> v) {
  return DenseMatrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

// orth([A | B]) restricted to its first `width` columns (width ≥ cols(A)).
inline DenseMatrix augmented_basis(const DenseMatrix& a, const DenseMatrix& b, std::size_t width) {
  const DenseMatrix extra = b.leading_cols(width - a.cols());
  return orth(hcat(a, extra));
}

}  // namespace detail

/// Augmented latent system of a linear layer: Û (n_out x k), V̂ (n_in x k),
/// Ŝ (k x k) with k = min(2r, n_out, n_in).
struct AugmentedState {
  DenseMatrix U_hat;
  DenseMatrix V_hat;
  DenseMatrix S_hat;
  OptimizerMoments moments;
};

/// Û = orth([U | G_U]), V̂ = orth([V | G_V]), Ŝ₀ = ÛᵀU S VᵀV̂.
inline AugmentedState augment(const FactorizedLinear& layer, const DenseMatrix& grad_U, const DenseMatrix& grad_V) {
  require_shape(grad_U.rows() == layer.U.rows() && grad_U.cols() == layer.U.cols(), "augment G_U");
  require_shape(grad_V.rows() == layer.V.rows() && grad_V.cols() == layer.V.cols(), "augment G_V");
  const std::size_t r = layer.rank();
  const std::size_t k = std::min({2 * r, layer.n_out(), layer.n_in()});
  AugmentedState st;
  st.U_hat = detail::augmented_basis(layer.U, grad_U, k);
  st.V_hat = detail::augmented_basis(layer.V, grad_V, k);
  st.S_hat = matmul(matmul(matmul_tn(st.U_hat, layer.U), layer.S), matmul_tn(layer.V, st.V_hat));
  return st;
}

/// s_* steps on Ŝ of layer `index` of `net` with bases frozen. Step s uses
/// batches[s % batches.size()].
inline AugmentedState coefficient_update(AugmentedState state, const Network& net, std::size_t index,
                                         std::span<const Batch> batches, const EngineConfig& cfg) {
  if (batches.empty()) throw std::invalid_argument("coefficient_update: no batches");
  Network work = net;
  auto& tmpl = std::get<FactorizedLinear>(work.layers.at(index));
  tmpl.U = state.U_hat;
  tmpl.V = state.V_hat;
  state.moments = {};
  for (std::size_t s = 0; s < cfg.local_steps; ++s) {
    DenseMatrix direction(state.S_hat.rows(), state.S_hat.cols());
    if (cfg.learning_rate != 0.0) {
      tmpl.S = state.S_hat;
      const Batch& b = batches[s % batches.size()];
      const NetworkGradient g = loss_and_gradient(work, b.inputs, b.labels);
      direction.add_scaled(std::get<LinearGrad>(g.layers[index]).S, cfg.learning_rate);
    }
    if (cfg.reg_strength != 0.0) direction.add_scaled(reg_gradient(state.S_hat), cfg.reg_strength);
    detail::optimizer_apply(state.S_hat, direction, cfg, state.moments);
    if (!all_finite(state.S_hat.values()))
      throw DivergenceError("coefficient_update: non-finite coefficients at local step " + std::to_string(s) +
                            " of layer " + std::to_string(index));
  }
  return state;
}

/// Retraction: P Σ Qᵀ = svd(Ŝ), rank from ϑ = τ‖Ŝ‖_F clamped to
/// [r_min, min(r_max, k)], U = Û P, V = V̂ Q, S = Σ.
inline FactorizedLinear truncate(const AugmentedState& state, const EngineConfig& cfg,
                                 const FactorizedLinear& tmpl) {
  const SvdResult sv = svd(state.S_hat);
  const std::size_t k = state.S_hat.rows();
  const double theta = cfg.trunc_tol * frobenius_norm(state.S_hat);
  const std::size_t cap = cfg.rank_cap(std::min(tmpl.n_out(), tmpl.n_in()));
  std::size_t r = threshold_rank(sv.singular_values, theta, std::min(cfg.rank_min, k));
  r = std::min(r, std::min(cap, k));
  FactorizedLinear out = tmpl;
  out.U = matmul(state.U_hat, sv.left.leading_cols(r));
  out.V = matmul(state.V_hat, sv.right.leading_cols(r));
  out.S = DenseMatrix::diagonal(std::span<const double>(sv.singular_values.data(), r));
  return out;
}

/// Augmented Tucker system of a convolution.
struct AugmentedConvState {
  DenseMatrix U_out_hat;
  DenseMatrix U_in_hat;
  DenseTensor4 core_hat;
  OptimizerMoments moments;
};

inline AugmentedConvState augment_conv(const LowRankConv2D& layer, const DenseMatrix& grad_U_out,
                                       const DenseMatrix& grad_U_in) {
  require_shape(grad_U_out.rows() == layer.U_out.rows() && grad_U_out.cols() == layer.U_out.cols(),
                "augment_conv G_UO");
  require_shape(grad_U_in.rows() == layer.U_in.rows() && grad_U_in.cols() == layer.U_in.cols(), "augment_conv G_UI");
  const std::size_t ko = std::min(2 * layer.rank_out(), layer.out_channels());
  const std::size_t ki = std::min(2 * layer.rank_in(), layer.in_channels());
  AugmentedConvState st;
  st.U_out_hat = detail::augmented_basis(layer.U_out, grad_U_out, ko);
  st.U_in_hat = detail::augmented_basis(layer.U_in, grad_U_in, ki);
  st.core_hat = mode1_product(mode0_product(layer.core, matmul_tn(st.U_out_hat, layer.U_out)),
                              matmul_tn(st.U_in_hat, layer.U_in));
  return st;
}

inline AugmentedConvState coefficient_update_conv(AugmentedConvState state, const Network& net, std::size_t index,
                                                  std::span<const Batch> batches, const EngineConfig& cfg) {
  if (batches.empty()) throw std::invalid_argument("coefficient_update_conv: no batches");
  Network work = net;
  auto& tmpl = std::get<LowRankConv2D>(work.layers.at(index));
  tmpl.U_out = state.U_out_hat;
  tmpl.U_in = state.U_in_hat;
  state.moments = {};
  const auto dims = state.core_hat.dims();
  for (std::size_t s = 0; s < cfg.local_steps; ++s) {
    DenseMatrix direction(dims[0], dims[1] * dims[2] * dims[3]);
    if (cfg.learning_rate != 0.0) {
      tmpl.core = state.core_hat;
      const Batch& b = batches[s % batches.size()];
      const NetworkGradient g = loss_and_gradient(work, b.inputs, b.labels);
      direction.add_scaled(unfold_output_mode(std::get<ConvGrad>(g.layers[index]).core), cfg.learning_rate);
    }
    if (cfg.reg_strength != 0.0)
      direction.add_scaled(unfold_output_mode(conv_reg_gradient(state.core_hat)), cfg.reg_strength);
    DenseMatrix flat = unfold_output_mode(state.core_hat);
    detail::optimizer_apply(flat, direction, cfg, state.moments);
    if (!all_finite(flat.values()))
      throw DivergenceError("coefficient_update_conv: non-finite core at local step " + std::to_string(s) +
                            " of layer " + std::to_string(index));
    state.core_hat = refold_output_mode(flat, dims);
  }
  return state;
}

/// Truncated Tucker retraction on the two feature modes, each with threshold
/// τ‖core‖_F.
inline LowRankConv2D truncate_conv(const AugmentedConvState& state, const EngineConfig& cfg,
                                   const LowRankConv2D& tmpl) {
  const double theta = cfg.trunc_tol * frobenius_norm(state.core_hat);
  const SvdResult so = svd(unfold_output_mode(state.core_hat));
  const SvdResult si = svd(unfold_input_mode(state.core_hat));
  const std::size_t ko = state.core_hat.dim(0), ki = state.core_hat.dim(1);
  std::size_t ro = threshold_rank(so.singular_values, theta, std::min(cfg.rank_min, ko));
  std::size_t ri = threshold_rank(si.singular_values, theta, std::min(cfg.rank_min, ki));
  ro = std::min({ro, cfg.rank_cap(tmpl.out_channels()), ko});
  ri = std::min({ri, cfg.rank_cap(tmpl.in_channels()), ki});
  const DenseMatrix p = leading_left_basis(so, ro);
  const DenseMatrix q = leading_left_basis(si, ri);
  LowRankConv2D out = tmpl;
  out.core = mode1_product(mode0_product(state.core_hat, p.transpose()), q.transpose());
  out.U_out = matmul(state.U_out_hat, p);
  out.U_in = matmul(state.U_in_hat, q);
  return out;
}

struct LayerStepInfo {
  std::size_t rank_before = 0;
  std::size_t rank_after = 0;
  std::size_t augmented_rank = 0;
  double reg_value = 0.0;
  double kappa = 1.0;
  double augmentation_defect = 0.0;  ///< ‖Û Ŝ₀ V̂ᵀ − U S Vᵀ‖_F / max(1, ‖S‖_F)
  double orthonormality_defect = 0.0;  ///< max over bases of ‖QᵀQ − I‖_F after truncation
};

struct StepReport {
  double loss = 0.0;  ///< at the batch start
  std::vector<LayerStepInfo> layers;
};

/// Persistent optimizer state across iterations (bias moments only; the
/// coefficient moments are reset every iteration because shapes change).
struct TrainState {
  std::vector<OptimizerMoments> bias_moments;
};

namespace detail {

inline double linear_augmentation_defect(const FactorizedLinear& layer, const AugmentedState& st) {
  const DenseMatrix before = layer.dense_weight();
  const DenseMatrix after = matmul_nt(matmul(st.U_hat, st.S_hat), st.V_hat);
  return frobenius_norm(after - before) / std::max(1.0, frobenius_norm(layer.S));
}

inline double conv_augmentation_defect(const LowRankConv2D& layer, const AugmentedConvState& st) {
  const DenseTensor4 before = layer.dense_kernel();
  const DenseTensor4 after = mode1_product(mode0_product(st.core_hat, st.U_out_hat), st.U_in_hat);
  DenseMatrix d = unfold_output_mode(after) - unfold_output_mode(before);
  return frobenius_norm(d) / std::max(1.0, frobenius_norm(layer.core));
}

inline void update_bias(std::vector<double>& bias, const std::vector<double>& grad, const EngineConfig& cfg,
                        OptimizerMoments& mom) {
  DenseMatrix b = as_column(bias);
  DenseMatrix direction = as_column(grad);
  direction *= cfg.learning_rate;
  optimizer_apply(b, direction, cfg, mom);
  bias.assign(b.values().begin(), b.values().end());
}

}  // namespace detail

/// One iteration over all layers of `net`. batches[0] drives the basis
/// gradients; local steps cycle through `batches`.
inline StepReport dlrt_step(Network& net, std::span<const Batch> batches, const EngineConfig& cfg,
                            TrainState& state) {
  if (batches.empty()) throw std::invalid_argument("dlrt_step: no batches");
  const Batch& first = batches.front();
  const NetworkGradient g0 = loss_and_gradient(net, first.inputs, first.labels);
  state.bias_moments.resize(net.layers.size());

  StepReport report;
  report.loss = g0.loss;
  std::vector<Layer> next(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    LayerStepInfo info;
    if (const auto* lin = std::get_if<FactorizedLinear>(&net.layers[l])) {
      const auto& g = std::get<LinearGrad>(g0.layers[l]);
      AugmentedState st = augment(*lin, g.U, g.V);
      info.rank_before = lin->rank();
      info.augmented_rank = st.S_hat.rows();
      if (cfg.check_invariants) info.augmentation_defect = detail::linear_augmentation_defect(*lin, st);
      st = coefficient_update(std::move(st), net, l, batches, cfg);
      FactorizedLinear updated = truncate(st, cfg, *lin);
      detail::update_bias(updated.bias, g.bias, cfg, state.bias_moments[l]);
      info.rank_after = updated.rank();
      if (cfg.check_invariants)
        info.orthonormality_defect = std::max(orthonormality_defect(updated.U), orthonormality_defect(updated.V));
      next[l] = std::move(updated);
    } else {
      const auto& conv = std::get<LowRankConv2D>(net.layers[l]);
      const auto& g = std::get<ConvGrad>(g0.layers[l]);
      AugmentedConvState st = augment_conv(conv, g.U_out, g.U_in);
      info.rank_before = conv.rank_out();
      info.augmented_rank = st.core_hat.dim(0);
      if (cfg.check_invariants) info.augmentation_defect = detail::conv_augmentation_defect(conv, st);
      st = coefficient_update_conv(std::move(st), net, l, batches, cfg);
      LowRankConv2D updated = truncate_conv(st, cfg, conv);
      detail::update_bias(updated.bias, g.bias, cfg, state.bias_moments[l]);
      info.rank_after = updated.rank_out();
      if (cfg.check_invariants)
        info.orthonormality_defect =
            std::max(orthonormality_defect(updated.U_out), orthonormality_defect(updated.U_in));
      next[l] = std::move(updated);
    }
    report.layers.push_back(info);
  }
  net.layers = std::move(next);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const LayerSpectrum sp = layer_spectrum(net.layers[l], l);
    report.layers[l].reg_value = sp.reg_value;
    report.layers[l].kappa = sp.kappa;
  }
  return report;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;            ///< mean batch-start loss
  double train_accuracy = 0.0;  ///< percent, full training set after the epoch
  double val_accuracy = 0.0;    ///< percent; equals train_accuracy when no validation set
  double max_kappa = 1.0;
  double max_reg = 0.0;
  std::size_t total_rank = 0;
  double compression_rate = 0.0;

  static constexpr const char* kCsvHeader =
      "epoch,loss,train_accuracy,val_accuracy,max_kappa,max_reg,total_rank,compression_rate";
  std::vector<double> row() const {
    return {static_cast<double>(epoch), loss, train_accuracy, val_accuracy, max_kappa, max_reg,
            static_cast<double>(total_rank), compression_rate};
  }
};

struct TrainResult {
  Network network;
  std::vector<EpochMetrics> metrics;
};

struct TrainHooks {
  /// After every iteration.
  std::function<void(std::size_t epoch, std::size_t batch, const StepReport&)> on_step;
  /// After every epoch with the network state at that point.
  std::function<void(const EpochMetrics&, const Network&)> on_epoch;
};

namespace detail {

inline TrainResult train_impl(Network net, const Dataset& train_set, const Dataset* validation,
                              const EngineConfig& cfg, std::size_t epochs, const AttackSpec* adversary,
                              const TrainHooks& hooks) {
  cfg.validate();
  net.validate();
  if (epochs > 0 && train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (train_set.size() > 0 && train_set.features() != net.input_dim())
    throw std::invalid_argument("train: dataset features " + std::to_string(train_set.features()) +
                                " != network input " + std::to_string(net.input_dim()));
  Rng shuffle(cfg.seed ^ 0x5348554646ULL);
  Rng attack_rng(cfg.seed ^ 0x41545441434BULL);
  TrainState state;
  TrainResult result;
  const std::size_t n = train_set.size();
  const std::size_t bs = std::min(cfg.batch_size, std::max<std::size_t>(n, 1));

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < n; start += bs) {
      std::span<const std::size_t> idx(perm.data() + start, std::min(bs, n - start));
      batches.push_back(train_set.batch(idx));
    }
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      if (adversary) {
        // first ⌈b/2⌉ clean, last ⌊b/2⌋ attacked against the current network
        Batch& b = batches[bi];
        const std::size_t clean = (b.size() + 1) / 2;
        const std::size_t attacked = b.size() - clean;
        if (attacked > 0) {
          Batch tail{b.inputs.block(0, clean, b.inputs.rows(), attacked),
                     std::vector<int>(b.labels.begin() + static_cast<std::ptrdiff_t>(clean), b.labels.end())};
          const DenseMatrix adv = attack(net, tail, *adversary, attack_rng);
          for (std::size_t f = 0; f < b.inputs.rows(); ++f)
            for (std::size_t j = 0; j < attacked; ++j) b.inputs(f, clean + j) = adv(f, j);
        }
      }
      std::vector<Batch> local;
      if (cfg.fresh_batches) {
        for (std::size_t s = 0; s < std::min(cfg.local_steps, batches.size()); ++s)
          local.push_back(batches[(bi + s) % batches.size()]);
      } else {
        local.push_back(batches[bi]);
      }
      StepReport rep;
      try {
        rep = dlrt_step(net, local, cfg, state);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi) + ": " + e.what());
      } catch (const std::domain_error& e) {
        // overflowing bases reach the factorizations as non-finite input
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi) + ": " + e.what());
      }
      if (!std::isfinite(rep.loss))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi));
      loss_sum += rep.loss;
      if (hooks.on_step) hooks.on_step(epoch, bi, rep);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    m.train_accuracy = accuracy(net, train_set.inputs, train_set.labels);
    m.val_accuracy = validation ? accuracy(net, validation->inputs, validation->labels) : m.train_accuracy;
    const SpectralReport rep = spectral_report(net);
    m.max_kappa = rep.max_kappa();
    m.max_reg = rep.max_reg();
    for (const auto& l : rep.layers) m.total_rank += l.rank;
    m.compression_rate = rep.compression_rate;
    result.metrics.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m, net);
  }
  result.network = std::move(net);
  return result;
}

}  // namespace detail

/// Epoch loop: shuffled minibatches (seeded), one dlrt_step per batch.
inline TrainResult train(Network net, const Dataset& train_set, const EngineConfig& cfg, std::size_t epochs,
                         const Dataset* validation = nullptr, const TrainHooks& hooks = {}) {
  return detail::train_impl(std::move(net), train_set, validation, cfg, epochs, nullptr, hooks);
}

/// As train(), but every batch is ⌈b/2⌉ clean and ⌊b/2⌋ attacked samples.
inline TrainResult adversarial_train(Network net, const Dataset& train_set, const EngineConfig& cfg,
                                     const AttackSpec& attack_spec, std::size_t epochs,
                                     const Dataset* validation = nullptr, const TrainHooks& hooks = {}) {
  attack_spec.validate();
  return detail::train_impl(std::move(net), train_set, validation, cfg, epochs, &attack_spec, hooks);
}

}  // namespace rdlt
