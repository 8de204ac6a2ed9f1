#pragma once

// Factorized layers and their exact gradients.
//
// Activations are stored as (features x batch) matrices. A convolutional
// feature map of N channels over a W x H image occupies rows (c·W + w)·H + h,
// so the same buffer viewed row-major is an N x (W·H·batch) matrix and a conv
// layer can feed a linear layer without any reshaping.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "rdlt/linalg.hpp"
#include "rdlt/random.hpp"

namespace rdlt {

/// `softmax` marks the logits layer: the network emits its pre-activation and
/// the softmax is folded into cross_entropy().
enum class Activation { identity, relu, tanh, softmax };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softmax") return Activation::softmax;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline double activate(Activation a, double y) {
  switch (a) {
    case Activation::relu: return y > 0.0 ? y : 0.0;
    case Activation::tanh: return std::tanh(y);
    default: return y;
  }
}

/// dσ/dy given pre-activation y and output a = σ(y). relu'(0) = 0.
inline double activate_derivative(Activation a, double y, double out) {
  switch (a) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - out * out;
    default: return 1.0;
  }
}

/// W ≈ U S Vᵀ with orthonormal U (n_out x r), V (n_in x r).
struct FactorizedLinear {
  DenseMatrix U;
  DenseMatrix S;
  DenseMatrix V;
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t n_out() const { return U.rows(); }
  std::size_t n_in() const { return V.rows(); }
  std::size_t rank() const { return S.rows(); }

  DenseMatrix dense_weight() const { return matmul_nt(matmul(U, S), V); }

  std::size_t parameter_count() const {
    return n_out() * U.cols() + S.rows() * S.cols() + n_in() * V.cols() + bias.size();
  }
  std::size_t baseline_parameter_count() const { return n_out() * n_in() + bias.size(); }

  void validate() const {
    require_shape(U.cols() == S.rows() && V.cols() == S.cols(), "FactorizedLinear factors");
    require_shape(bias.size() == U.rows(), "FactorizedLinear bias");
  }

  /// He-scaled Gaussian dense matrix truncated to `rank` by SVD; S is the
  /// diagonal of the leading singular values.
  static FactorizedLinear random(std::size_t n_out, std::size_t n_in, std::size_t rank, Activation act, Rng& rng) {
    if (rank == 0 || rank > std::min(n_out, n_in))
      throw std::invalid_argument("FactorizedLinear::random: rank must be in [1, min(n_out, n_in)]");
    const DenseMatrix w = rng.gaussian_matrix(n_out, n_in, std::sqrt(2.0 / static_cast<double>(n_in)));
    const SvdResult sv = svd(w);
    std::vector<double> lead(sv.singular_values.begin(), sv.singular_values.begin() + static_cast<std::ptrdiff_t>(rank));
    return {sv.left.leading_cols(rank), DenseMatrix::diagonal(lead), sv.right.leading_cols(rank),
            std::vector<double>(n_out, 0.0), act};
  }
};

/// Convolution kernel C(o,i,s_w,s_h) = Σ U_O(o,p) U_I(i,q) core(p,q,s_w,s_h);
/// stride 1, zero "same" padding, window offsets s − ⌊S/2⌋.
struct LowRankConv2D {
  DenseMatrix U_out;  ///< N_O x r_O
  DenseMatrix U_in;   ///< N_I x r_I
  DenseTensor4 core;  ///< r_O x r_I x S_W x S_H
  std::vector<double> bias;
  std::size_t width = 1;
  std::size_t height = 1;
  Activation activation = Activation::identity;

  std::size_t out_channels() const { return U_out.rows(); }
  std::size_t in_channels() const { return U_in.rows(); }
  std::size_t rank_out() const { return core.dim(0); }
  std::size_t rank_in() const { return core.dim(1); }
  std::size_t window_w() const { return core.dim(2); }
  std::size_t window_h() const { return core.dim(3); }
  std::size_t pixels() const { return width * height; }
  std::size_t n_in() const { return in_channels() * pixels(); }
  std::size_t n_out() const { return out_channels() * pixels(); }

  DenseTensor4 dense_kernel() const { return mode1_product(mode0_product(core, U_out), U_in); }

  std::size_t parameter_count() const {
    return U_out.size() + U_in.size() + core.size() + bias.size();
  }
  std::size_t baseline_parameter_count() const {
    return out_channels() * in_channels() * window_w() * window_h() + bias.size();
  }

  void validate() const {
    require_shape(U_out.cols() == rank_out() && U_in.cols() == rank_in(), "LowRankConv2D factors");
    require_shape(bias.size() == out_channels(), "LowRankConv2D bias");
  }

  /// Dense He-scaled kernel compressed by a truncated HOSVD on the two
  /// feature modes.
  static LowRankConv2D random(std::size_t n_out, std::size_t n_in, std::size_t window_w, std::size_t window_h,
                              std::size_t rank_out, std::size_t rank_in, std::size_t width, std::size_t height,
                              Activation act, Rng& rng) {
    if (rank_out == 0 || rank_out > n_out || rank_in == 0 || rank_in > n_in)
      throw std::invalid_argument("LowRankConv2D::random: ranks out of range");
    const double scale = std::sqrt(2.0 / static_cast<double>(n_in * window_w * window_h));
    DenseTensor4 kernel({n_out, n_in, window_w, window_h});
    for (double& v : kernel.values()) v = scale * rng.normal();
    const DenseMatrix uo = leading_left_basis(svd(unfold_output_mode(kernel)), rank_out);
    const DenseMatrix ui = leading_left_basis(svd(unfold_input_mode(kernel)), rank_in);
    DenseTensor4 core = mode1_product(mode0_product(kernel, uo.transpose()), ui.transpose());
    return {uo, ui, std::move(core), std::vector<double>(n_out, 0.0), width, height, act};
  }
};

using Layer = std::variant<FactorizedLinear, LowRankConv2D>;

inline std::size_t layer_n_in(const Layer& l) {
  return std::visit([](const auto& x) { return x.n_in(); }, l);
}
inline std::size_t layer_n_out(const Layer& l) {
  return std::visit([](const auto& x) { return x.n_out(); }, l);
}
inline Activation layer_activation(const Layer& l) {
  return std::visit([](const auto& x) { return x.activation; }, l);
}
inline std::size_t layer_parameter_count(const Layer& l) {
  return std::visit([](const auto& x) { return x.parameter_count(); }, l);
}
inline std::size_t layer_baseline_parameter_count(const Layer& l) {
  return std::visit([](const auto& x) { return x.baseline_parameter_count(); }, l);
}

struct Network {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layer_n_in(layers.front()); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layer_n_out(layers.back()); }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("Network: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::visit([](const auto& x) { x.validate(); }, layers[l]);
      if (l > 0 && layer_n_in(layers[l]) != layer_n_out(layers[l - 1]))
        throw std::invalid_argument("Network: layer " + std::to_string(l) + " input width " +
                                    std::to_string(layer_n_in(layers[l])) + " != previous output width " +
                                    std::to_string(layer_n_out(layers[l - 1])));
    }
  }
};

struct LinearCache {
  DenseMatrix input;  ///< z
  DenseMatrix proj;   ///< Vᵀ z
  DenseMatrix mixed;  ///< S Vᵀ z
  DenseMatrix pre;    ///< U S Vᵀ z + bias
};

struct ConvCache {
  DenseMatrix input;        ///< X
  DenseMatrix reduced_in;   ///< X̃ = U_Iᵀ X, r_I·W·H x b
  DenseMatrix reduced_out;  ///< Ỹ = core * X̃, r_O·W·H x b
  DenseMatrix pre;
};

using LayerCache = std::variant<LinearCache, ConvCache>;

struct ForwardPass {
  std::vector<LayerCache> caches;
  DenseMatrix output;
};

namespace detail {

inline DenseMatrix apply_activation(Activation act, const DenseMatrix& pre) {
  if (act == Activation::identity || act == Activation::softmax) return pre;
  DenseMatrix out = pre;
  for (double& v : out.values()) v = activate(act, v);
  return out;
}

// Reinterpret a (channels·pixels) x b buffer as channels x (pixels·b).
inline DenseMatrix as_channel_matrix(const DenseMatrix& m, std::size_t channels) {
  return DenseMatrix(channels, m.size() / channels, std::vector<double>(m.values().begin(), m.values().end()));
}
inline DenseMatrix as_feature_matrix(const DenseMatrix& m, std::size_t batch) {
  return DenseMatrix(m.size() / batch, batch, std::vector<double>(m.values().begin(), m.values().end()));
}

inline std::ptrdiff_t window_offset(std::size_t s, std::size_t window) {
  return static_cast<std::ptrdiff_t>(s) - static_cast<std::ptrdiff_t>(window / 2);
}

// Ỹ(p,w,h) = Σ_{q,s_w,s_h} core(p,q,s_w,s_h) X̃(q, w+off_w, h+off_h), rows
// indexed (channel·W + w)·H + h, one column per sample.
inline DenseMatrix latent_convolution(const DenseTensor4& core, const DenseMatrix& xr, std::size_t width,
                                      std::size_t height) {
  const auto& d = core.dims();
  const std::size_t b = xr.cols();
  DenseMatrix y(d[0] * width * height, b);
  for (std::size_t p = 0; p < d[0]; ++p)
    for (std::size_t q = 0; q < d[1]; ++q)
      for (std::size_t sw = 0; sw < d[2]; ++sw)
        for (std::size_t sh = 0; sh < d[3]; ++sh) {
          const double coef = core(p, q, sw, sh);
          if (coef == 0.0) continue;
          const auto ow = window_offset(sw, d[2]);
          const auto oh = window_offset(sh, d[3]);
          for (std::size_t w = 0; w < width; ++w) {
            const auto ws = static_cast<std::ptrdiff_t>(w) + ow;
            if (ws < 0 || ws >= static_cast<std::ptrdiff_t>(width)) continue;
            for (std::size_t h = 0; h < height; ++h) {
              const auto hs = static_cast<std::ptrdiff_t>(h) + oh;
              if (hs < 0 || hs >= static_cast<std::ptrdiff_t>(height)) continue;
              auto dst = y.row((p * width + w) * height + h);
              auto src = xr.row((q * width + static_cast<std::size_t>(ws)) * height + static_cast<std::size_t>(hs));
              for (std::size_t n = 0; n < b; ++n) dst[n] += coef * src[n];
            }
          }
        }
  return y;
}

}  // namespace detail

inline LinearCache forward_linear_cached(const FactorizedLinear& layer, const DenseMatrix& z) {
  require_shape(z.rows() == layer.n_in(), "forward_linear input rows " + std::to_string(z.rows()) + " vs n_in " +
                                              std::to_string(layer.n_in()));
  LinearCache c;
  c.input = z;
  c.proj = matmul_tn(layer.V, z);
  c.mixed = matmul(layer.S, c.proj);
  c.pre = matmul(layer.U, c.mixed);
  for (std::size_t i = 0; i < c.pre.rows(); ++i)
    for (double& v : c.pre.row(i)) v += layer.bias[i];
  return c;
}

/// σ(U(S(Vᵀz)) + bias); the n_out x n_in product is never formed.
inline DenseMatrix forward_linear(const FactorizedLinear& layer, const DenseMatrix& z) {
  return detail::apply_activation(layer.activation, forward_linear_cached(layer, z).pre);
}

inline ConvCache forward_conv_cached(const LowRankConv2D& layer, const DenseMatrix& x) {
  require_shape(x.rows() == layer.n_in(), "forward_conv input rows " + std::to_string(x.rows()) + " vs " +
                                              std::to_string(layer.n_in()));
  const std::size_t b = x.cols();
  ConvCache c;
  c.input = x;
  // X̃ = U_Iᵀ X, channel projection
  c.reduced_in = detail::as_feature_matrix(
      matmul_tn(layer.U_in, detail::as_channel_matrix(x, layer.in_channels())), b);
  // Ỹ = core * X̃, latent convolution
  c.reduced_out = detail::latent_convolution(layer.core, c.reduced_in, layer.width, layer.height);
  // Y = U_O Ỹ, prolongation
  c.pre = detail::as_feature_matrix(matmul(layer.U_out, detail::as_channel_matrix(c.reduced_out, layer.rank_out())), b);
  const std::size_t pix = layer.pixels();
  for (std::size_t o = 0; o < layer.out_channels(); ++o)
    for (std::size_t p = 0; p < pix; ++p)
      for (double& v : c.pre.row(o * pix + p)) v += layer.bias[o];
  return c;
}

inline DenseMatrix forward_conv_lowrank(const LowRankConv2D& layer, const DenseMatrix& x) {
  return detail::apply_activation(layer.activation, forward_conv_cached(layer, x).pre);
}

/// Reference full-kernel convolution Y(o,w,h) = Σ C(o,c,s_w,s_h) X(c, w+off_w, h+off_h) + bias(o),
/// same padding, no activation. Direct contraction, used as an oracle.
inline DenseMatrix dense_convolution(const DenseTensor4& kernel, std::span<const double> bias, const DenseMatrix& x,
                                     std::size_t width, std::size_t height) {
  const auto& d = kernel.dims();
  require_shape(x.rows() == d[1] * width * height, "dense_convolution input");
  require_shape(bias.size() == d[0], "dense_convolution bias");
  const std::size_t b = x.cols();
  DenseMatrix y(d[0] * width * height, b);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < d[0]; ++o)
      for (std::size_t w = 0; w < width; ++w)
        for (std::size_t h = 0; h < height; ++h) {
          double acc = bias[o];
          for (std::size_t c = 0; c < d[1]; ++c)
            for (std::size_t sw = 0; sw < d[2]; ++sw)
              for (std::size_t sh = 0; sh < d[3]; ++sh) {
                const auto ws = static_cast<std::ptrdiff_t>(w + sw) - static_cast<std::ptrdiff_t>(d[2] / 2);
                const auto hs = static_cast<std::ptrdiff_t>(h + sh) - static_cast<std::ptrdiff_t>(d[3] / 2);
                if (ws < 0 || hs < 0 || ws >= static_cast<std::ptrdiff_t>(width) ||
                    hs >= static_cast<std::ptrdiff_t>(height))
                  continue;
                acc += kernel(o, c, sw, sh) *
                       x((c * width + static_cast<std::size_t>(ws)) * height + static_cast<std::size_t>(hs), n);
              }
          y((o * width + w) * height + h, n) = acc;
        }
  return y;
}

inline ForwardPass forward(const Network& net, const DenseMatrix& x) {
  ForwardPass pass;
  pass.caches.reserve(net.layers.size());
  DenseMatrix z = x;
  for (const auto& layer : net.layers) {
    if (const auto* lin = std::get_if<FactorizedLinear>(&layer)) {
      auto c = forward_linear_cached(*lin, z);
      z = detail::apply_activation(lin->activation, c.pre);
      pass.caches.emplace_back(std::move(c));
    } else {
      const auto& conv = std::get<LowRankConv2D>(layer);
      auto c = forward_conv_cached(conv, z);
      z = detail::apply_activation(conv.activation, c.pre);
      pass.caches.emplace_back(std::move(c));
    }
  }
  pass.output = std::move(z);
  return pass;
}

/// Network output (logits when the last layer is a softmax layer).
inline DenseMatrix predict(const Network& net, const DenseMatrix& x) { return forward(net, x).output; }

struct LinearGrad {
  DenseMatrix U, S, V;
  std::vector<double> bias;
};

struct ConvGrad {
  DenseMatrix U_out, U_in;
  DenseTensor4 core;
  std::vector<double> bias;
};

using LayerGrad = std::variant<LinearGrad, ConvGrad>;

struct NetworkGradient {
  std::vector<LayerGrad> layers;
  DenseMatrix input;  ///< ∂L/∂x
  double loss = 0.0;
};

namespace detail {

inline DenseMatrix activation_backward(Activation act, const DenseMatrix& pre, const DenseMatrix& grad_out) {
  if (act == Activation::identity || act == Activation::softmax) return grad_out;
  DenseMatrix g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = pre.values()[i];
    g.values()[i] *= activate_derivative(act, y, activate(act, y));
  }
  return g;
}

inline std::pair<LinearGrad, DenseMatrix> linear_backward(const FactorizedLinear& layer, const LinearCache& c,
                                                          const DenseMatrix& delta) {
  LinearGrad g;
  g.bias.assign(layer.n_out(), 0.0);
  for (std::size_t i = 0; i < delta.rows(); ++i)
    for (double v : delta.row(i)) g.bias[i] += v;
  g.U = matmul_nt(delta, c.mixed);                   // δ (S Vᵀz)ᵀ
  const DenseMatrix d_mixed = matmul_tn(layer.U, delta);  // Uᵀδ
  g.S = matmul_nt(d_mixed, c.proj);                  // Uᵀδ (Vᵀz)ᵀ
  const DenseMatrix d_proj = matmul_tn(layer.S, d_mixed);
  g.V = matmul_nt(c.input, d_proj);                  // z (SᵀUᵀδ)ᵀ
  return {std::move(g), matmul(layer.V, d_proj)};
}

inline std::pair<ConvGrad, DenseMatrix> conv_backward(const LowRankConv2D& layer, const ConvCache& c,
                                                      const DenseMatrix& delta) {
  const std::size_t b = delta.cols();
  const std::size_t pix = layer.pixels();
  const std::size_t W = layer.width, H = layer.height;
  ConvGrad g;
  g.bias.assign(layer.out_channels(), 0.0);
  for (std::size_t o = 0; o < layer.out_channels(); ++o)
    for (std::size_t p = 0; p < pix; ++p)
      for (double v : delta.row(o * pix + p)) g.bias[o] += v;

  const DenseMatrix delta_ch = as_channel_matrix(delta, layer.out_channels());
  g.U_out = matmul_nt(delta_ch, as_channel_matrix(c.reduced_out, layer.rank_out()));
  const DenseMatrix d_yr = as_feature_matrix(matmul_tn(layer.U_out, delta_ch), b);

  const auto& d = layer.core.dims();
  g.core = DenseTensor4(d);
  DenseMatrix d_xr(c.reduced_in.rows(), b);
  for (std::size_t p = 0; p < d[0]; ++p)
    for (std::size_t q = 0; q < d[1]; ++q)
      for (std::size_t sw = 0; sw < d[2]; ++sw)
        for (std::size_t sh = 0; sh < d[3]; ++sh) {
          const double coef = layer.core(p, q, sw, sh);
          const auto ow = window_offset(sw, d[2]);
          const auto oh = window_offset(sh, d[3]);
          double acc = 0.0;
          for (std::size_t w = 0; w < W; ++w) {
            const auto ws = static_cast<std::ptrdiff_t>(w) + ow;
            if (ws < 0 || ws >= static_cast<std::ptrdiff_t>(W)) continue;
            for (std::size_t h = 0; h < H; ++h) {
              const auto hs = static_cast<std::ptrdiff_t>(h) + oh;
              if (hs < 0 || hs >= static_cast<std::ptrdiff_t>(H)) continue;
              const std::size_t src_row = (q * W + static_cast<std::size_t>(ws)) * H + static_cast<std::size_t>(hs);
              auto dy = d_yr.row((p * W + w) * H + h);
              auto xr = c.reduced_in.row(src_row);
              auto dx = d_xr.row(src_row);
              for (std::size_t n = 0; n < b; ++n) {
                acc += dy[n] * xr[n];
                dx[n] += coef * dy[n];
              }
            }
          }
          g.core(p, q, sw, sh) = acc;
        }

  const DenseMatrix d_xr_ch = as_channel_matrix(d_xr, layer.rank_in());
  g.U_in = matmul_nt(as_channel_matrix(c.input, layer.in_channels()), d_xr_ch);
  DenseMatrix d_input = as_feature_matrix(matmul(layer.U_in, d_xr_ch), b);
  return {std::move(g), std::move(d_input)};
}

}  // namespace detail

/// Reverse pass from ∂L/∂output; fills every parameter gradient and ∂L/∂x.
inline NetworkGradient backward(const Network& net, const ForwardPass& pass, const DenseMatrix& grad_output) {
  require_shape(grad_output.rows() == pass.output.rows() && grad_output.cols() == pass.output.cols(),
                "backward upstream gradient");
  NetworkGradient out;
  out.layers.resize(net.layers.size());
  DenseMatrix upstream = grad_output;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    if (const auto* lin = std::get_if<FactorizedLinear>(&net.layers[l])) {
      const auto& c = std::get<LinearCache>(pass.caches[l]);
      const DenseMatrix delta = detail::activation_backward(lin->activation, c.pre, upstream);
      auto [g, down] = detail::linear_backward(*lin, c, delta);
      out.layers[l] = std::move(g);
      upstream = std::move(down);
    } else {
      const auto& conv = std::get<LowRankConv2D>(net.layers[l]);
      const auto& c = std::get<ConvCache>(pass.caches[l]);
      const DenseMatrix delta = detail::activation_backward(conv.activation, c.pre, upstream);
      auto [g, down] = detail::conv_backward(conv, c, delta);
      out.layers[l] = std::move(g);
      upstream = std::move(down);
    }
  }
  out.input = std::move(upstream);
  return out;
}

struct LossResult {
  double loss = 0.0;
  DenseMatrix grad;  ///< ∂loss/∂(network output)
};

/// Column-wise softmax.
inline DenseMatrix softmax_columns(const DenseMatrix& logits) {
  DenseMatrix p(logits.rows(), logits.cols());
  for (std::size_t n = 0; n < logits.cols(); ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logits.rows(); ++k) mx = std::max(mx, logits(k, n));
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.rows(); ++k) {
      p(k, n) = std::exp(logits(k, n) - mx);
      sum += p(k, n);
    }
    for (std::size_t k = 0; k < logits.rows(); ++k) p(k, n) /= sum;
  }
  return p;
}

/// Mean over the batch of −log softmax(logits)[label]; gradient (p − onehot)/b.
inline LossResult cross_entropy(const DenseMatrix& logits, std::span<const int> labels) {
  if (logits.rows() < 2) throw std::invalid_argument("cross_entropy: need at least two classes");
  require_shape(labels.size() == logits.cols(), "cross_entropy labels vs batch");
  const std::size_t b = logits.cols();
  LossResult r{0.0, softmax_columns(logits)};
  for (std::size_t n = 0; n < b; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    if (labels[n] < 0 || y >= logits.rows()) throw std::invalid_argument("cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logits.rows(); ++k) mx = std::max(mx, logits(k, n));
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.rows(); ++k) sum += std::exp(logits(k, n) - mx);
    r.loss += (mx + std::log(sum)) - logits(y, n);
    r.grad(y, n) -= 1.0;
  }
  r.loss /= static_cast<double>(b);
  r.grad *= 1.0 / static_cast<double>(b);
  return r;
}

/// ½‖out − target‖_F²
inline LossResult squared_error(const DenseMatrix& out, const DenseMatrix& target) {
  LossResult r{0.0, out - target};
  r.loss = 0.5 * inner(r.grad, r.grad);
  return r;
}

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward, cross-entropy, backward.
inline NetworkGradient loss_and_gradient(const Network& net, const DenseMatrix& x, std::span<const int> labels) {
  const ForwardPass pass = forward(net, x);
  LossResult lr = cross_entropy(pass.output, labels);
  if (!std::isfinite(lr.loss)) throw DivergenceError("non-finite loss in forward pass");
  NetworkGradient g = backward(net, pass, lr.grad);
  g.loss = lr.loss;
  return g;
}

inline double loss_value(const Network& net, const DenseMatrix& x, std::span<const int> labels) {
  return cross_entropy(predict(net, x), labels).loss;
}

inline std::vector<int> argmax_columns(const DenseMatrix& m) {
  std::vector<int> out(m.cols(), 0);
  for (std::size_t n = 0; n < m.cols(); ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < m.rows(); ++k)
      if (m(k, n) > m(best, n)) best = k;
    out[n] = static_cast<int>(best);
  }
  return out;
}

/// Percentage of columns whose argmax equals the label.
inline double accuracy(const Network& net, const DenseMatrix& x, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_columns(predict(net, x));
  std::size_t hit = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) hit += pred[n] == labels[n] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace rdlt
