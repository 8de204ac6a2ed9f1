#pragma once

// Spectral and sensitivity reporting for factorized networks.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rdlt/format.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/linalg.hpp"
#include "rdlt/regularizer.hpp"

namespace rdlt {

/// (1 − lowrank/baseline)·100. Negative when the factorization has more
/// parameters than the dense layer it replaces.
inline double compression_rate(std::size_t lowrank_params, std::size_t baseline_params) {
  if (baseline_params == 0) throw std::invalid_argument("compression_rate: baseline parameter count is zero");
  return (1.0 - static_cast<double>(lowrank_params) / static_cast<double>(baseline_params)) * 100.0;
}

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += layer_parameter_count(l);
  return n;
}

inline std::size_t baseline_parameter_count(const Network& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += layer_baseline_parameter_count(l);
  return n;
}

inline double compression_rate(const Network& net) {
  return compression_rate(parameter_count(net), baseline_parameter_count(net));
}

/// The matrix whose conditioning is tracked for a layer: S for linear layers,
/// Mat(core)ᵀ for convolutions (the object the regularizer acts on).
inline DenseMatrix conditioning_operand(const Layer& layer) {
  if (const auto* lin = std::get_if<FactorizedLinear>(&layer)) return lin->S;
  return conv_reg_operand(std::get<LowRankConv2D>(layer).core);
}

struct LayerSpectrum {
  std::size_t layer = 0;
  std::string kind;
  std::size_t rank = 0;
  std::vector<double> singular_values;
  double kappa = 1.0;
  double reg_value = 0.0;
  double kappa_bound = 1.0;
  std::size_t params = 0;

  double sigma_max() const { return singular_values.empty() ? 0.0 : singular_values.front(); }
  double sigma_min() const { return singular_values.empty() ? 0.0 : singular_values.back(); }
};

struct SpectralReport {
  std::vector<LayerSpectrum> layers;
  double compression_rate = 0.0;
  double kappa_product = 1.0;

  double max_kappa() const {
    double m = 1.0;
    for (const auto& l : layers) m = std::max(m, l.kappa);
    return m;
  }
  double max_reg() const {
    double m = 0.0;
    for (const auto& l : layers) m = std::max(m, l.reg_value);
    return m;
  }

  static constexpr const char* kCsvHeader = "layer,rank,sigma_max,sigma_min,kappa,reg_value,kappa_bound,params";

  std::string to_csv() const {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& l : layers) {
      os << l.layer << ',' << l.rank << ',' << format_double(l.sigma_max()) << ',' << format_double(l.sigma_min())
         << ',' << format_double(l.kappa) << ',' << format_double(l.reg_value) << ','
         << format_double(l.kappa_bound) << ',' << l.params << '\n';
    }
    return os.str();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["compression_rate"] = compression_rate;
    j["kappa_product"] = kappa_product;
    auto& arr = j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : layers) {
      nlohmann::ordered_json row;
      row["layer"] = l.layer;
      row["kind"] = l.kind;
      row["rank"] = l.rank;
      row["singular_values"] = l.singular_values;
      row["kappa"] = l.kappa;
      row["reg_value"] = l.reg_value;
      row["kappa_bound"] = l.kappa_bound;
      row["params"] = l.params;
      arr.push_back(std::move(row));
    }
    return j;
  }
};

inline LayerSpectrum layer_spectrum(const Layer& layer, std::size_t index) {
  const DenseMatrix op = conditioning_operand(layer);
  LayerSpectrum row;
  row.layer = index;
  row.kind = std::holds_alternative<FactorizedLinear>(layer) ? "linear" : "conv";
  row.rank = op.cols();
  row.singular_values = singular_values(op);
  row.reg_value = reg_value(op).value;
  if (row.sigma_max() > 0.0) {
    row.kappa = condition_number_from_values(row.singular_values);
  } else {
    row.kappa = kKappaSentinel;
  }
  row.kappa_bound = row.sigma_min() > 0.0 ? kappa_bound_from(row.reg_value, row.sigma_min())
                                          : std::numeric_limits<double>::infinity();
  row.params = layer_parameter_count(layer);
  return row;
}

inline SpectralReport spectral_report(const Network& net) {
  SpectralReport r;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    r.layers.push_back(layer_spectrum(net.layers[l], l));
    r.kappa_product *= r.layers.back().kappa;
  }
  r.compression_rate = compression_rate(net);
  return r;
}

/// Π κ(S_ℓ) · Π κ(σ_ℓ). Missing activation constants default to 1, which
/// gives the weights-only bound.
inline double sensitivity_bound(const Network& net, std::span<const double> activation_kappas = {}) {
  double bound = 1.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto sigma = singular_values(conditioning_operand(net.layers[l]));
    if (sigma.empty() || !(sigma.back() > 0.0) || sigma.back() < sigma.front() / kKappaSentinel)
      throw std::invalid_argument("sensitivity_bound: layer " + std::to_string(l) + " is singular");
    bound *= sigma.front() / sigma.back();
    if (l < activation_kappas.size()) bound *= activation_kappas[l];
  }
  return bound;
}

/// (‖f(X+δ) − f(X)‖ / ‖f(X)‖)·(‖X‖ / ‖δ‖) in Frobenius norms.
inline double measured_sensitivity(const Network& net, const DenseMatrix& x, const DenseMatrix& delta) {
  require_shape(x.rows() == delta.rows() && x.cols() == delta.cols(), "measured_sensitivity X vs delta");
  const double dn = frobenius_norm(delta);
  if (dn == 0.0) throw std::invalid_argument("measured_sensitivity: zero perturbation");
  const DenseMatrix fx = predict(net, x);
  const double fn = frobenius_norm(fx);
  if (fn == 0.0) throw std::invalid_argument("measured_sensitivity: f(X) is zero");
  const DenseMatrix fxd = predict(net, x + delta);
  return (frobenius_norm(fxd - fx) / fn) * (frobenius_norm(x) / dn);
}

/// Scatter of ς_i against i for the selected layers, log-free linear axes.
inline std::string spectra_svg(const SpectralReport& report, std::span<const std::size_t> layers) {
  constexpr double kW = 640, kH = 400, kPad = 50;
  double smax = 0.0;
  std::size_t nmax = 1;
  for (std::size_t idx : layers) {
    const auto& row = report.layers.at(idx);
    smax = std::max(smax, row.sigma_max());
    nmax = std::max(nmax, row.singular_values.size());
  }
  if (smax <= 0.0) smax = 1.0;
  const double ytop = smax * 1.1;
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">index i</text>\n";
  os << "<text x=\"12\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 12," << kH / 2
     << ")\" text-anchor=\"middle\">singular value</text>\n";
  os << "<text x=\"" << kPad - 5 << "\" y=\"" << kPad << "\" text-anchor=\"end\">" << format_double(ytop)
     << "</text>\n";
  auto px = [&](std::size_t i) {
    return nmax > 1 ? kPad + (kW - 2 * kPad) * static_cast<double>(i) / static_cast<double>(nmax - 1) : kW / 2;
  };
  auto py = [&](double s) { return kH - kPad - (kH - 2 * kPad) * s / ytop; };
  std::size_t series = 0;
  for (std::size_t idx : layers) {
    const auto& row = report.layers.at(idx);
    const char* color = kColors[series++ % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < row.singular_values.size(); ++i)
      os << px(i) << ',' << py(row.singular_values[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < row.singular_values.size(); ++i)
      os << "<circle cx=\"" << px(i) << "\" cy=\"" << py(row.singular_values[i]) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    os << "<text x=\"" << kW - kPad << "\" y=\"" << kPad + 16.0 * static_cast<double>(series)
       << "\" text-anchor=\"end\" fill=\"" << color << "\">layer " << idx << " (kappa "
       << format_double(row.kappa) << ")</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace rdlt
