#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdlt/linalg.hpp"
#include "rdlt/random.hpp"

namespace rdlt {

enum class Split { train, validation };

struct NormalizationStats {
  std::vector<double> mean;  ///< per channel
  std::vector<double> std;   ///< per channel, > 0
};

struct Batch {
  DenseMatrix inputs;  ///< features x b
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Labelled samples stored column-wise. Features are laid out channel-major:
/// feature index = channel·(width·height) + pixel.
struct Dataset {
  DenseMatrix inputs;  ///< features x N
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t channels = 1;
  std::size_t width = 1;
  std::size_t height = 1;
  Split split = Split::train;
  NormalizationStats stats;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.rows(); }
  std::size_t pixels() const { return width * height; }

  void validate() const {
    if (inputs.cols() != labels.size()) throw std::invalid_argument("Dataset: inputs/labels length mismatch");
    if (channels * pixels() != inputs.rows()) throw std::invalid_argument("Dataset: feature layout mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::invalid_argument("Dataset: label out of range");
    for (double s : stats.std)
      if (!(s > 0.0)) throw std::invalid_argument("Dataset: normalization std must be positive");
  }

  Batch batch(std::span<const std::size_t> indices) const {
    Batch b{DenseMatrix(features(), indices.size()), std::vector<int>(indices.size())};
    for (std::size_t f = 0; f < features(); ++f) {
      auto src = inputs.row(f);
      auto dst = b.inputs.row(f);
      for (std::size_t n = 0; n < indices.size(); ++n) dst[n] = src[indices[n]];
    }
    for (std::size_t n = 0; n < indices.size(); ++n) b.labels[n] = labels[indices[n]];
    return b;
  }

  Batch all() const { return {inputs, labels}; }
};

/// Interleaved 2-D spirals: class j, point i has radius ρ = (i+1)/per_class
/// and angle 2πj/classes + 4ρ; Gaussian noise of stddev `noise` is added to
/// both coordinates. Point order is class-major.
inline Dataset synth_spirals(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("synth_spirals: need at least two classes");
  if (per_class == 0) throw std::invalid_argument("synth_spirals: per_class must be positive");
  Rng rng(seed);
  Dataset d;
  d.classes = classes;
  d.channels = 2;
  d.inputs = DenseMatrix(2, classes * per_class);
  d.labels.resize(classes * per_class);
  for (std::size_t j = 0; j < classes; ++j) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t n = j * per_class + i;
      const double rho = static_cast<double>(i + 1) / static_cast<double>(per_class);
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(classes) + 4.0 * rho;
      double x = rho * std::cos(theta);
      double y = rho * std::sin(theta);
      if (noise > 0.0) {
        x += noise * rng.normal();
        y += noise * rng.normal();
      }
      d.inputs(0, n) = x;
      d.inputs(1, n) = y;
      d.labels[n] = static_cast<int>(j);
    }
  }
  return d;
}

inline NormalizationStats compute_normalization(const Dataset& d) {
  NormalizationStats s{std::vector<double>(d.channels, 0.0), std::vector<double>(d.channels, 0.0)};
  const std::size_t pix = d.pixels();
  const double count = static_cast<double>(pix * d.size());
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0.0;
    for (std::size_t p = 0; p < pix; ++p)
      for (double v : d.inputs.row(c * pix + p)) sum += v;
    const double mean = sum / count;
    double var = 0.0;
    for (std::size_t p = 0; p < pix; ++p)
      for (double v : d.inputs.row(c * pix + p)) var += (v - mean) * (v - mean);
    s.mean[c] = mean;
    const double sd = std::sqrt(var / count);
    s.std[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

/// (x − mean_c)/std_c per channel; records the stats on the dataset.
inline void apply_normalization(Dataset& d, const NormalizationStats& s) {
  if (s.mean.size() != d.channels || s.std.size() != d.channels)
    throw std::invalid_argument("apply_normalization: channel count mismatch");
  const std::size_t pix = d.pixels();
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t p = 0; p < pix; ++p)
      for (double& v : d.inputs.row(c * pix + p)) v = (v - s.mean[c]) / s.std[c];
  d.stats = s;
}

/// Normalizes train with its own stats and validation with the same stats.
inline void normalize_pair(Dataset& train, Dataset& validation) {
  const NormalizationStats s = compute_normalization(train);
  apply_normalization(train, s);
  apply_normalization(validation, s);
}

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& path) {
  if (at + 4 > b.size()) throw IdxError(IdxError::Kind::truncated, "truncated IDX header in '" + path + "'");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace detail

/// MNIST-format IDX pair; pixels scaled to [0, 1]. Image rows map to the
/// width index and columns to the height index.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);
  if (detail::read_be32(img, 0, images_path) != kIdxImageMagic)
    throw IdxError(IdxError::Kind::bad_magic, "bad image magic in '" + images_path + "'");
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic)
    throw IdxError(IdxError::Kind::bad_magic, "bad label magic in '" + labels_path + "'");
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n != n_labels)
    throw IdxError(IdxError::Kind::count_mismatch, "image count " + std::to_string(n) + " != label count " +
                                                       std::to_string(n_labels));
  if (img.size() < 16 + n * rows * cols)
    throw IdxError(IdxError::Kind::truncated, "truncated image data in '" + images_path + "'");
  if (lab.size() < 8 + n) throw IdxError(IdxError::Kind::truncated, "truncated label data in '" + labels_path + "'");

  Dataset d;
  d.channels = 1;
  d.width = rows;
  d.height = cols;
  d.inputs = DenseMatrix(rows * cols, n);
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t p = 0; p < rows * cols; ++p) d.inputs(p, s) = img[16 + s * rows * cols + p] / 255.0;
    d.labels[s] = lab[8 + s];
    max_label = std::max(max_label, d.labels[s]);
  }
  d.classes = std::max<std::size_t>(static_cast<std::size_t>(max_label) + 1, 10);
  return d;
}

}  // namespace rdlt
