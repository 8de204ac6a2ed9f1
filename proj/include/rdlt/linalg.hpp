#pragma once

// Dense kernels for the small matrices of low-rank training: factors are
// n x r with r up to a few hundred, coefficients are r x r.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rdlt {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("DenseMatrix: data size does not match shape");
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> values) {
    DenseMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    DenseMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("DenseMatrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }
  void set_col(std::size_t j, std::span<const double> v) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
  }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  DenseMatrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    if (r0 + nr > rows_ || c0 + nc > cols_) throw std::out_of_range("DenseMatrix::block out of range");
    DenseMatrix b(nr, nc);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
    return b;
  }
  DenseMatrix leading_cols(std::size_t k) const { return block(0, 0, rows_, k); }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    check_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    check_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  DenseMatrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }
  /// this += s * o
  DenseMatrix& add_scaled(const DenseMatrix& o, double s) {
    check_same_shape(o, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
  friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }
  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void check_same_shape(const DenseMatrix& o, const char* op) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw std::invalid_argument(std::string("DenseMatrix ") + op + ": shape mismatch " +
                                  std::to_string(rows_) + "x" + std::to_string(cols_) + " vs " +
                                  std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

/// A * B
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require_shape(a.cols() == b.rows(), "matmul inner dimensions");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// Aᵀ * B
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn inner dimensions");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// A * Bᵀ
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt inner dimensions");
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

/// Frobenius inner product (A, B).
inline double inner(const DenseMatrix& a, const DenseMatrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

inline double frobenius_norm(const DenseMatrix& a) {
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (double v : a.values()) {
    const double t = v / scale;
    s += t * t;
  }
  return scale * std::sqrt(s);
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// [A | B]
inline DenseMatrix hcat(const DenseMatrix& a, const DenseMatrix& b) {
  require_shape(a.rows() == b.rows(), "hcat row counts");
  DenseMatrix c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), c.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), c.row(i).begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return c;
}

/// ‖AᵀA − I‖_F, the orthonormality defect of the columns of A.
inline double orthonormality_defect(const DenseMatrix& a) {
  DenseMatrix g = matmul_tn(a, a);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return frobenius_norm(g);
}

namespace detail {

// splitmix64; used for the deterministic completion vectors in orth().
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Relative column-norm drop tolerance used by orth().
inline constexpr double kOrthDropTol = 1e-12;

/// Orthonormal basis Q (n x k) with span(Q) ⊇ span(A), via Householder QR.
///
/// A column whose component orthogonal to the preceding columns falls below
/// kOrthDropTol times its own norm is treated as dependent: its trailing part
/// is replaced by a deterministic pseudo-random vector, which lives in the
/// orthogonal complement of the accumulated basis. The result therefore always
/// has exactly k columns. Columns are signed so that diag(R) ≥ 0, which makes
/// orth the identity on matrices that already have orthonormal columns.
inline DenseMatrix orth(const DenseMatrix& a) {
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  if (k == 0 || n < k) {
    throw std::invalid_argument("orth: need rows >= cols >= 1, got " + std::to_string(n) + "x" +
                                std::to_string(k));
  }
  DenseMatrix r = a;
  std::vector<std::vector<double>> reflectors(k);
  std::vector<double> betas(k, 0.0);
  std::vector<double> signs(k, 1.0);

  for (std::size_t j = 0; j < k; ++j) {
    double col_norm_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) col_norm_sq += a(i, j) * a(i, j);
    const double col_norm = std::sqrt(col_norm_sq);

    std::vector<double> x(n - j);
    for (std::size_t i = j; i < n; ++i) x[i - j] = r(i, j);
    double tail = 0.0;
    for (double v : x) tail += v * v;
    tail = std::sqrt(tail);

    if (tail <= kOrthDropTol * col_norm || tail == 0.0) {
      std::uint64_t state = 0x5DEECE66DULL + 7919ULL * j;
      tail = 0.0;
      for (double& v : x) {
        v = static_cast<double>(detail::splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        tail += v * v;
      }
      tail = std::sqrt(tail);
    }

    const double alpha = x[0] >= 0.0 ? -tail : tail;
    x[0] -= alpha;
    double vnorm_sq = 0.0;
    for (double v : x) vnorm_sq += v * v;
    const double beta = vnorm_sq > 0.0 ? 2.0 / vnorm_sq : 0.0;

    for (std::size_t c = j + 1; c < k; ++c) {
      double s = 0.0;
      for (std::size_t i = j; i < n; ++i) s += x[i - j] * r(i, c);
      s *= beta;
      for (std::size_t i = j; i < n; ++i) r(i, c) -= s * x[i - j];
    }
    signs[j] = alpha < 0.0 ? -1.0 : 1.0;
    reflectors[j] = std::move(x);
    betas[j] = beta;
  }

  DenseMatrix q(n, k);
  for (std::size_t j = 0; j < k; ++j) q(j, j) = 1.0;
  for (std::size_t jj = k; jj-- > 0;) {
    const auto& v = reflectors[jj];
    const double beta = betas[jj];
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t i = jj; i < n; ++i) s += v[i - jj] * q(i, c);
      s *= beta;
      if (s == 0.0) continue;
      for (std::size_t i = jj; i < n; ++i) q(i, c) -= s * v[i - jj];
    }
  }
  for (std::size_t j = 0; j < k; ++j)
    if (signs[j] < 0.0)
      for (std::size_t i = 0; i < n; ++i) q(i, j) = -q(i, j);
  return q;
}

struct SvdResult {
  DenseMatrix left;                     ///< m x k, orthonormal columns
  std::vector<double> singular_values;  ///< k values, non-increasing
  DenseMatrix right;                    ///< n x k, orthonormal columns

  DenseMatrix reconstruct() const {
    DenseMatrix us = left;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= singular_values[j];
    return matmul_nt(us, right);
  }
};

namespace detail {

// One-sided (Hestenes) Jacobi on a tall matrix held as columns.
inline SvdResult jacobi_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  std::vector<std::vector<double>> cols(n, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) cols[j][i] = a(i, j);
  std::vector<std::vector<double>> vcols(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) vcols[j][j] = 1.0;

  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto& cp = cols[p];
        auto& cq = cols[q];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = cp[i];
          const double xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
        auto& vp = vcols[p];
        auto& vq = vcols[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = vp[i];
          const double xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (double v : cols[j]) s += v * v;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out{DenseMatrix(m, n), std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    out.singular_values[jj] = sigma[j];
    const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) out.left(i, jj) = cols[j][i] * inv;
    for (std::size_t i = 0; i < n; ++i) out.right(i, jj) = vcols[j][i];
  }
  // Zero singular values leave zero columns; orth completes them and polishes
  // the rest without changing signs.
  if (n > 0 && out.singular_values.back() < std::numeric_limits<double>::min() * 1e8) {
    out.left = orth(out.left);
  }
  return out;
}

}  // namespace detail

/// Thin SVD by one-sided Jacobi rotations. Deterministic.
inline SvdResult svd(const DenseMatrix& a) {
  if (a.empty()) throw std::invalid_argument("svd: empty matrix");
  if (!all_finite(a.values())) throw std::domain_error("svd: non-finite input");
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall(a);
  SvdResult t = detail::jacobi_svd_tall(a.transpose());
  return {std::move(t.right), std::move(t.singular_values), std::move(t.left)};
}

inline std::vector<double> singular_values(const DenseMatrix& a) { return svd(a).singular_values; }

/// First k left singular vectors of A (k ≤ rows). When k exceeds the thin
/// basis width the remainder is an orthonormal completion.
inline DenseMatrix leading_left_basis(const SvdResult& sv, std::size_t k) {
  const DenseMatrix& u = sv.left;
  if (k > u.rows()) throw std::invalid_argument("leading_left_basis: k exceeds the row count");
  if (k <= u.cols()) return u.leading_cols(k);
  return orth(hcat(u, DenseMatrix(u.rows(), k - u.cols())));
}

struct TruncatedSvd {
  std::size_t rank = 0;
  DenseMatrix left;
  std::vector<double> singular_values;
  DenseMatrix right;
};

/// Smallest rank r₁ in [0, k] whose discarded tail ‖ς_{r₁+1..k}‖₂ is < theta
/// (k when none qualifies), clamped to [r_min, k].
inline std::size_t threshold_rank(std::span<const double> sigma, double theta, std::size_t r_min) {
  if (theta < 0.0) throw std::invalid_argument("threshold_rank: theta must be non-negative");
  const std::size_t k = sigma.size();
  std::size_t rank = k;
  // tails[r] = ‖ς_r..ς_{k-1}‖ (0-based); accumulate from the back.
  double tail_sq = 0.0;
  std::vector<double> tails(k + 1, 0.0);
  for (std::size_t r = k; r-- > 0;) {
    tail_sq += sigma[r] * sigma[r];
    tails[r] = std::sqrt(tail_sq);
  }
  for (std::size_t r = 0; r <= k; ++r) {
    if (tails[r] < theta) {
      rank = r;
      break;
    }
  }
  return std::min(std::max(rank, r_min), k);
}

inline TruncatedSvd truncate_by_threshold(const SvdResult& sv, double theta, std::size_t r_min) {
  const std::size_t r = threshold_rank(sv.singular_values, theta, r_min);
  return {r, sv.left.leading_cols(r),
          std::vector<double>(sv.singular_values.begin(), sv.singular_values.begin() + static_cast<std::ptrdiff_t>(r)),
          sv.right.leading_cols(r)};
}

/// Saturation value of condition_number() for numerically singular input.
inline constexpr double kKappaSentinel = 1e14;

/// ς_max/ς_min. Returns kKappaSentinel when ς_min < ς_max / kKappaSentinel.
inline double condition_number_from_values(std::span<const double> sigma) {
  if (sigma.empty() || sigma.front() <= 0.0) throw std::invalid_argument("condition_number: zero matrix");
  const double smax = sigma.front();
  const double smin = sigma.back();
  if (smin < smax / kKappaSentinel) return kKappaSentinel;
  return smax / smin;
}

inline double condition_number(const DenseMatrix& a) {
  if (frobenius_norm(a) == 0.0) throw std::invalid_argument("condition_number: zero matrix");
  return condition_number_from_values(singular_values(a));
}

/// κ over the singular values above rel_cutoff·ς_max, i.e. ‖A‖‖A†‖ for a
/// numerically rank-deficient A such as a reconstructed U S Vᵀ.
inline double effective_condition_number(const DenseMatrix& a, double rel_cutoff = 1e-10) {
  const auto sigma = singular_values(a);
  if (sigma.empty() || sigma.front() <= 0.0) throw std::invalid_argument("condition_number: zero matrix");
  double smin = sigma.front();
  for (double s : sigma)
    if (s > rel_cutoff * sigma.front()) smin = s;
  return sigma.front() / smin;
}

/// Order-4 tensor with dims (N_O, N_I, S_W, S_H), last index fastest.
class DenseTensor4 {
 public:
  using Dims = std::array<std::size_t, 4>;

  DenseTensor4() = default;
  explicit DenseTensor4(Dims dims, double fill = 0.0)
      : dims_(dims), data_(dims[0] * dims[1] * dims[2] * dims[3], fill) {}
  DenseTensor4(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims[0] * dims[1] * dims[2] * dims[3])
      throw std::invalid_argument("DenseTensor4: data size does not match dims");
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t m) const noexcept { return dims_[m]; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t offset(std::size_t o, std::size_t i, std::size_t w, std::size_t h) const noexcept {
    return ((o * dims_[1] + i) * dims_[2] + w) * dims_[3] + h;
  }
  double& operator()(std::size_t o, std::size_t i, std::size_t w, std::size_t h) noexcept {
    return data_[offset(o, i, w, h)];
  }
  double operator()(std::size_t o, std::size_t i, std::size_t w, std::size_t h) const noexcept {
    return data_[offset(o, i, w, h)];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const DenseTensor4&, const DenseTensor4&) = default;

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

inline double frobenius_norm(const DenseTensor4& t) {
  return frobenius_norm(DenseMatrix(1, t.size(), std::vector<double>(t.values().begin(), t.values().end())));
}

/// Mat(C): N_O x (N_I·S_W·S_H), column index flattened as (i, s_w, s_h) with i
/// slowest. This coincides with the tensor's storage order.
inline DenseMatrix unfold_output_mode(const DenseTensor4& c) {
  const auto& d = c.dims();
  return DenseMatrix(d[0], d[1] * d[2] * d[3], std::vector<double>(c.values().begin(), c.values().end()));
}

inline DenseTensor4 refold_output_mode(const DenseMatrix& m, const DenseTensor4::Dims& dims) {
  require_shape(m.rows() == dims[0] && m.cols() == dims[1] * dims[2] * dims[3], "refold_output_mode");
  return DenseTensor4(dims, std::vector<double>(m.values().begin(), m.values().end()));
}

/// Input-mode unfolding: N_I x (N_O·S_W·S_H), column flattened as (o, s_w, s_h).
inline DenseMatrix unfold_input_mode(const DenseTensor4& c) {
  const auto& d = c.dims();
  DenseMatrix m(d[1], d[0] * d[2] * d[3]);
  for (std::size_t o = 0; o < d[0]; ++o)
    for (std::size_t i = 0; i < d[1]; ++i)
      for (std::size_t w = 0; w < d[2]; ++w)
        for (std::size_t h = 0; h < d[3]; ++h) m(i, (o * d[2] + w) * d[3] + h) = c(o, i, w, h);
  return m;
}

/// C ×₀ M: result(a, i, w, h) = Σ_o M(a, o) C(o, i, w, h).
inline DenseTensor4 mode0_product(const DenseTensor4& c, const DenseMatrix& m) {
  require_shape(m.cols() == c.dim(0), "mode0_product");
  const DenseMatrix r = matmul(m, unfold_output_mode(c));
  return refold_output_mode(r, {m.rows(), c.dim(1), c.dim(2), c.dim(3)});
}

/// C ×₁ M: result(o, a, w, h) = Σ_i M(a, i) C(o, i, w, h).
inline DenseTensor4 mode1_product(const DenseTensor4& c, const DenseMatrix& m) {
  require_shape(m.cols() == c.dim(1), "mode1_product");
  const auto& d = c.dims();
  DenseTensor4 out({d[0], m.rows(), d[2], d[3]});
  const std::size_t win = d[2] * d[3];
  for (std::size_t o = 0; o < d[0]; ++o)
    for (std::size_t a = 0; a < m.rows(); ++a)
      for (std::size_t i = 0; i < d[1]; ++i) {
        const double mai = m(a, i);
        if (mai == 0.0) continue;
        const double* src = &c.values()[c.offset(o, i, 0, 0)];
        double* dst = &out.values()[out.offset(o, a, 0, 0)];
        for (std::size_t s = 0; s < win; ++s) dst[s] += mai * src[s];
      }
  return out;
}

}  // namespace rdlt
