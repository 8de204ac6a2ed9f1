#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace rdlt;
using rdlt::testing::max_diff;

namespace {
const DenseMatrix kDiag21 = DenseMatrix::diagonal(std::vector<double>{2.0, 1.0});
}

TEST(RegValue, IdentityIsZero) {
  const auto e = reg_value(DenseMatrix::identity(4));
  EXPECT_EQ(e.value, 0.0);
  EXPECT_DOUBLE_EQ(e.alpha_sq, 1.0);
}

TEST(RegValue, Diag21) {
  const auto e = reg_value(kDiag21);
  EXPECT_DOUBLE_EQ(e.alpha_sq, 2.5);
  EXPECT_NEAR(e.value, std::sqrt(4.5), 1e-15);
}

TEST(RegValue, ScaledOrthonormalIsZero) {
  Rng rng(1);
  DenseMatrix q = rng.orthonormal(6, 6);
  q *= 3.5;
  EXPECT_LE(reg_value(q).value, 1e-12);
}

TEST(RegGradient, Diag21ClosedForm) {
  const DenseMatrix g = reg_gradient(kDiag21);
  EXPECT_NEAR(g(0, 0), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(g(1, 1), -std::sqrt(2.0), 1e-12);
  EXPECT_EQ(g(0, 1), 0.0);
  EXPECT_EQ(g(1, 0), 0.0);
}

TEST(RegGradient, FloorGivesZero) {
  const DenseMatrix g = reg_gradient(DenseMatrix::identity(3));
  EXPECT_EQ(frobenius_norm(g), 0.0);
}

TEST(RegGradient, TraceIdentityDiag21) {
  EXPECT_NEAR(inner(reg_gradient(kDiag21), kDiag21), 2.0 * std::sqrt(4.5), 1e-12);
}

TEST(RegGradient, MatchesFiniteDifferencesOnTallMatrices) {
  Rng rng(2);
  for (int k = 0; k < 10; ++k) {
    DenseMatrix s = rng.gaussian_matrix(7, 3);
    const DenseMatrix g = reg_gradient(s);
    DenseMatrix fd(7, 3);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double x = s.values()[i];
      s.values()[i] = x + 1e-6;
      const double up = reg_value(s).value;
      s.values()[i] = x - 1e-6;
      const double dn = reg_value(s).value;
      s.values()[i] = x;
      fd.values()[i] = (up - dn) / 2e-6;
    }
    EXPECT_LE(frobenius_norm(fd - g) / frobenius_norm(g), 1e-6);
  }
}

TEST(KappaBound, Examples) {
  EXPECT_DOUBLE_EQ(kappa_bound(DenseMatrix::identity(3)), 1.0);
  EXPECT_NEAR(kappa_bound(kDiag21), std::exp(1.5), 1e-12);
  EXPECT_GE(kappa_bound(kDiag21), condition_number(kDiag21));
  EXPECT_THROW(kappa_bound(DenseMatrix::diagonal(std::vector<double>{1.0, 0.0})), std::invalid_argument);
}

TEST(KappaBound, RandomSweepNeverViolated) {
  Rng rng(3);
  for (int k = 0; k < 300; ++k) {
    const std::size_t r = 1 + rng.below(16);
    const DenseMatrix s = verify::well_conditioned(rng, r);
    EXPECT_LE(condition_number(s), kappa_bound(s));
  }
}

TEST(RegValueDense, AgreesWithCoefficientForm) {
  Rng rng(4);
  const DenseMatrix s = rng.gaussian_matrix(4, 4);
  const DenseMatrix w = matmul_nt(matmul(rng.orthonormal(20, 4), s), rng.orthonormal(11, 4));
  EXPECT_NEAR(reg_value_dense(w, 4), reg_value(s).value, 1e-10 * std::max(1.0, reg_value(s).value));
  EXPECT_THROW(reg_value_dense(w, 0), std::invalid_argument);
}

TEST(ConvReg, ReducesToMatrixExample) {
  DenseTensor4 core({2, 2, 1, 1});
  core(0, 0, 0, 0) = 2.0;
  core(1, 1, 0, 0) = 1.0;
  EXPECT_NEAR(conv_reg_value(core).value, std::sqrt(4.5), 1e-14);
}

TEST(ConvReg, ScaledOrthonormalOperandIsZero) {
  Rng rng(5);
  DenseMatrix q = rng.orthonormal(18, 3);  // Mat(S)ᵀ for dims (3, 2, 3, 3)
  q *= 2.0;
  const DenseTensor4 core = refold_output_mode(q.transpose(), {3, 2, 3, 3});
  EXPECT_LE(conv_reg_value(core).value, 1e-12);
}

TEST(ConvReg, EqualsMatrixRegularizerBitForBit) {
  Rng rng(6);
  DenseTensor4 core({3, 2, 3, 3});
  for (double& v : core.values()) v = rng.normal();
  EXPECT_EQ(conv_reg_value(core).value, reg_value(unfold_output_mode(core).transpose()).value);
  const DenseTensor4 g = conv_reg_gradient(core);
  const DenseMatrix gm = reg_gradient(unfold_output_mode(core).transpose());
  EXPECT_EQ(unfold_output_mode(g), gm.transpose());
}

TEST(ConvReg, RejectsTooManyOutputRanks) {
  DenseTensor4 core({5, 2, 1, 2});
  EXPECT_THROW(conv_reg_value(core), std::invalid_argument);
}

TEST(StabilityFlow, LinearDecayFollowsExponential) {
  Rng rng(7);
  const DenseMatrix s0 = rng.gaussian_matrix(3, 3);
  FlowOptions fo;
  fo.record_states = true;
  const FlowTrace tr = stability_flow(s0, DenseMatrix(3, 3), 0.0, 1.0, 1e-4, fo);
  for (std::size_t k = 0; k < tr.times.size(); k += 500) {
    DenseMatrix exact = s0;
    exact *= std::exp(-tr.times[k]);
    // explicit Euler is first order: error ≤ dt relative
    EXPECT_LE(frobenius_norm(tr.states[k] - exact), 1e-4 * frobenius_norm(s0));
    EXPECT_LE(tr.lhs[k], tr.rhs[k] + 1e-15);
  }
}

TEST(StabilityFlow, InequalityHoldsOnReferenceCase) {
  const DenseMatrix m = kDiag21;
  const FlowTrace tr = stability_flow(DenseMatrix::identity(2), m, 0.1, 10.0, 1e-3);
  EXPECT_FALSE(tr.diverged_at.has_value());
  EXPECT_LE(tr.max_violation, 1e-3 * (1.0 + 5.0));
  EXPECT_EQ(tr.times.front(), 0.0);
  for (std::size_t k = 1; k < tr.times.size(); ++k) EXPECT_GT(tr.times[k], tr.times[k - 1]);
}

TEST(StabilityFlow, ReportsDivergence) {
  const FlowTrace tr = stability_flow(DenseMatrix::identity(2), DenseMatrix::identity(2), 0.0, 10.0, 5.0);
  // dt = 5 with a −S term amplifies by |1 − 5| = 4 per step but stays finite; force overflow instead
  FlowOptions fo;
  fo.gradient = [](const DenseMatrix& s) {
    DenseMatrix g = s;
    g *= -1e300;
    return g;
  };
  const FlowTrace bad = stability_flow(DenseMatrix::identity(2), DenseMatrix::identity(2), 1.0, 1.0, 0.1, fo);
  ASSERT_TRUE(bad.diverged_at.has_value());
  EXPECT_GT(*bad.diverged_at, 0.0);
  EXPECT_FALSE(tr.diverged_at.has_value());
}

TEST(StabilityFlow, RejectsBadArguments) {
  const DenseMatrix s = DenseMatrix::identity(2);
  EXPECT_THROW(stability_flow(s, s, 0.1, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(stability_flow(s, s, -0.1, 1.0, 0.1), std::invalid_argument);
  EXPECT_THROW(stability_flow(s, DenseMatrix::identity(3), 0.1, 1.0, 0.1), std::invalid_argument);
}
