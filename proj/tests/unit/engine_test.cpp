#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace rdlt;
using rdlt::testing::max_diff;

namespace {

EngineConfig sgd_config(double lr, double beta, std::size_t steps = 1) {
  EngineConfig cfg;
  cfg.learning_rate = lr;
  cfg.reg_strength = beta;
  cfg.local_steps = steps;
  cfg.optimizer.kind = OptimizerKind::sgd;
  return cfg;
}

Network spirals_net(Rng& rng, std::size_t width = 64) {
  Network net;
  net.layers.push_back(FactorizedLinear::random(width, 2, 2, Activation::relu, rng));
  net.layers.push_back(FactorizedLinear::random(width, width, 16, Activation::relu, rng));
  net.layers.push_back(FactorizedLinear::random(3, width, 3, Activation::identity, rng));
  return net;
}

std::pair<Dataset, Dataset> spirals_pair() {
  Dataset tr = synth_spirals(3, 100, 0.1, 7);
  Dataset va = synth_spirals(3, 100, 0.1, 8);
  normalize_pair(tr, va);
  return {tr, va};
}

Batch random_batch(Rng& rng, std::size_t features, std::size_t b, int classes) {
  Batch out{rng.gaussian_matrix(features, b), std::vector<int>(b)};
  for (int& y : out.labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return out;
}

}  // namespace

TEST(Augment, GradientsInSpanStillReconstruct) {
  Rng rng(1);
  const FactorizedLinear l = FactorizedLinear::random(10, 8, 3, Activation::relu, rng);
  const AugmentedState st = augment(l, l.U, l.V);
  EXPECT_EQ(st.U_hat.cols(), 6u);
  EXPECT_LE(orthonormality_defect(st.U_hat), 1e-10);
  EXPECT_LE(orthonormality_defect(st.V_hat), 1e-10);
  EXPECT_LE(frobenius_norm(matmul_nt(matmul(st.U_hat, st.S_hat), st.V_hat) - l.dense_weight()), 1e-10);
}

TEST(Augment, HandExample) {
  FactorizedLinear l;
  l.U = DenseMatrix::from_rows({{1.0}, {0.0}});
  l.V = DenseMatrix::from_rows({{1.0}, {0.0}});
  l.S = DenseMatrix::from_rows({{2.0}});
  l.bias = {0.0, 0.0};
  const AugmentedState st = augment(l, DenseMatrix::from_rows({{0.0}, {1.0}}), DenseMatrix::from_rows({{0.0}, {1.0}}));
  EXPECT_NEAR(std::abs(st.U_hat(0, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(st.U_hat(1, 1)), 1.0, 1e-15);
  EXPECT_NEAR(st.U_hat(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(st.U_hat(0, 1), 0.0, 1e-15);
}

TEST(Augment, RandomReconstructionIdentity) {
  Rng rng(2);
  const FactorizedLinear l = FactorizedLinear::random(32, 32, 4, Activation::relu, rng);
  const AugmentedState st = augment(l, rng.gaussian_matrix(32, 4), rng.gaussian_matrix(32, 4));
  EXPECT_EQ(st.S_hat.rows(), 8u);
  EXPECT_LE(frobenius_norm(matmul_nt(matmul(st.U_hat, st.S_hat), st.V_hat) - l.dense_weight()), 1e-10);
}

TEST(CoefficientUpdate, RegularizerOnlyStep) {
  Rng rng(3);
  Network net;
  net.layers.push_back(FactorizedLinear::random(2, 2, 1, Activation::identity, rng));
  AugmentedState st;
  st.U_hat = DenseMatrix::identity(2);
  st.V_hat = DenseMatrix::identity(2);
  st.S_hat = DenseMatrix::diagonal(std::vector<double>{2.0, 1.0});
  const std::vector<Batch> batches{random_batch(rng, 2, 4, 2)};
  // λ = 0 removes the loss term and leaves S − 0.1·∇R
  const AugmentedState out = coefficient_update(st, net, 0, batches, sgd_config(0.0, 0.1));
  EXPECT_NEAR(out.S_hat(0, 0), 2.0 - 0.1 * 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(out.S_hat(1, 1), 1.0 + 0.1 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(out.S_hat(0, 0), 1.71716, 1e-5);
  EXPECT_NEAR(out.S_hat(1, 1), 1.14142, 1e-5);
  EXPECT_EQ(out.S_hat(0, 1), 0.0);
}

TEST(CoefficientUpdate, PlainProjectedGradient) {
  Rng rng(4);
  Network net;
  net.layers.push_back(FactorizedLinear::random(6, 5, 2, Activation::identity, rng));
  const auto& l = std::get<FactorizedLinear>(net.layers[0]);
  const std::vector<Batch> batches{random_batch(rng, 5, 7, 6)};
  const AugmentedState st = augment(l, rng.gaussian_matrix(6, 2), rng.gaussian_matrix(5, 2));
  const double lr = 0.05;
  const AugmentedState out = coefficient_update(st, net, 0, batches, sgd_config(lr, 0.0));
  // dense oracle: ∇_W L = (p − y)/b · zᵀ for a single identity layer
  Network dense = net;
  auto& dl = std::get<FactorizedLinear>(dense.layers[0]);
  const DenseMatrix w = matmul_nt(matmul(st.U_hat, st.S_hat), st.V_hat);
  dl.U = DenseMatrix::identity(6);
  dl.V = DenseMatrix::identity(5);
  dl.S = w;
  const LossResult lr_ = cross_entropy(predict(dense, batches[0].inputs), batches[0].labels);
  const DenseMatrix grad_w = matmul_nt(lr_.grad, batches[0].inputs);
  DenseMatrix expected = st.S_hat;
  expected.add_scaled(matmul(matmul_tn(st.U_hat, grad_w), st.V_hat), -lr);
  EXPECT_LE(max_diff(out.S_hat, expected), 1e-10);
}

TEST(CoefficientUpdate, ZeroRatesLeaveCoefficients) {
  Rng rng(5);
  Network net;
  net.layers.push_back(FactorizedLinear::random(6, 5, 2, Activation::identity, rng));
  const std::vector<Batch> batches{random_batch(rng, 5, 7, 6)};
  const auto& l = std::get<FactorizedLinear>(net.layers[0]);
  const AugmentedState st = augment(l, rng.gaussian_matrix(6, 2), rng.gaussian_matrix(5, 2));
  EXPECT_EQ(coefficient_update(st, net, 0, batches, sgd_config(0.0, 0.0, 3)).S_hat, st.S_hat);
}

TEST(Truncate, RankFromThreshold) {
  FactorizedLinear tmpl;
  tmpl.U = DenseMatrix(3, 1);
  tmpl.V = DenseMatrix(3, 1);
  tmpl.S = DenseMatrix(1, 1);
  tmpl.bias = {0.0, 0.0, 0.0};
  AugmentedState st;
  st.U_hat = DenseMatrix::identity(3);
  st.V_hat = DenseMatrix::identity(3);
  st.S_hat = DenseMatrix::diagonal(std::vector<double>{3.0, 2.0, 1.0});
  EngineConfig cfg = sgd_config(0.0, 0.0);
  cfg.trunc_tol = 0.3;
  cfg.rank_min = 1;
  EXPECT_EQ(truncate(st, cfg, tmpl).rank(), 2u);
  cfg.trunc_tol = 0.0;
  const FactorizedLinear full = truncate(st, cfg, tmpl);
  EXPECT_EQ(full.rank(), 3u);
  cfg.rank_max = 2;
  cfg.rank_min = 1;
  EXPECT_EQ(truncate(st, cfg, tmpl).rank(), 2u);
}

TEST(DlrtStep, NoOpRoundTrip) {
  Rng rng(6);
  Network net = spirals_net(rng, 16);
  const Network before = net;
  EngineConfig cfg = sgd_config(0.0, 0.0);
  cfg.trunc_tol = 0.0;
  cfg.rank_min = 1;
  cfg.check_invariants = true;
  TrainState state;
  const std::vector<Batch> batches{random_batch(rng, 2, 8, 3)};
  const StepReport rep = dlrt_step(net, batches, cfg, state);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& a = std::get<FactorizedLinear>(before.layers[l]);
    const auto& b = std::get<FactorizedLinear>(net.layers[l]);
    EXPECT_LE(frobenius_norm(b.dense_weight() - a.dense_weight()), 1e-9);
    EXPECT_LE(rep.layers[l].augmentation_defect, 1e-10);
    EXPECT_LE(rep.layers[l].orthonormality_defect, 1e-10);
  }
}

TEST(DlrtStep, RanksStayInBounds) {
  Rng rng(7);
  Network net = spirals_net(rng, 16);
  EngineConfig cfg = sgd_config(0.1, 0.05, 2);
  cfg.trunc_tol = 0.2;
  TrainState state;
  for (int it = 0; it < 20; ++it) {
    const std::vector<Batch> batches{random_batch(rng, 2, 8, 3)};
    const Network prev = net;
    const StepReport rep = dlrt_step(net, batches, cfg, state);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& lin = std::get<FactorizedLinear>(net.layers[l]);
      const auto& old = std::get<FactorizedLinear>(prev.layers[l]);
      const std::size_t k = std::min({2 * old.rank(), lin.n_out(), lin.n_in()});
      EXPECT_GE(lin.rank(), std::min(cfg.rank_min, k));
      EXPECT_LE(lin.rank(), k);
      EXPECT_EQ(rep.layers[l].rank_after, lin.rank());
      EXPECT_GE(rep.layers[l].kappa, 1.0);
    }
  }
}

TEST(Train, ZeroEpochsIsIdentity) {
  Rng rng(8);
  const Network net = spirals_net(rng, 16);
  const auto [tr, va] = spirals_pair();
  const TrainResult res = train(net, tr, sgd_config(0.1, 0.0), 0, &va);
  EXPECT_TRUE(res.metrics.empty());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& a = std::get<FactorizedLinear>(net.layers[l]);
    const auto& b = std::get<FactorizedLinear>(res.network.layers[l]);
    EXPECT_EQ(a.U, b.U);
    EXPECT_EQ(a.S, b.S);
    EXPECT_EQ(a.V, b.V);
    EXPECT_EQ(a.bias, b.bias);
  }
}

TEST(Train, RejectsBadConfig) {
  Rng rng(9);
  const auto [tr, va] = spirals_pair();
  EngineConfig cfg = sgd_config(0.1, 0.0);
  cfg.local_steps = 0;
  EXPECT_THROW(train(spirals_net(rng, 16), tr, cfg, 1), std::invalid_argument);
  cfg = sgd_config(0.1, 0.0);
  cfg.trunc_tol = 1.0;
  EXPECT_THROW(train(spirals_net(rng, 16), tr, cfg, 1), std::invalid_argument);
}

TEST(Train, SpiralsBaselineReachesNinetyPercent) {
  const auto [tr, va] = spirals_pair();
  std::vector<double> acc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    EngineConfig cfg;
    cfg.learning_rate = 0.08;
    cfg.reg_strength = 0.0;
    cfg.local_steps = 1;
    cfg.optimizer.kind = OptimizerKind::adam;
    cfg.seed = seed;
    const TrainResult res = train(spirals_net(rng), tr, cfg, 50, &va);
    ASSERT_EQ(res.metrics.size(), 50u);
    acc.push_back(res.metrics.back().train_accuracy);
  }
  std::sort(acc.begin(), acc.end());
  EXPECT_GE(acc[2], 90.0);
}

TEST(Train, DeterministicForSeed) {
  const auto [tr, va] = spirals_pair();
  auto run = [&] {
    Rng rng(3);
    EngineConfig cfg = sgd_config(0.1, 0.05);
    cfg.seed = 3;
    return train(spirals_net(rng, 16), tr, cfg, 2, &va).metrics;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].row(), b[i].row());
}

TEST(Train, DivergenceIsReported) {
  const auto [tr, va] = spirals_pair();
  Rng rng(4);
  EngineConfig cfg = sgd_config(1e200, 0.0);
  EXPECT_THROW(train(spirals_net(rng, 16), tr, cfg, 3), DivergenceError);
}

TEST(AdversarialTrain, ZeroEpsilonMatchesPlainTraining) {
  const auto [tr, va] = spirals_pair();
  EngineConfig cfg = sgd_config(0.1, 0.05);
  cfg.seed = 5;
  AttackSpec spec;
  spec.kind = AttackKind::fgsm_l2;
  spec.epsilon = 0.0;
  Rng r1(5), r2(5);
  const auto plain = train(spirals_net(r1, 16), tr, cfg, 2, &va).metrics;
  const auto adv = adversarial_train(spirals_net(r2, 16), tr, cfg, spec, 2, &va).metrics;
  ASSERT_EQ(plain.size(), adv.size());
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_EQ(plain[i].row(), adv[i].row());
}

TEST(AdversarialTrain, CleanHalfRoundsUp) {
  // b = 1 leaves ⌊1/2⌋ = 0 attacked samples, b = 2 attacks one of them
  const auto [tr, va] = spirals_pair();
  AttackSpec spec;
  spec.kind = AttackKind::fgsm_l2;
  spec.epsilon = 0.5;
  auto compare = [&](std::size_t bs) {
    EngineConfig cfg = sgd_config(0.1, 0.0);
    cfg.batch_size = bs;
    cfg.seed = 6;
    Rng r1(6), r2(6);
    Dataset small = tr;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < tr.size(); i += 7) idx.push_back(i);
    Batch sub = tr.batch(idx);
    small.inputs = sub.inputs;
    small.labels = sub.labels;
    const auto plain = train(spirals_net(r1, 16), small, cfg, 1).metrics;
    const auto adv = adversarial_train(spirals_net(r2, 16), small, cfg, spec, 1).metrics;
    return plain.front().row() == adv.front().row();
  };
  EXPECT_TRUE(compare(1));
  EXPECT_FALSE(compare(2));
}
