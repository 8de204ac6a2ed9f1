#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "test_util.hpp"

using namespace rdlt;
namespace fs = std::filesystem;

namespace {

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Writes an IDX image/label pair; pixel value of image s at offset p is (s*31 + p) % 256 unless zero.
std::pair<std::string, std::string> idx_fixture(const fs::path& dir, std::uint32_t n, std::uint32_t n_labels,
                                                bool zero = false) {
  std::vector<unsigned char> img, lab;
  put_be32(img, kIdxImageMagic);
  put_be32(img, n);
  put_be32(img, 28);
  put_be32(img, 28);
  for (std::uint32_t s = 0; s < n; ++s)
    for (std::uint32_t p = 0; p < 28 * 28; ++p) img.push_back(zero ? 0 : static_cast<unsigned char>((s * 31 + p) % 256));
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, n_labels);
  for (std::uint32_t s = 0; s < n_labels; ++s) lab.push_back(static_cast<unsigned char>((3 * s + 1) % 10));
  const auto ip = dir / "images.idx", lp = dir / "labels.idx";
  write_bytes(ip, img);
  write_bytes(lp, lab);
  return {ip.string(), lp.string()};
}

IdxError::Kind idx_error_kind(const std::string& a, const std::string& b) {
  try {
    load_idx(a, b);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no IdxError thrown";
  return IdxError::Kind::io;
}

}  // namespace

TEST(LoadIdx, FixtureRoundTrip) {
  const auto dir = rdlt::testing::scratch_dir("idx_roundtrip");
  const auto [img, lab] = idx_fixture(dir, 4, 4);
  const Dataset d = load_idx(img, lab);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d.features(), 784u);
  EXPECT_EQ(d.width, 28u);
  EXPECT_EQ(d.height, 28u);
  EXPECT_EQ(d.classes, 10u);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 4, 7, 0}));
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t p = 0; p < 784; p += 97) EXPECT_DOUBLE_EQ(d.inputs(p, s), ((s * 31 + p) % 256) / 255.0);
  d.validate();
}

TEST(LoadIdx, AllZeroImagesAreValid) {
  const auto dir = rdlt::testing::scratch_dir("idx_zero");
  const auto [img, lab] = idx_fixture(dir, 3, 3, true);
  const Dataset d = load_idx(img, lab);
  EXPECT_EQ(max_abs(d.inputs.values()), 0.0);
}

TEST(LoadIdx, Errors) {
  const auto dir = rdlt::testing::scratch_dir("idx_errors");
  auto [img, lab] = idx_fixture(dir, 4, 3);
  EXPECT_EQ(idx_error_kind(img, lab), IdxError::Kind::count_mismatch);
  EXPECT_EQ(idx_error_kind((dir / "missing").string(), lab), IdxError::Kind::io);
  EXPECT_EQ(idx_error_kind(lab, lab), IdxError::Kind::bad_magic);
  idx_fixture(dir, 4, 4);
  fs::resize_file(img, 16 + 4 * 784 - 1);
  EXPECT_EQ(idx_error_kind(img, lab), IdxError::Kind::truncated);
  fs::resize_file(img, 10);
  EXPECT_EQ(idx_error_kind(img, lab), IdxError::Kind::truncated);
}

TEST(Spirals, NoiseFreePointsLieOnCurves) {
  const Dataset d = synth_spirals(3, 50, 0.0, 1);
  ASSERT_EQ(d.size(), 150u);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 50; ++i) {
      const std::size_t n = j * 50 + i;
      const double rho = static_cast<double>(i + 1) / 50.0;
      const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / 3.0 + 4.0 * rho;
      EXPECT_DOUBLE_EQ(d.inputs(0, n), rho * std::cos(th));
      EXPECT_DOUBLE_EQ(d.inputs(1, n), rho * std::sin(th));
      EXPECT_EQ(d.labels[n], static_cast<int>(j));
    }
}

TEST(Spirals, DeterministicPerSeed) {
  const Dataset a = synth_spirals(3, 100, 0.1, 42), b = synth_spirals(3, 100, 0.1, 42);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.inputs, synth_spirals(3, 100, 0.1, 43).inputs);
  EXPECT_THROW(synth_spirals(1, 10, 0.1, 1), std::invalid_argument);
}

TEST(Spirals, SolvableByFullBatchTraining) {
  Dataset d = synth_spirals(3, 100, 0.1, 7);
  Rng rng(1);
  Network net;
  net.layers.push_back(FactorizedLinear::random(64, 2, 2, Activation::relu, rng));
  net.layers.push_back(FactorizedLinear::random(64, 64, 64, Activation::relu, rng));
  net.layers.push_back(FactorizedLinear::random(3, 64, 3, Activation::identity, rng));
  EngineConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.reg_strength = 0.0;
  cfg.local_steps = 1;
  cfg.trunc_tol = 0.0;
  cfg.optimizer.kind = OptimizerKind::adam;
  cfg.batch_size = d.size();
  const TrainResult res = train(std::move(net), d, cfg, 200);
  EXPECT_GE(res.metrics.back().train_accuracy, 95.0);
}

TEST(Normalization, TrainStatsAppliedToBoth) {
  Dataset tr = synth_spirals(3, 40, 0.1, 1), va = synth_spirals(3, 40, 0.1, 2);
  normalize_pair(tr, va);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < tr.size(); ++n) mean += tr.inputs(c, n);
    mean /= static_cast<double>(tr.size());
    for (std::size_t n = 0; n < tr.size(); ++n) sq += (tr.inputs(c, n) - mean) * (tr.inputs(c, n) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(tr.size())), 1.0, 1e-2);
  }
  EXPECT_EQ(tr.stats.mean, va.stats.mean);
  EXPECT_EQ(tr.stats.std, va.stats.std);
}
