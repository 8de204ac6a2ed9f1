#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"

using namespace rdlt;

namespace {

Checkpoint sample_checkpoint() {
  Rng rng(1);
  Checkpoint ck;
  ck.network.layers.push_back(LowRankConv2D::random(4, 1, 3, 3, 2, 1, 5, 5, Activation::relu, rng));
  ck.network.layers.push_back(FactorizedLinear::random(10, 100, 4, Activation::tanh, rng));
  ck.network.layers.push_back(FactorizedLinear::random(3, 10, 3, Activation::softmax, rng));
  for (double& b : std::get<FactorizedLinear>(ck.network.layers[1]).bias) b = rng.normal();
  ck.config_text = "{\"seed\": 9}\n";
  ck.seed = 9;
  return ck;
}

CheckpointError::Kind decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const Checkpoint ck = sample_checkpoint();
  const auto path = rdlt::testing::scratch_dir("ckpt") / "model.rdlt";
  save_checkpoint(ck, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  EXPECT_EQ(back.seed, ck.seed);
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  const auto& c0 = std::get<LowRankConv2D>(ck.network.layers[0]);
  const auto& c1 = std::get<LowRankConv2D>(back.network.layers[0]);
  EXPECT_EQ(c0.core, c1.core);
  EXPECT_EQ(c0.U_out, c1.U_out);
  EXPECT_EQ(c0.width, c1.width);
  const auto& l0 = std::get<FactorizedLinear>(ck.network.layers[1]);
  const auto& l1 = std::get<FactorizedLinear>(back.network.layers[1]);
  EXPECT_EQ(l0.S, l1.S);
  EXPECT_EQ(l0.bias, l1.bias);
  EXPECT_EQ(l0.activation, l1.activation);
}

TEST(Checkpoint, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(std::memcmp(bytes.data(), "RDLT", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 9);
}

TEST(Checkpoint, EveryTruncationIsCorrupt) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n = 8; n < bytes.size(); n += 37) {
    const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_EQ(decode_error(cut), CheckpointError::Kind::corrupt_record) << "length " << n;
  }
}

TEST(Checkpoint, MagicAndVersionErrors) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), CheckpointError::Kind::magic_mismatch);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(decode_error(bad), CheckpointError::Kind::version_mismatch);
  bytes.push_back(0);
  EXPECT_EQ(decode_error(bytes), CheckpointError::Kind::corrupt_record);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.rdlt"), CheckpointError);
}
