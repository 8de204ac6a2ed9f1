#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace rdlt;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Metrics, EmptyRowsGiveHeaderOnly) {
  const auto p = rdlt::testing::scratch_dir("metrics_empty") / "m.csv";
  write_metrics({}, p.string(), "a,b");
  EXPECT_EQ(slurp(p), "a,b\n");
}

TEST(Metrics, TwoWritesShareOneHeader) {
  const auto p = rdlt::testing::scratch_dir("metrics_two") / "m.csv";
  write_metrics({{1.0, 2.0}}, p.string(), "a,b");
  write_metrics({{3.0, 4.5}}, p.string(), "a,b");
  EXPECT_EQ(slurp(p), "a,b\n1,2\n3,4.5\n");
}

TEST(Metrics, HeaderMismatchRejected) {
  const auto p = rdlt::testing::scratch_dir("metrics_mismatch") / "m.csv";
  write_metrics({{1.0}}, p.string(), "a");
  EXPECT_THROW(write_metrics({{1.0}}, p.string(), "b"), MetricsError);
  EXPECT_THROW(MetricsWriter("/nonexistent/dir/m.csv", "a"), MetricsError);
}

TEST(Metrics, RealsRoundTripExactly) {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.below(40)) - 20.0);
    const std::vector<double> row{v};
    EXPECT_EQ(std::stod(csv_row(row)), v);
  }
  const std::vector<double> special{1.0 / 3.0, 0.1, 1e300, -0.0};
  const std::string line = csv_row(special);
  std::stringstream ss(line);
  std::string cell;
  for (double v : special) {
    std::getline(ss, cell, ',');
    EXPECT_EQ(std::stod(cell), v);
  }
}
