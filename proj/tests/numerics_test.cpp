#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "oracle.hpp"
#include "unig/error.hpp"
#include "unig/numerics.hpp"
#include "unig/rng.hpp"
#include "unig/tensor.hpp"

using namespace unig;

TEST(Rng, MixerValuesAreFrozen) {
  EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(mix64(1), 0x910a2dec89025cc1ULL);
}

TEST(Rng, StreamSequenceIsFrozen) {
  RngStream rng(42);
  EXPECT_EQ(rng.next_u64(), 0xda9e4b397e1a2212ULL);
  EXPECT_EQ(rng.next_u64(), 0x1f9bbdaac1906dbcULL);
  EXPECT_EQ(rng.next_u64(), 0x57f1dcd56c289081ULL);
  EXPECT_EQ(rng.counter(), 3u);
}

TEST(Rng, NormalConsumesTwoDraws) {
  RngStream rng(5);
  rng.normal();
  EXPECT_EQ(rng.counter(), 2u);
}

TEST(Rng, DeriveSeedSeparatesTags) {
  EXPECT_NE(derive_seed(1, {2}), derive_seed(1, {3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_EQ(derive_seed(9, {4, 5}), derive_seed(9, {4, 5}));
}

TEST(Rng, NormalMoments) {
  RngStream rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ChoiceStaysInRange) {
  RngStream rng(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[rng.choice(7)];
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Softmax, MatchesFrozenValues) {
  const Tensor p = softmax(Tensor::matrix(1, 3, {1, 2, 3}));
  EXPECT_NEAR(p[0], 0.090030573170380457998, 1e-15);
  EXPECT_NEAR(p[1], 0.24472847105479765247, 1e-15);
  EXPECT_NEAR(p[2], 0.66524095577482188953, 1e-15);
}

TEST(Softmax, StableForLargeLogits) {
  const Tensor p = softmax(Tensor::matrix(2, 3, {1000, 1001, 1002, -1e4, 0, -1e4}));
  EXPECT_TRUE(p.all_finite());
  const auto ref = oracle::softmax_ld({1000, 1001, 1002});
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], (double)ref[k], 1e-15);
  EXPECT_DOUBLE_EQ(p.at(1, 1), 1.0);
}

TEST(Softmax, AgreesWithOracleOnRandomRows) {
  RngStream rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(6);
    for (auto& v : z) v = rng.normal(0, 5);
    std::vector<double> row = z;
    softmax_inplace(row);
    const auto ref = oracle::softmax_ld(z);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(row[k], (double)ref[k], 1e-14);
  }
}

TEST(OneHot, RejectsOutOfRangeLabel) {
  const std::vector<int> ok{0, 2};
  const Tensor t = one_hot(ok, 3);
  EXPECT_EQ(t.at(1, 2), 1.0);
  EXPECT_EQ(t.at(1, 0), 0.0);
  const std::vector<int> bad{3};
  EXPECT_THROW(one_hot(bad, 3), InputDomainError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(one_hot(neg, 3), InputDomainError);
}

TEST(Minmax, NormalizesEachRow) {
  const auto r = minmax_normalize(Tensor::matrix(2, 3, {1, 3, 2, -4, -4, 0}));
  EXPECT_NEAR(r.values.at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(r.values.at(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(r.values.at(0, 2), 0.5, 1e-12);
  EXPECT_EQ(r.argmin[0], 0u);
  EXPECT_EQ(r.argmax[0], 1u);
  EXPECT_THROW(minmax_normalize(Tensor::matrix(1, 2, {0, 1}), 0.0), InputDomainError);
  // ties resolve to the first occurrence
  EXPECT_EQ(r.argmin[1], 0u);
  EXPECT_EQ(r.argmax[1], 2u);
}

TEST(Minmax, ConstantRowMapsToZeros) {
  const auto r = minmax_normalize(Tensor::matrix(1, 4, {2, 2, 2, 2}));
  for (double v : r.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(ProjectBall, LinfClipsAndBoxes) {
  const Tensor x0 = Tensor::matrix(1, 3, {0.5, 0.05, 0.95});
  const Tensor xa = Tensor::matrix(1, 3, {0.9, -0.5, 1.2});
  const Tensor p = project_ball(xa, x0, Norm::kLinf, 0.1);
  EXPECT_NEAR(p[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
  EXPECT_NEAR(p[2], 1.0, 1e-15);
}

TEST(ProjectBall, L2RescalesIntoBall) {
  const Tensor x0(Shape{1, 4}, 0.5);
  const Tensor xa = Tensor::matrix(1, 4, {0.8, 0.9, 0.5, 0.5});
  const Tensor p = project_ball(xa, x0, Norm::kL2, 0.25);
  EXPECT_LE(distance(p.row(0), x0.row(0), Norm::kL2), 0.25 + 1e-12);
  // direction preserved
  EXPECT_NEAR((p[1] - 0.5) / (p[0] - 0.5), 4.0 / 3.0, 1e-12);
}

TEST(ProjectBall, InsideBallUnchanged) {
  const Tensor x0(Shape{1, 4}, 0.5);
  const Tensor xa = Tensor::matrix(1, 4, {0.51, 0.49, 0.5, 0.52});
  EXPECT_EQ(project_ball(xa, x0, Norm::kLinf, 0.1), xa);
}

TEST(Cosine, PairwiseMatchesBruteForce) {
  RngStream rng(21);
  Tensor m(Shape{6, 5});
  for (auto& v : m.data()) v = rng.normal();
  for (std::size_t c = 0; c < 5; ++c) m.at(3, c) = 0.0;  // skipped row
  oracle::Mat rows;
  for (std::size_t r = 0; r < 6; ++r) rows.emplace_back(m.row(r).begin(), m.row(r).end());
  EXPECT_NEAR(pairwise_cosine(m), oracle::pairwise_cosine(rows), 1e-13);
}

TEST(Cosine, UndefinedWithFewerThanTwoRows) {
  Tensor m(Shape{3, 2});
  m.at(0, 0) = 1.0;
  EXPECT_THROW(pairwise_cosine(m), UndefinedMetricError);
}

TEST(Norms, BasicValues) {
  const std::vector<double> a{3, -4};
  const std::vector<double> z{0, 0};
  EXPECT_DOUBLE_EQ(l2_norm(a), 5.0);
  EXPECT_DOUBLE_EQ(linf_norm(a), 4.0);
  EXPECT_DOUBLE_EQ(distance(a, z, Norm::kL2), 5.0);
  EXPECT_EQ(argmax(std::vector<double>{1, 5, 5}), 1u);
  EXPECT_EQ(sign_of(0.0), 0.0);
  EXPECT_EQ(parse_norm("l2"), Norm::kL2);
  EXPECT_EQ(to_string(Norm::kLinf), "linf");
}

TEST(Tensor, RowOpsAndShapeChecks) {
  const Tensor t = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.slice_rows(1, 3), Tensor::matrix(2, 2, {3, 4, 5, 6}));
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(t.gather_rows(idx), Tensor::matrix(2, 2, {5, 6, 1, 2}));
  EXPECT_EQ(Tensor::concat_rows(t.slice_rows(0, 1), t.slice_rows(1, 3)), t);
  EXPECT_EQ(t.reshaped({2, 3}).shape(), (Shape{2, 3}));
  EXPECT_ANY_THROW(t.reshaped({4, 2}));
}
