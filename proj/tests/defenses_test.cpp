#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "unig/defenses.hpp"
#include "unig/error.hpp"
#include "unig/harness.hpp"
#include "unig/rng.hpp"

using namespace unig;

namespace {

ClassifierModel model8() {
  ArchConfig arch;
  arch.conv_channels = {4};
  arch.features = 12;
  return init_classifier({1, 8, 8}, 4, arch, 21);
}

Tensor images(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  Tensor x(Shape{n, 1, 8, 8});
  for (auto& v : x.data()) v = rng.uniform();
  return x;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Oracle, CountsEveryImageIncludingOverBudget) {
  const ClassifierModel m = model8();
  VanillaOracle o(m, 5);
  const Tensor x = images(3, 1);
  auto r1 = o.query(x);
  EXPECT_FALSE(r1.over_budget);
  EXPECT_EQ(r1.count, 3u);
  EXPECT_FALSE(o.exhausted());
  auto r2 = o.query(x);
  EXPECT_TRUE(r2.over_budget);
  EXPECT_EQ(o.query_count(), 6u);
  EXPECT_EQ(o.call_count(), 2u);
  EXPECT_TRUE(o.exhausted());
  EXPECT_EQ(r2.probs, m.forward_probs(x));
}

TEST(Oracle, RndWithZeroSigmaIsVanilla) {
  const ClassifierModel m = model8();
  RndOracle o(m, 0.0, 3);
  const Tensor x = images(4, 2);
  EXPECT_LT(max_abs_diff(o.query(x).probs, m.forward_probs(x)), 1e-15);
}

TEST(Oracle, RndNoiseIsFreshPerCallAndSeeded) {
  const ClassifierModel m = model8();
  const Tensor x = images(2, 3);
  RndOracle a(m, 0.05, 7), b(m, 0.05, 7);
  const Tensor a1 = a.query(x).probs, a2 = a.query(x).probs;
  EXPECT_NE(a1, a2);
  EXPECT_EQ(b.query(x).probs, a1);
  EXPECT_EQ(b.query(x).probs, a2);
}

TEST(Oracle, RndAveragesToStableMean) {
  // Repeated noisy answers average to the same class scores whatever the
  // seed, i.e. the noise is unbiased draw to draw.
  const ClassifierModel m = model8();
  const Tensor x = images(1, 4);
  std::vector<std::vector<double>> means;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    RndOracle o(m, 0.02, seed);
    std::vector<double> acc(4, 0.0);
    for (int t = 0; t < 1000; ++t) {
      const Tensor p = o.query(x).probs;
      for (int k = 0; k < 4; ++k) acc[k] += p[k] / 1000.0;
    }
    means.push_back(acc);
  }
  for (int k = 0; k < 4; ++k) {
    double mu = 0, var = 0;
    for (const auto& mvec : means) mu += mvec[k] / means.size();
    for (const auto& mvec : means) var += (mvec[k] - mu) * (mvec[k] - mu) / means.size();
    EXPECT_LE(std::sqrt(var), 0.01);
  }
}

TEST(Oracle, UniGRedrawsEachCall) {
  const ClassifierModel m = model8();
  const Tensor x = images(8, 5);
  UniGOracle a(m, UniGConfig{}, 11), b(m, UniGConfig{}, 11);
  const Tensor a1 = a.query(x).probs;
  EXPECT_NE(a.query(x).probs, a1);
  EXPECT_EQ(b.query(x).probs, a1);
  EXPECT_EQ(a.last_state().A.shape(), (Shape{8, m.feature_dim()}));
  for (double v : a.last_state().A.values()) EXPECT_LE(std::abs(v - 1.0), 0.5);
}

TEST(Oracle, UniGZeroDeltaIsVanilla) {
  const ClassifierModel m = model8();
  const Tensor x = images(16, 6);
  UniGConfig cfg;
  cfg.delta = 0.0;
  UniGOracle o(m, cfg, 1);
  EXPECT_LT(max_abs_diff(o.query(x).probs, m.forward_probs(x)), 1e-12);
}

TEST(Oracle, CascadeAnswersEachImageAlone) {
  const ClassifierModel m = model8();
  Dataset reservoir;
  reservoir.images = images(12, 7);
  reservoir.labels.assign(12, 0);
  reservoir.classes = 4;
  UniGConfig cfg;
  cfg.cascade_k = 4;
  UniGOracle o(m, cfg, 2, &reservoir);
  const Tensor x = images(3, 8);
  const Tensor p = o.query(x).probs;
  ASSERT_EQ(p.shape(), (Shape{3, 4}));
  EXPECT_EQ(o.query_count(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Defense, LogitDiffIsZeroForVanillaAndGrowsWithDelta) {
  const ClassifierModel m = model8();
  Dataset data;
  data.images = images(64, 9);
  data.labels.assign(64, 0);
  data.classes = 4;
  EXPECT_EQ(logit_diff(m, DefenseSpec{}, data, 0), 0.0);
  DefenseSpec u;
  u.kind = DefenseKind::kUniG;
  u.unig.delta = 0.0;
  EXPECT_NEAR(logit_diff(m, u, data, 0), 0.0, 1e-9);
  u.unig.delta = 0.1;
  const double small = logit_diff(m, u, data, 0);
  u.unig.delta = 0.5;
  EXPECT_GT(logit_diff(m, u, data, 0), small);
}

TEST(Defense, NamesAndParams) {
  EXPECT_EQ(parse_defense_kind("unig"), DefenseKind::kUniG);
  EXPECT_EQ(to_string(DefenseKind::kRnd), "rnd");
  EXPECT_THROW(parse_defense_kind("pni"), ConfigError);
  DefenseSpec s;
  s.kind = DefenseKind::kUniG;
  s.unig.alpha = 0.1;
  EXPECT_EQ(s.params_string(), "delta=0.5;p=1;alpha=0.1");
  s.kind = DefenseKind::kVanilla;
  EXPECT_EQ(s.params_string(), "");
}

TEST(Defense, MakeOracleDispatches) {
  const ClassifierModel m = model8();
  DefenseSpec s;
  s.kind = DefenseKind::kUniG;
  auto o = make_oracle(m, s, 0, nullptr, 10);
  EXPECT_NE(dynamic_cast<UniGOracle*>(o.get()), nullptr);
  EXPECT_EQ(o->budget(), 10u);
  s.kind = DefenseKind::kRnd;
  EXPECT_NE(dynamic_cast<RndOracle*>(make_oracle(m, s, 0).get()), nullptr);
}
