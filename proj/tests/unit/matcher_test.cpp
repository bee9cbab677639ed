#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "catpose/matcher.hpp"
#include "matcher_oracle.hpp"

using namespace catpose;

namespace {

MatcherConfig small_config() {
  MatcherConfig cfg;
  cfg.feature_dim = 8;
  cfg.model_dim = 16;
  cfg.num_blocks = 1;
  cfg.num_heads = 2;
  cfg.pe_freqs = 2;
  return cfg;
}

}  // namespace

TEST(Losses, FocalAtSinglePositiveHalf) {
  Matrix<double> gated(1, 1);
  gated << 0.5;
  CorrespondenceGT gt;
  gt.positives = {{0, 0}};
  const auto r = focal_assignment_loss(gated, gt, 2.0, 1e-6);
  EXPECT_NEAR(r.value, 0.25 * std::numbers::ln2, 1e-9);
  EXPECT_FALSE(r.empty_positives);
  EXPECT_TRUE(r.empty_negatives);
}

TEST(Losses, BceAtHalf) {
  Vector<double> s(1);
  s << 0.5;
  EXPECT_NEAR(inlier_bce_loss(s, {1}, 1e-6), std::numbers::ln2, 1e-9);
  EXPECT_NEAR(inlier_bce_loss(s, {0}, 1e-6), std::numbers::ln2, 1e-9);
}

TEST(Losses, ClampKeepsLossFinite) {
  Matrix<double> gated(1, 2);
  gated << 0.0, 1.0;
  CorrespondenceGT gt;
  gt.positives = {{0, 0}};
  gt.negatives = {{0, 1}};
  const auto r = focal_assignment_loss(gated, gt, 2.0, 1e-6);
  EXPECT_TRUE(std::isfinite(r.value));
  const double x = 1e-6;
  EXPECT_NEAR(r.value, 2.0 * (-std::pow(1 - x, 2) * std::log(x)), 1e-9);
}

TEST(Losses, BceLengthMismatch) {
  Vector<double> s(2);
  s << 0.5, 0.5;
  EXPECT_THROW(inlier_bce_loss(s, {1}, 1e-6), Error);
}

TEST(Gating, IdentityElementwise) {
  std::mt19937_64 rng(1);
  const auto inst = oracle::random_instance(rng, 6, 9, 8);
  const MatcherConfig cfg = small_config();
  const auto out = forward<double>(inst.partial, inst.full, init_weights<double>(cfg, 3), cfg);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 9; ++j)
      EXPECT_NEAR(out.gated_scores(i, j), out.sigma_partial(i) * out.sigma_full(j) * out.scores(i, j), 1e-15);
  EXPECT_GE(out.scores.minCoeff(), 0.0);
  EXPECT_LE(out.scores.maxCoeff(), 1.0);
}

TEST(Forward, ScoresAreRescaledCosineOfFusedFeatures) {
  std::mt19937_64 rng(2);
  const auto inst = oracle::random_instance(rng, 5, 7, 8);
  const MatcherConfig cfg = small_config();
  const auto out = forward<double>(inst.partial, inst.full, init_weights<double>(cfg, 4), cfg);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 7; ++j) {
      const auto a = out.fused_partial.row(i), b = out.fused_full.row(j);
      const double cosine = a.dot(b) / (a.norm() * b.norm());
      EXPECT_NEAR(out.scores(i, j), 0.5 * (cosine + 1.0), 1e-9);
    }
  }
}

TEST(Forward, FeatureDimMismatch) {
  std::mt19937_64 rng(3);
  const auto inst = oracle::random_instance(rng, 4, 4, 5);
  const MatcherConfig cfg = small_config();
  try {
    forward<double>(inst.partial, inst.full, init_weights<double>(cfg, 0), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Forward, NoInlierHeadMeansUnitSigma) {
  std::mt19937_64 rng(4);
  const auto inst = oracle::random_instance(rng, 4, 6, 8);
  MatcherConfig cfg = small_config();
  cfg.inlier_head = false;
  const auto w = init_weights<double>(cfg, 1);
  EXPECT_EQ(w.count("inlier.partial.weight"), 0u);
  const auto out = forward<double>(inst.partial, inst.full, w, cfg);
  EXPECT_EQ(out.gated_scores, out.scores);
  const auto loss = total_loss(out, inst.gt, cfg);
  EXPECT_EQ(loss.partial, 0.0);
  EXPECT_EQ(loss.full, 0.0);
}

TEST(Config, RejectsIndivisibleHeads) {
  MatcherConfig cfg = small_config();
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Weights, InitIsDeterministicAndMatchesLayout) {
  const MatcherConfig cfg = small_config();
  const auto a = init_weights<float>(cfg, 9), b = init_weights<float>(cfg, 9);
  EXPECT_EQ(a.size(), weight_layout(cfg).size());
  for (const auto& [name, m] : a) EXPECT_TRUE(m == b.at(name)) << name;
  EXPECT_NO_THROW(check_weights(a, cfg));
}

TEST(Gradients, MatchCentralDifferencesOnSampledEntries) {
  std::mt19937_64 rng(5);
  const auto inst = oracle::random_instance(rng, 5, 7, 8);
  const MatcherConfig cfg = small_config();
  for (const auto& c : oracle::check_tensors(inst, init_weights<double>(cfg, 11), cfg, 7)) {
    EXPECT_LT(c.relative_error, 1e-3) << c.name;
  }
}

TEST(Gradients, LossNodeAgreesWithValueLoss) {
  std::mt19937_64 rng(6);
  const auto inst = oracle::random_instance(rng, 5, 7, 8);
  const MatcherConfig cfg = small_config();
  const auto w = init_weights<double>(cfg, 2);
  const auto g = param_gradients<double>(inst.partial, inst.full, inst.gt, w, cfg);
  EXPECT_NEAR(g.loss.total, oracle::loss_value(inst, w, cfg), 1e-12);
}

TEST(MatcherProperty, PartialPermutationEquivariance) {
  std::mt19937_64 rng(7);
  const auto inst = oracle::random_instance(rng, 6, 8, 8);
  const MatcherConfig cfg = small_config();
  const auto w = init_weights<double>(cfg, 5);
  std::vector<int> perm = {3, 1, 5, 0, 2, 4};
  const auto base = forward<double>(inst.partial, inst.full, w, cfg);
  const auto permuted = forward<double>(inst.partial.subset(perm), inst.full, w, cfg);
  for (int r = 0; r < 6; ++r) {
    EXPECT_LT((permuted.gated_scores.row(r) - base.gated_scores.row(perm[static_cast<std::size_t>(r)])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MatcherProperty, RawAssignmentIsRescaledCosine) {
  std::mt19937_64 rng(8);
  const auto inst = oracle::random_instance(rng, 4, 5, 6);
  const auto out = raw_feature_assignment<double>(inst.partial, inst.full);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      const Eigen::VectorXd a = inst.partial.features.row(i).cast<double>(), b = inst.full.features.row(j).cast<double>();
      EXPECT_NEAR(out.gated_scores(i, j), 0.5 * (a.dot(b) / (a.norm() * b.norm()) + 1.0), 1e-12);
    }
}

TEST(MatcherProperty, SinglePrecisionTracksDouble) {
  std::mt19937_64 rng(9);
  const auto inst = oracle::random_instance(rng, 6, 6, 8);
  const MatcherConfig cfg = small_config();
  const auto wd = init_weights<double>(cfg, 6);
  const auto a = forward<double>(inst.partial, inst.full, wd, cfg);
  const auto b = forward<float>(inst.partial, inst.full, cast_weights<float>(wd), cfg);
  EXPECT_LT((a.gated_scores - b.gated_scores.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}
