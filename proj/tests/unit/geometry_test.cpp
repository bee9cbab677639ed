#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "catpose/geometry.hpp"

using namespace catpose;

namespace {

PointSet random_points(std::mt19937_64& rng, int n, double spread = 1.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  PointSet p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) << u(rng), u(rng), u(rng);
  return p;
}

Pose9D random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> s(0.2, 5.0);
  Pose9D pose;
  pose.rotation = random_rotation(rng);
  pose.translation = Vec3(u(rng), u(rng), u(rng));
  pose.scale = s(rng);
  return pose;
}

double sum_sq_residual(const Pose9D& pose, const PointSet& src, const PointSet& dst) {
  return (apply_pose(pose, src) - dst).squaredNorm();
}

}  // namespace

TEST(Umeyama, IdentityOnFourPoints) {
  PointSet p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const Pose9D pose = umeyama(p, p);
  EXPECT_LT((pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(pose.translation.norm(), 1e-9);
  EXPECT_NEAR(pose.scale, 1.0, 1e-9);
}

TEST(Umeyama, RecoversPlantedTransform) {
  PointSet src(4, 3);
  src << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  Pose9D planted;
  planted.scale = 2.0;
  planted.rotation = axis_rotation(Vec3::UnitZ(), deg2rad(90.0));
  planted.translation = Vec3(1, 2, 3);
  const Pose9D got = umeyama(src, apply_pose(planted, src));
  EXPECT_LT((got.rotation - planted.rotation).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((got.translation - planted.translation).norm(), 1e-6);
  EXPECT_NEAR(got.scale, 2.0, 1e-6);
}

TEST(Umeyama, CollinearInputIsDegenerate) {
  PointSet p(5, 3);
  for (int i = 0; i < 5; ++i) p.row(i) << i, 2.0 * i, -i;
  try {
    umeyama(p, p);
    FAIL() << "expected DegenerateInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
  }
}

TEST(Umeyama, TooFewPointsIsDegenerate) {
  PointSet p(2, 3);
  p << 0, 0, 0, 1, 0, 0;
  EXPECT_THROW(umeyama(p, p), Error);
}

TEST(Umeyama, ReflectionIsCorrectedToProperRotation) {
  std::mt19937_64 rng(3);
  const PointSet src = random_points(rng, 20);
  PointSet dst = src;
  dst.col(0) *= -1.0;  // mirror: best proper rotation must still have det +1
  const Pose9D pose = umeyama(src, dst);
  EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-9);
  EXPECT_TRUE(pose.is_valid());
}

TEST(UmeyamaProperty, ExactOnNoiselessProblems) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const PointSet src = random_points(rng, 4 + trial % 30);
    const Pose9D planted = random_pose(rng);
    const Pose9D got = umeyama(src, apply_pose(planted, src));
    EXPECT_LT(geodesic_deg(got.rotation, planted.rotation), 1e-6);
    EXPECT_LT((got.translation - planted.translation).norm(), 1e-6);
    EXPECT_LT(std::abs(got.scale / planted.scale - 1.0), 1e-9);
  }
}

TEST(UmeyamaProperty, NoSmallPerturbationLowersTheResidual) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const PointSet src = random_points(rng, 12);
    PointSet dst = apply_pose(random_pose(rng), src);
    for (Eigen::Index k = 0; k < dst.size(); ++k) dst.data()[k] += noise(rng);
    const Pose9D best = umeyama(src, dst);
    const double base = sum_sq_residual(best, src, dst);
    for (int k = 0; k < 250; ++k) {
      Pose9D p = best;
      p.rotation = axis_rotation(Vec3(g(rng), g(rng), g(rng)), 1e-3 * g(rng)) * p.rotation;
      p.translation += 1e-3 * Vec3(g(rng), g(rng), g(rng));
      p.scale *= 1.0 + 1e-3 * g(rng);
      EXPECT_GE(sum_sq_residual(p, src, dst), base - 1e-12);
    }
  }
}

TEST(Ransac, NoiselessAllInliers) {
  std::mt19937_64 rng(5);
  const PointSet src = random_points(rng, 50);
  const Pose9D planted = random_pose(rng);
  RansacParams params;
  params.inlier_threshold = 0.01;
  const RansacResult r = ransac_similarity(src, apply_pose(planted, src), params);
  EXPECT_EQ(r.inlier_count, 50);
  EXPECT_LT(geodesic_deg(r.pose.rotation, planted.rotation), 1e-6);
  EXPECT_LT((r.pose.translation - planted.translation).norm(), 1e-6);
  EXPECT_NEAR(r.pose.scale, planted.scale, 1e-6 * planted.scale);
}

TEST(Ransac, ThirtyPercentOutliersAreRejected) {
  std::mt19937_64 rng(6);
  const int n = 100;
  const PointSet src = random_points(rng, n);
  const Pose9D planted = random_pose(rng);
  PointSet dst = apply_pose(planted, src);
  std::vector<bool> outlier(n, false);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < n; i += 10) {
    for (int k = 0; k < 3; ++k) {
      outlier[static_cast<std::size_t>(i + k)] = true;
      dst.row(i + k) << u(rng), u(rng), u(rng);
    }
  }
  RansacParams params;
  params.inlier_threshold = 0.05;
  params.seed = 99;
  const RansacResult r = ransac_similarity(src, dst, params);
  EXPECT_LT(geodesic_deg(r.pose.rotation, planted.rotation), 1e-3);
  EXPECT_LT((r.pose.translation - planted.translation).norm(), 1e-3);
  for (int i = 0; i < n; ++i) {
    if (outlier[static_cast<std::size_t>(i)]) {
      const double resid = (r.pose.apply(src.row(i).transpose()) - dst.row(i).transpose()).norm();
      if (resid > params.inlier_threshold) EXPECT_EQ(r.inliers[static_cast<std::size_t>(i)], 0);
    } else {
      EXPECT_EQ(r.inliers[static_cast<std::size_t>(i)], 1);
    }
  }
}

TEST(Ransac, TwoCorrespondencesAreDegenerate) {
  PointSet p(2, 3);
  p << 0, 0, 0, 1, 1, 1;
  try {
    ransac_similarity(p, p, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
  }
}

TEST(Ransac, PureNoiseHasNoConsensus) {
  std::mt19937_64 rng(8);
  const PointSet src = random_points(rng, 30);
  const PointSet dst = random_points(rng, 30, 10.0);
  RansacParams params;
  params.inlier_threshold = 1e-4;
  params.iterations = 200;
  try {
    ransac_similarity(src, dst, params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConsensus);
  }
}

TEST(RansacProperty, DeterministicForFixedSeed) {
  std::mt19937_64 rng(9);
  const PointSet src = random_points(rng, 60);
  PointSet dst = apply_pose(random_pose(rng), src);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 60; i += 3) dst.row(i) << u(rng), u(rng), u(rng);
  RansacParams params;
  params.seed = 1234;
  params.inlier_threshold = 0.05;
  const RansacResult a = ransac_similarity(src, dst, params);
  const RansacResult b = ransac_similarity(src, dst, params);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.pose.rotation, b.pose.rotation);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.pose.scale, b.pose.scale);
}

TEST(ApplyPose, IdentityAndScale) {
  PointSet p(1, 3);
  p << 1, 1, 1;
  EXPECT_EQ(apply_pose(Pose9D::identity(), p), p);
  Pose9D s2;
  s2.scale = 2.0;
  EXPECT_EQ(apply_pose(s2, p).row(0), Eigen::RowVector3d(2, 2, 2));
}

TEST(ApplyPose, InverseRoundTrip) {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 20; ++k) {
    const PointSet p = random_points(rng, 10);
    const Pose9D pose = random_pose(rng);
    EXPECT_LT((apply_pose(pose.inverse(), apply_pose(pose, p)) - p).cwiseAbs().maxCoeff(), 1e-9);
    const Pose9D id = pose.compose(pose.inverse());
    EXPECT_LT((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(id.translation.norm(), 1e-9);
  }
}

TEST(RotationError, ZeroForEqualRotations) {
  std::mt19937_64 rng(1);
  const Mat3 r = random_rotation(rng);
  EXPECT_NEAR(rotation_error_deg(r, r), 0.0, 1e-6);
}

TEST(RotationError, GeodesicAngle) {
  std::mt19937_64 rng(2);
  const Mat3 r = random_rotation(rng);
  EXPECT_NEAR(rotation_error_deg(r, r * axis_rotation(Vec3::UnitX(), deg2rad(10.0))), 10.0, 1e-6);
}

TEST(RotationError, SymmetricAxisSpinIsForgiven) {
  std::mt19937_64 rng(3);
  const auto sym = SymmetryDescriptor::about(Vec3::UnitY(), Vec3::UnitX());
  const Mat3 r = random_rotation(rng);
  EXPECT_LE(rotation_error_deg(r, r * axis_rotation(Vec3::UnitY(), deg2rad(37.0)), sym), 360.0 / kSymmetrySteps);
}

TEST(RotationErrorProperty, EverySpinWithinDiscretization) {
  std::mt19937_64 rng(4);
  const Vec3 axis = Vec3(1, 2, -1).normalized();
  const Vec3 ref = axis.unitOrthogonal();
  const auto sym = SymmetryDescriptor::about(axis, ref);
  const Mat3 r = random_rotation(rng);
  for (int deg = 0; deg < 360; ++deg) {
    const Mat3 spun = r * axis_rotation(axis, deg2rad(deg + 0.37));
    EXPECT_LE(rotation_error_deg(r, spun, sym), 360.0 / kSymmetrySteps);
  }
}

TEST(Iou, IdenticalBoxesGiveOne) {
  OrientedBox3D a;
  a.extents = Vec3(1, 2, 3);
  std::mt19937_64 rng(5);
  a.pose.rotation = random_rotation(rng);
  EXPECT_EQ(oriented_box_iou(a, a), 1.0);
}

TEST(Iou, HalfOffsetUnitCubes) {
  OrientedBox3D a, b;
  b.pose.translation = Vec3(0.5, 0, 0);
  EXPECT_NEAR(oriented_box_iou(a, b), 1.0 / 3.0, 0.01);
}

TEST(Iou, DisjointBoxesGiveZero) {
  OrientedBox3D a, b;
  b.pose.translation = Vec3(3, 0, 0);
  EXPECT_EQ(oriented_box_iou(a, b), 0.0);
}

TEST(IouProperty, WithinBinomialBoundOfAnalyticOverlap) {
  // Axis-aligned boxes: overlap volume is the product of 1D interval overlaps.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ext(0.5, 2.0), off(-0.6, 0.6);
  for (int trial = 0; trial < 20; ++trial) {
    OrientedBox3D a, b;
    a.extents = Vec3(ext(rng), ext(rng), ext(rng));
    b.extents = Vec3(ext(rng), ext(rng), ext(rng));
    b.pose.translation = Vec3(off(rng), off(rng), off(rng));
    double inter = 1.0;
    for (int k = 0; k < 3; ++k) {
      const double lo = std::max(-a.extents(k) / 2, b.pose.translation(k) - b.extents(k) / 2);
      const double hi = std::min(a.extents(k) / 2, b.pose.translation(k) + b.extents(k) / 2);
      inter *= std::max(0.0, hi - lo);
    }
    const double va = a.extents.prod(), vb = b.extents.prod();
    const double analytic = inter / (va + vb - inter);
    const double frac = inter / va;
    IouParams params;
    params.seed = static_cast<std::uint64_t>(trial);
    const double est = oriented_box_iou(a, b, params);
    // Propagate the binomial sd of the inside-fraction through f -> f va / (va + vb - f va).
    const double sd_frac = std::sqrt(frac * (1.0 - frac) / params.samples);
    const double deriv = va * (va + vb) / std::pow(va + vb - frac * va, 2);
    EXPECT_LE(std::abs(est - analytic), 3.0 * deriv * sd_frac + 1e-12) << "trial " << trial;
  }
}

TEST(IouProperty, DeterministicGivenSeed) {
  OrientedBox3D a, b;
  std::mt19937_64 rng(7);
  b.pose.rotation = random_rotation(rng);
  b.pose.translation = Vec3(0.2, 0.1, 0);
  EXPECT_EQ(oriented_box_iou(a, b), oriented_box_iou(a, b));
}
