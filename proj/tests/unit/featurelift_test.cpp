#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "catpose/featurelift.hpp"
#include "oracles.hpp"

using namespace catpose;

namespace {

CameraView simple_camera(int w = 100, int h = 100, double f = 100.0) {
  CameraView v;
  v.fx = v.fy = f;
  v.cx = 0.5 * w;
  v.cy = 0.5 * h;
  v.width = w;
  v.height = h;
  return v;
}

ReferenceModel sphere_model(int n, double radius = 0.5) {
  ReferenceModel m;
  m.points.resize(n, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    m.points.row(i) << radius * r * std::cos(golden * i), radius * y, radius * r * std::sin(golden * i);
  }
  m.recompute_extents();
  return m;
}

FeatureMap constant_map(int w, int h, std::vector<float> f) {
  FeatureMap m(w, h, static_cast<int>(f.size()));
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) std::copy(f.begin(), f.end(), m.at(u, v).begin());
  return m;
}

}  // namespace

TEST(CameraSampling, FortyViewsLookAtCentroid) {
  const ReferenceModel m = sphere_model(500);
  ViewSamplingParams params;
  const auto views = sample_camera_poses(m, params);
  ASSERT_EQ(views.size(), 40u);
  const Vec3 centroid = m.points.colwise().mean().transpose();
  for (const auto& v : views) {
    EXPECT_TRUE(v.is_valid());
    const auto p = project_point(v, centroid);
    EXPECT_LE(std::hypot(p.u - v.cx, p.v - v.cy), 1.0);
    EXPECT_NEAR((v.center_world() - centroid).norm(), params.distance_factor * m.diameter(), 1e-9);
  }
}

TEST(CameraSampling, SingleViewAtStatedDistance) {
  const ReferenceModel m = sphere_model(100);
  ViewSamplingParams params;
  params.n_views = 1;
  params.distance_factor = 3.0;
  const auto views = sample_camera_poses(m, params);
  ASSERT_EQ(views.size(), 1u);
  EXPECT_NEAR((views[0].center_world() - m.points.colwise().mean().transpose()).norm(), 3.0 * m.diameter(), 1e-9);
}

TEST(CameraSampling, ConvexSphereFullyCovered) {
  const ReferenceModel m = sphere_model(800);
  const auto views = sample_camera_poses(m, {});
  std::vector<int> seen(static_cast<std::size_t>(m.points.rows()), 0);
  const double tol = 0.01 * m.diameter();
  for (const auto& v : views) {
    const auto vis = oracle::brute_force_visibility(m.points, v, 2.0, tol);
    for (std::size_t i = 0; i < vis.size(); ++i) seen[i] |= vis[i];
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

TEST(CameraSampling, SeedOnlyChangesRoll) {
  const ReferenceModel m = sphere_model(100);
  ViewSamplingParams a, b;
  b.seed = 77;
  const auto va = sample_camera_poses(m, a), vb = sample_camera_poses(m, b);
  for (std::size_t k = 0; k < va.size(); ++k) {
    EXPECT_LT((va[k].center_world() - vb[k].center_world()).norm(), 1e-12);
    EXPECT_LT((va[k].rotation().row(2) - vb[k].rotation().row(2)).norm(), 1e-12);
  }
}

TEST(Projection, OpticalAxisMapsToPrincipalPoint) {
  const CameraView v = simple_camera();
  const auto p = project_point(v, Vec3(0, 0, 3));
  EXPECT_DOUBLE_EQ(p.u, v.cx);
  EXPECT_DOUBLE_EQ(p.v, v.cy);
  EXPECT_DOUBLE_EQ(p.depth, 3.0);
}

TEST(Projection, PinholeFormula) {
  CameraView v = simple_camera();
  v.cx = 50;
  const auto p = project_camera_point(v, Vec3(1, 0, 1));
  EXPECT_DOUBLE_EQ(p.u, 100.0 * 1.0 / 1.0 + 50.0);
}

TEST(Projection, BehindCamera) {
  try {
    project_camera_point(simple_camera(), Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
}

TEST(ProjectionProperty, BackprojectRoundTrip) {
  const CameraView v = simple_camera(64, 48, 80.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uu(0, 63.9), vv(0, 47.9), zz(0.1, 10.0);
  for (int k = 0; k < 1000; ++k) {
    const double u = uu(rng), w = vv(rng), z = zz(rng);
    const auto p = project_camera_point(v, backproject_pixel(v, u, w, z));
    EXPECT_NEAR(p.u, u, 1e-6);
    EXPECT_NEAR(p.v, w, 1e-6);
    EXPECT_NEAR(p.depth, z, 1e-6);
  }
}

TEST(Visibility, SingleInFrustumPointVisible) {
  PointSet p(1, 3);
  p << 0, 0, 2;
  EXPECT_EQ(visibility_mask(p, simple_camera())[0], 1);
}

TEST(Visibility, NearerPointOccludesFarther) {
  PointSet p(2, 3);
  p << 0, 0, 1.0, 0, 0, 2.0;
  const auto vis = visibility_mask(p, simple_camera());
  const auto expect = oracle::brute_force_visibility(p, simple_camera(), 2.0, 0.01 * bbox_diagonal(p));
  EXPECT_EQ(vis, expect);
  EXPECT_EQ(vis[0], 1);
  EXPECT_EQ(vis[1], 0);
}

TEST(Visibility, OutOfImageHidden) {
  PointSet p(2, 3);
  p << 10, 0, 1, 0, 0, -1;
  const auto vis = visibility_mask(p, simple_camera());
  EXPECT_EQ(vis[0], 0);
  EXPECT_EQ(vis[1], 0);
}

TEST(Visibility, RadiusBelowHalfPixelRejected) {
  PointSet p(1, 3);
  p << 0, 0, 1;
  EXPECT_THROW(visibility_mask(p, simple_camera(), VisibilityParams{0.4, -1.0}), Error);
}

TEST(VisibilityProperty, AgreesWithPairwiseOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::size_t agree = 0, total = 0;
  for (int trial = 0; trial < 10; ++trial) {
    PointSet p(600, 3);
    for (int i = 0; i < p.rows(); ++i) p.row(i) << u(rng), u(rng), u(rng);
    ReferenceModel m;
    m.points = p;
    m.recompute_extents();
    ViewSamplingParams vp;
    vp.n_views = 3;
    vp.seed = static_cast<std::uint64_t>(trial);
    for (const auto& view : sample_camera_poses(m, vp)) {
      const auto a = visibility_mask(p, view);
      const auto b = oracle::brute_force_visibility(p, view, 2.0, 0.01 * bbox_diagonal(p));
      for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
      total += a.size();
    }
  }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.995);
}

TEST(Bilinear, IntegerCoordinateIsExact) {
  FeatureMap m(4, 3, 2);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 4; ++u) {
      m.at(u, v)[0] = static_cast<float>(u + 10 * v);
      m.at(u, v)[1] = static_cast<float>(-u);
    }
  const auto f = sample_feature_bilinear(m, 2.0, 1.0);
  EXPECT_EQ(f[0], 12.0f);
  EXPECT_EQ(f[1], -2.0f);
}

TEST(Bilinear, MidpointAveragesNeighbours) {
  FeatureMap m(2, 1, 1);
  m.at(0, 0)[0] = 1.0f;
  m.at(1, 0)[0] = 3.0f;
  EXPECT_FLOAT_EQ(sample_feature_bilinear(m, 0.5, 0.0)[0], 2.0f);
}

TEST(Bilinear, HandEvaluatedWeights) {
  FeatureMap m(2, 2, 1);
  m.at(0, 0)[0] = 1;
  m.at(1, 0)[0] = 2;
  m.at(0, 1)[0] = 3;
  m.at(1, 1)[0] = 4;
  // (0.25, 0.75): 0.75*0.25*1 + 0.25*0.25*2 + 0.75*0.75*3 + 0.25*0.75*4
  const double expect = 0.1875 + 0.125 + 1.6875 + 0.75;
  EXPECT_NEAR(sample_feature_bilinear(m, 0.25, 0.75)[0], expect, 1e-6);
}

TEST(Bilinear, OutOfBounds) {
  FeatureMap m(2, 2, 1);
  try {
    sample_feature_bilinear(m, 2.0, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
  }
  EXPECT_THROW(sample_feature_bilinear(m, -0.1, 0.0), Error);
}

TEST(Lift, AveragesOverVisibleViews) {
  ReferenceModel m;
  m.points.resize(1, 3);
  m.points << 0, 0, 0;
  m.recompute_extents();
  CameraView a = simple_camera(), b = simple_camera();
  a.world_to_camera(2, 3) = 2.0;
  b.world_to_camera(2, 3) = 3.0;
  const FeatureCloud c = lift_features(m, {{a, constant_map(100, 100, {1, 0})}, {b, constant_map(100, 100, {0, 1})}});
  ASSERT_EQ(c.size(), 1);
  EXPECT_FLOAT_EQ(c.features(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(c.features(0, 1), 0.5f);
  EXPECT_EQ(c.view_counts[0], 2u);
}

TEST(Lift, UnseenPointDropped) {
  ReferenceModel m;
  m.points.resize(2, 3);
  m.points << 0, 0, 0, 0, 0, -10;
  m.recompute_extents();
  CameraView a = simple_camera();
  a.world_to_camera(2, 3) = 2.0;
  const FeatureCloud c = lift_features(m, {{a, constant_map(100, 100, {1})}});
  ASSERT_EQ(c.size(), 1);
  EXPECT_EQ(c.points.row(0), Eigen::RowVector3d(0, 0, 0));
}

TEST(Lift, DimensionMismatch) {
  ReferenceModel m = sphere_model(10);
  CameraView a = simple_camera();
  a.world_to_camera(2, 3) = 2.0;
  try {
    lift_features(m, {{a, constant_map(100, 100, {1})}, {a, constant_map(100, 100, {1, 2})}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(LiftProperty, MatchesBruteForceMeanAndIgnoresViewOrder) {
  const ReferenceModel m = sphere_model(300);
  ViewSamplingParams vp;
  vp.n_views = 6;
  vp.width = vp.height = 64;
  const auto cams = sample_camera_poses(m, vp);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  std::vector<LiftView> views;
  for (const auto& c : cams) {
    FeatureMap f(64, 64, 3);
    for (auto& x : f.data) x = g(rng);
    views.push_back({c, f});
  }
  const FeatureCloud lifted = lift_features(m, views);

  const double tol = 0.01 * m.diameter();
  std::vector<Eigen::Vector3d> sums(static_cast<std::size_t>(m.points.rows()), Eigen::Vector3d::Zero());
  std::vector<int> counts(sums.size(), 0);
  for (const auto& v : views) {
    const auto vis = oracle::brute_force_visibility(m.points, v.camera, 2.0, tol);
    for (std::size_t i = 0; i < vis.size(); ++i) {
      if (!vis[i]) continue;
      const auto p = oracle::project(v.camera, m.points.row(static_cast<Eigen::Index>(i)).transpose());
      const int x0 = static_cast<int>(std::floor(p.u)), y0 = static_cast<int>(std::floor(p.v));
      const int x1 = std::min(x0 + 1, 63), y1 = std::min(y0 + 1, 63);
      const double ax = p.u - x0, ay = p.v - y0;
      for (int c = 0; c < 3; ++c) {
        sums[i](c) += (1 - ax) * (1 - ay) * v.features.at(x0, y0)[c] + ax * (1 - ay) * v.features.at(x1, y0)[c] +
                      (1 - ax) * ay * v.features.at(x0, y1)[c] + ax * ay * v.features.at(x1, y1)[c];
      }
      ++counts[i];
    }
  }
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!counts[i]) continue;
    ASSERT_LT(row, lifted.size());
    EXPECT_EQ(lifted.points.row(row), m.points.row(static_cast<Eigen::Index>(i)));
    EXPECT_EQ(lifted.view_counts[static_cast<std::size_t>(row)], static_cast<std::uint32_t>(counts[i]));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(lifted.features(row, c), sums[i](c) / counts[i], 1e-5);
    ++row;
  }
  EXPECT_EQ(row, lifted.size());

  auto shuffled = views;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const FeatureCloud again = lift_features(m, shuffled);
  EXPECT_EQ(again.points, lifted.points);
  EXPECT_TRUE(again.features == lifted.features);
  EXPECT_EQ(again.view_counts, lifted.view_counts);
  EXPECT_TRUE(lifted.features.allFinite());
}

TEST(Backproject, PrincipalPointAndInversePinhole) {
  Observation obs;
  obs.camera = simple_camera(100, 100, 10.0);
  obs.depth.assign(100 * 100, 0.0f);
  obs.mask.assign(100 * 100, 0);
  obs.features = FeatureMap(100, 100, 1);
  auto set = [&](int u, int v, float z) {
    obs.depth[static_cast<std::size_t>(v) * 100 + u] = z;
    obs.mask[static_cast<std::size_t>(v) * 100 + u] = 1;
    obs.features.at(u, v)[0] = static_cast<float>(u);
  };
  set(50, 50, 2.0f);
  set(60, 50, 1.0f);
  set(50, 60, 4.0f);
  const FeatureCloud c = backproject_observation(obs, 10, 0);
  ASSERT_EQ(c.size(), 3);
  bool saw_center = false, saw_side = false;
  for (Eigen::Index r = 0; r < c.size(); ++r) {
    if (c.features(r, 0) == 50.0f && c.points(r, 2) == 2.0) {
      saw_center = true;
      EXPECT_EQ(c.points.row(r), Eigen::RowVector3d(0, 0, 2));
    }
    if (c.features(r, 0) == 60.0f) {
      saw_side = true;
      EXPECT_NEAR((c.points.row(r) - Eigen::RowVector3d(1, 0, 1)).norm(), 0.0, 1e-12);
    }
  }
  EXPECT_TRUE(saw_center);
  EXPECT_TRUE(saw_side);
}

TEST(Backproject, EmptyMask) {
  Observation obs;
  obs.camera = simple_camera(8, 8);
  obs.depth.assign(64, 1.0f);
  obs.mask.assign(64, 0);
  obs.features = FeatureMap(8, 8, 1);
  try {
    backproject_observation(obs, 10, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyObservation);
  }
}

TEST(BackprojectProperty, SubsampleIsDeterministicAndBounded) {
  Observation obs;
  obs.camera = simple_camera(32, 32, 30.0);
  obs.depth.assign(32 * 32, 1.5f);
  obs.mask.assign(32 * 32, 1);
  obs.features = FeatureMap(32, 32, 2, 0.25f);
  const FeatureCloud a = backproject_observation(obs, 50, 9), b = backproject_observation(obs, 50, 9);
  EXPECT_EQ(a.size(), 50);
  EXPECT_EQ(a.points, b.points);
}

TEST(Fps, CoversExtremesAndIsSorted) {
  PointSet p(5, 3);
  p << 0, 0, 0, 0.1, 0, 0, 10, 0, 0, 0.2, 0, 0, 5, 0, 0;
  const auto idx = farthest_point_sample(p, 3, 0);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_NE(std::find(idx.begin(), idx.end(), 2), idx.end());
}

TEST(Normalize, AlreadyNormalizedUnchanged) {
  FeatureCloud c;
  c.points.resize(2, 3);
  c.points << 1, 0, 0, -1, 0, 0;
  c.features = FeatureMatrix::Zero(2, 1);
  const auto [out, norm] = normalize_cloud(c);
  EXPECT_EQ(out.points, c.points);
  EXPECT_EQ(norm.radius, 1.0);
  EXPECT_EQ(norm.centroid, Vec3::Zero());
}

TEST(Normalize, TwoPointCloud) {
  FeatureCloud c;
  c.points.resize(2, 3);
  c.points << 0, 0, 0, 2, 0, 0;
  c.features = FeatureMatrix::Zero(2, 1);
  const auto [out, norm] = normalize_cloud(c);
  EXPECT_EQ(norm.centroid, Vec3(1, 0, 0));
  EXPECT_EQ(norm.radius, 1.0);
}

TEST(Normalize, CoincidentPointsAreZeroExtent) {
  FeatureCloud c;
  c.points = PointSet::Ones(3, 3);
  c.features = FeatureMatrix::Zero(3, 1);
  try {
    normalize_cloud(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroExtent);
  }
}

TEST(NormalizeProperty, ScaleEquivariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  FeatureCloud c;
  c.points.resize(30, 3);
  for (int i = 0; i < 30; ++i) c.points.row(i) << u(rng), u(rng), u(rng);
  c.features = FeatureMatrix::Zero(30, 1);
  FeatureCloud scaled = c;
  scaled.points *= 5.0;
  const auto [a, na] = normalize_cloud(c);
  const auto [b, nb] = normalize_cloud(scaled);
  EXPECT_LT((a.points - b.points).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(nb.radius, 5.0 * na.radius, 1e-12);
  EXPECT_LT((na.invert(a.points) - c.points).cwiseAbs().maxCoeff(), 1e-12);
}
