#pragma once

// Lifting dense 2D feature maps onto 3D reference models and back-projecting
// single-view observations into partial feature clouds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "catpose/error.hpp"
#include "catpose/geometry.hpp"

namespace catpose {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense H x W x D feature image, row-major (v, then u, then channel).
struct FeatureMap {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int w, int h, int d, float fill = 0.0f)
      : width(w), height(h), dim(d), data(static_cast<std::size_t>(w) * h * d, fill) {}

  std::size_t offset(int u, int v) const { return (static_cast<std::size_t>(v) * width + u) * dim; }
  std::span<float> at(int u, int v) { return {data.data() + offset(u, v), static_cast<std::size_t>(dim)}; }
  std::span<const float> at(int u, int v) const {
    return {data.data() + offset(u, v), static_cast<std::size_t>(dim)};
  }

  bool is_valid() const {
    if (dim < 1 || width < 1 || height < 1) return false;
    if (data.size() != static_cast<std::size_t>(width) * height * dim) return false;
    return std::all_of(data.begin(), data.end(), [](float x) { return std::isfinite(x); });
  }
};

/// Category reference (or instance) model in its canonical, y-up object frame.
struct ReferenceModel {
  PointSet points;
  std::vector<Eigen::Vector3i> triangles;
  Vec3 extents = Vec3::Zero();
  std::string category;
  /// Per-point part flag (e.g. mug handle); empty when the model has no parts.
  std::vector<std::uint8_t> part_mask;
  SymmetryDescriptor symmetry;

  bool has_part_mask() const { return !part_mask.empty(); }
  /// Diagonal of the axis-aligned bounds.
  double diameter() const { return extents.norm(); }

  void recompute_extents() {
    extents = (points.colwise().maxCoeff() - points.colwise().minCoeff()).transpose();
  }
};

/// N points with D-dimensional features and the number of views that
/// contributed to each point's averaged feature.
struct FeatureCloud {
  PointSet points;
  FeatureMatrix features;
  std::vector<std::uint32_t> view_counts;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  FeatureCloud subset(const std::vector<int>& rows) const {
    FeatureCloud out;
    out.points.resize(static_cast<Eigen::Index>(rows.size()), 3);
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.view_counts.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.points.row(static_cast<Eigen::Index>(k)) = points.row(rows[k]);
      out.features.row(static_cast<Eigen::Index>(k)) = features.row(rows[k]);
      out.view_counts[k] = view_counts.empty() ? 1u : view_counts[static_cast<std::size_t>(rows[k])];
    }
    return out;
  }
};

inline double bbox_diagonal(const PointSet& points) {
  if (points.rows() == 0) return 0.0;
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).norm();
}

// ---------------------------------------------------------------------------
// Cameras

struct ViewSamplingParams {
  int n_views = 40;
  double distance_factor = 2.5;
  int width = 128;
  int height = 128;
  /// Fraction of the image width spanned by the model diameter.
  double fill = 0.7;
  std::uint64_t seed = 0;
};

/// Camera looking from `eye` at `target`, rolled by `roll` radians about the
/// optical axis.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, double roll = 0.0) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = Vec3::UnitY();
  if (std::abs(z.dot(up)) > 0.95) up = Vec3::UnitX();
  Vec3 y = -(up - up.dot(z) * z).normalized();
  Vec3 x = y.cross(z);
  const double c = std::cos(roll), s = std::sin(roll);
  const Vec3 xr = c * x + s * y;
  const Vec3 yr = -s * x + c * y;
  Mat4 w2c = Mat4::Identity();
  w2c.block<1, 3>(0, 0) = xr.transpose();
  w2c.block<1, 3>(1, 0) = yr.transpose();
  w2c.block<1, 3>(2, 0) = z.transpose();
  w2c.block<3, 1>(0, 3) = -(w2c.block<3, 3>(0, 0) * eye);
  return w2c;
}

/// Cameras on a Fibonacci sphere around the model centroid, each looking at it.
inline std::vector<CameraView> sample_camera_poses(const ReferenceModel& model, const ViewSamplingParams& params) {
  if (params.n_views < 1) fail(ErrorCode::DegenerateInput, "sample_camera_poses: n_views must be >= 1");
  if (!(params.distance_factor > 0)) fail(ErrorCode::DegenerateInput, "sample_camera_poses: distance_factor <= 0");

  const Vec3 centroid = model.points.colwise().mean().transpose();
  const double diameter = bbox_diagonal(model.points);
  const double radius = params.distance_factor * diameter;
  const double focal = params.fill * params.width * params.distance_factor;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> roll(-std::numbers::pi, std::numbers::pi);

  std::vector<CameraView> views;
  views.reserve(static_cast<std::size_t>(params.n_views));
  for (int i = 0; i < params.n_views; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / params.n_views;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * i;
    const Vec3 dir(r * std::cos(phi), y, r * std::sin(phi));
    CameraView view;
    view.width = params.width;
    view.height = params.height;
    view.fx = view.fy = focal;
    view.cx = 0.5 * params.width;
    view.cy = 0.5 * params.height;
    view.world_to_camera = look_at(centroid + radius * dir, centroid, roll(rng));
    views.push_back(view);
  }
  return views;
}

struct Projection {
  double u = 0, v = 0, depth = 0;
};

inline Projection project_camera_point(const CameraView& view, const Vec3& pc) {
  if (!(pc.z() > 0.0)) fail(ErrorCode::BehindCamera, "project_point: camera-frame z <= 0");
  return {view.fx * pc.x() / pc.z() + view.cx, view.fy * pc.y() / pc.z() + view.cy, pc.z()};
}

/// Pinhole projection of a world point.
inline Projection project_point(const CameraView& view, const Vec3& world) {
  return project_camera_point(view, view.to_camera(world));
}

inline Vec3 backproject_pixel(const CameraView& view, double u, double v, double depth) {
  return {(u - view.cx) * depth / view.fx, (v - view.cy) * depth / view.fy, depth};
}

// ---------------------------------------------------------------------------
// Visibility

struct VisibilityParams {
  double splat_radius_px = 2.0;
  /// Absolute depth tolerance; negative selects 1% of the point-set diameter.
  double depth_tolerance = -1.0;
};

inline double resolve_depth_tolerance(const PointSet& points, const VisibilityParams& params) {
  return params.depth_tolerance >= 0.0 ? params.depth_tolerance : 0.01 * bbox_diagonal(points);
}

/// Pixel holding image coordinate (u, v); pixel (px, py) is centered on the
/// integer coordinate, matching bilinear sampling and back-projection.
inline std::pair<int, int> pixel_of(double u, double v, int width, int height) {
  const int px = std::clamp(static_cast<int>(std::lround(u)), 0, width - 1);
  const int py = std::clamp(static_cast<int>(std::lround(v)), 0, height - 1);
  return {px, py};
}

/// Pixels whose centers lie within `radius` of (u, v), plus the pixel
/// holding (u, v) itself.
template <typename Fn>
void for_each_splat_pixel(double u, double v, double radius, int width, int height, Fn&& fn) {
  const auto [u0, v0] = pixel_of(u, v, width, height);
  const int lo_x = std::max(0, static_cast<int>(std::ceil(u - radius)));
  const int hi_x = std::min(width - 1, static_cast<int>(std::floor(u + radius)));
  const int lo_y = std::max(0, static_cast<int>(std::ceil(v - radius)));
  const int hi_y = std::min(height - 1, static_cast<int>(std::floor(v + radius)));
  const double r2 = radius * radius;
  bool own = false;
  for (int py = lo_y; py <= hi_y; ++py) {
    for (int px = lo_x; px <= hi_x; ++px) {
      const double du = px - u, dv = py - v;
      if (du * du + dv * dv <= r2) {
        own = own || (px == u0 && py == v0);
        fn(px, py);
      }
    }
  }
  if (!own) fn(u0, v0);
}

inline bool in_image(const CameraView& view, double u, double v) {
  return u >= 0.0 && v >= 0.0 && u < view.width && v < view.height;
}

/// Point-splat z-buffer visibility.
inline std::vector<std::uint8_t> visibility_mask(const PointSet& points, const CameraView& view,
                                                 const VisibilityParams& params = {}) {
  if (params.splat_radius_px < 0.5) fail(ErrorCode::DegenerateInput, "visibility: splat radius < 0.5 px");
  const double tol = resolve_depth_tolerance(points, params);
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<Projection> proj(n);
  std::vector<std::uint8_t> candidate(n, 0);
  std::vector<double> zbuf(static_cast<std::size_t>(view.width) * view.height,
                           std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 pc = view.to_camera(points.row(static_cast<Eigen::Index>(i)).transpose());
    if (!(pc.z() > 0.0)) continue;
    proj[i] = project_camera_point(view, pc);
    if (!in_image(view, proj[i].u, proj[i].v)) continue;
    candidate[i] = 1;
    for_each_splat_pixel(proj[i].u, proj[i].v, params.splat_radius_px, view.width, view.height,
                         [&](int px, int py) {
                           double& z = zbuf[static_cast<std::size_t>(py) * view.width + px];
                           z = std::min(z, proj[i].depth);
                         });
  }
  std::vector<std::uint8_t> visible(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!candidate[i]) continue;
    const auto [px, py] = pixel_of(proj[i].u, proj[i].v, view.width, view.height);
    visible[i] = proj[i].depth <= zbuf[static_cast<std::size_t>(py) * view.width + px] + tol ? 1 : 0;
  }
  return visible;
}

// ---------------------------------------------------------------------------
// Feature sampling and lifting

/// Bilinear interpolation with feature pixel (x, y) located at integer (u, v).
inline std::vector<float> sample_feature_bilinear(const FeatureMap& map, double u, double v) {
  if (!(u >= 0.0 && v >= 0.0 && u < map.width && v < map.height)) {
    fail(ErrorCode::OutOfBounds, "sample_feature_bilinear: (" + std::to_string(u) + ", " + std::to_string(v) + ")");
  }
  const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, map.width - 1), y1 = std::min(y0 + 1, map.height - 1);
  const double ax = u - x0, ay = v - y0;
  const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
  std::vector<float> out(static_cast<std::size_t>(map.dim));
  const auto f00 = map.at(x0, y0), f10 = map.at(x1, y0), f01 = map.at(x0, y1), f11 = map.at(x1, y1);
  for (int c = 0; c < map.dim; ++c) {
    out[static_cast<std::size_t>(c)] =
        static_cast<float>(w00 * f00[c] + w10 * f10[c] + w01 * f01[c] + w11 * f11[c]);
  }
  return out;
}

struct LiftView {
  CameraView camera;
  FeatureMap features;
};

namespace detail {

inline bool view_key_less(const CameraView& a, const CameraView& b) {
  const std::array<double, 6> ka{a.fx, a.fy, a.cx, a.cy, double(a.width), double(a.height)};
  const std::array<double, 6> kb{b.fx, b.fy, b.cx, b.cy, double(b.width), double(b.height)};
  for (int i = 0; i < 16; ++i) {
    const double x = a.world_to_camera(i / 4, i % 4), y = b.world_to_camera(i / 4, i % 4);
    if (x != y) return x < y;
  }
  return ka < kb;
}

}  // namespace detail

/// Average the features each model point receives from the views in which it
/// is visible. Points seen by no view are dropped. Contributions are summed in
/// a canonical view order, so the result does not depend on input order.
inline FeatureCloud lift_features(const ReferenceModel& model, const std::vector<LiftView>& views,
                                  const VisibilityParams& vis = {}) {
  if (views.empty()) fail(ErrorCode::DegenerateInput, "lift_features: no views");
  const int dim = views.front().features.dim;
  for (const auto& v : views) {
    if (v.features.dim != dim) fail(ErrorCode::DimensionMismatch, "lift_features: feature dims differ across views");
  }
  std::vector<std::size_t> order(views.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::view_key_less(views[a].camera, views[b].camera);
  });

  const auto n = static_cast<std::size_t>(model.points.rows());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dim);
  std::vector<std::uint32_t> counts(n, 0);
  for (std::size_t idx : order) {
    const auto& view = views[idx];
    const auto visible = visibility_mask(model.points, view.camera, vis);
    for (std::size_t i = 0; i < n; ++i) {
      if (!visible[i]) continue;
      const auto p = project_point(view.camera, model.points.row(static_cast<Eigen::Index>(i)).transpose());
      if (!(p.u < view.features.width && p.v < view.features.height)) continue;
      const auto f = sample_feature_bilinear(view.features, p.u, p.v);
      for (int c = 0; c < dim; ++c) sums(static_cast<Eigen::Index>(i), c) += f[static_cast<std::size_t>(c)];
      ++counts[i];
    }
  }

  std::vector<int> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] > 0) kept.push_back(static_cast<int>(i));
  }
  FeatureCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(kept.size()), 3);
  cloud.features.resize(static_cast<Eigen::Index>(kept.size()), dim);
  cloud.view_counts.resize(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    cloud.points.row(r) = model.points.row(kept[k]);
    cloud.features.row(r) = (sums.row(kept[k]) / counts[static_cast<std::size_t>(kept[k])]).cast<float>();
    cloud.view_counts[k] = counts[static_cast<std::size_t>(kept[k])];
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Subsampling and normalization

/// Greedy farthest-point sampling; the start index is drawn from `seed`,
/// distance ties resolve to the lowest index.
inline std::vector<int> farthest_point_sample(const PointSet& points, int count, std::uint64_t seed) {
  const auto n = static_cast<int>(points.rows());
  std::vector<int> picked;
  if (n == 0 || count <= 0) return picked;
  if (count >= n) {
    picked.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) picked[static_cast<std::size_t>(i)] = i;
    return picked;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> start(0, n - 1);
  std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int current = start(rng);
  picked.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    picked.push_back(current);
    const Eigen::RowVector3d c = points.row(current);
    int next = 0;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      double& d = dist[static_cast<std::size_t>(i)];
      d = std::min(d, (points.row(i) - c).squaredNorm());
      if (d > far) {
        far = d;
        next = i;
      }
    }
    current = next;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

struct Observation {
  CameraView camera;
  /// Depth in meters, row-major H x W; non-positive or non-finite means invalid.
  std::vector<float> depth;
  std::vector<std::uint8_t> mask;
  FeatureMap features;
};

/// Back-project masked pixels with valid depth into a camera-frame feature
/// cloud, then farthest-point subsample to at most `max_points`.
inline FeatureCloud backproject_observation(const Observation& obs, int max_points, std::uint64_t seed) {
  const auto& cam = obs.camera;
  const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
  if (obs.depth.size() != pixels || obs.mask.size() != pixels || obs.features.width != cam.width ||
      obs.features.height != cam.height) {
    fail(ErrorCode::DimensionMismatch, "backproject: depth/mask/feature shapes disagree with the camera");
  }
  if (max_points < 3) fail(ErrorCode::DegenerateInput, "backproject: max_points must be >= 3");

  std::vector<std::pair<int, int>> pixels_used;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const std::size_t k = static_cast<std::size_t>(v) * cam.width + u;
      const float z = obs.depth[k];
      if (obs.mask[k] && std::isfinite(z) && z > 0.0f) pixels_used.emplace_back(u, v);
    }
  }
  if (pixels_used.size() < 3) fail(ErrorCode::EmptyObservation, "fewer than 3 valid masked pixels");

  PointSet all(static_cast<Eigen::Index>(pixels_used.size()), 3);
  for (std::size_t k = 0; k < pixels_used.size(); ++k) {
    const auto [u, v] = pixels_used[k];
    const double z = obs.depth[static_cast<std::size_t>(v) * cam.width + u];
    all.row(static_cast<Eigen::Index>(k)) = backproject_pixel(cam, u, v, z).transpose();
  }
  const auto keep = farthest_point_sample(all, max_points, seed);

  FeatureCloud cloud;
  cloud.points.resize(static_cast<Eigen::Index>(keep.size()), 3);
  cloud.features.resize(static_cast<Eigen::Index>(keep.size()), obs.features.dim);
  cloud.view_counts.assign(keep.size(), 1u);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    cloud.points.row(r) = all.row(keep[k]);
    const auto [u, v] = pixels_used[static_cast<std::size_t>(keep[k])];
    const auto f = obs.features.at(u, v);
    for (int c = 0; c < obs.features.dim; ++c) cloud.features(r, c) = f[static_cast<std::size_t>(c)];
  }
  return cloud;
}

struct Normalization {
  Vec3 centroid = Vec3::Zero();
  double radius = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - centroid) / radius; }
  Vec3 invert(const Vec3& p) const { return p * radius + centroid; }
  PointSet invert(const PointSet& p) const {
    PointSet out = p * radius;
    out.rowwise() += centroid.transpose();
    return out;
  }
};

/// Center on the centroid and divide by the largest centroid distance.
inline std::pair<FeatureCloud, Normalization> normalize_cloud(const FeatureCloud& cloud) {
  if (cloud.size() == 0) fail(ErrorCode::DegenerateInput, "normalize_cloud: empty cloud");
  Normalization norm;
  norm.centroid = cloud.points.colwise().mean().transpose();
  const PointSet centered = cloud.points.rowwise() - norm.centroid.transpose();
  norm.radius = centered.rowwise().norm().maxCoeff();
  if (!(norm.radius > 1e-12)) fail(ErrorCode::ZeroExtent, "normalize_cloud: all points coincide");
  FeatureCloud out = cloud;
  out.points = centered / norm.radius;
  return {std::move(out), norm};
}

}  // namespace catpose
