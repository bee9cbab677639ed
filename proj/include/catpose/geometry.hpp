#pragma once

// Core 3D types, similarity-transform fitting and oriented-box overlap.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "catpose/error.hpp"

namespace catpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
/// N x 3 point set, one point per row.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Rotation by `angle` radians about `axis` (normalized internally).
inline Mat3 axis_rotation(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Similarity transform p -> scale * rotation * p + translation.
struct Pose9D {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  static Pose9D identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }

  Pose9D inverse() const {
    Pose9D inv;
    inv.rotation = rotation.transpose();
    inv.scale = 1.0 / scale;
    inv.translation = -(inv.scale * (inv.rotation * translation));
    return inv;
  }

  /// this ∘ other: applies `other` first.
  Pose9D compose(const Pose9D& other) const {
    Pose9D out;
    out.rotation = rotation * other.rotation;
    out.scale = scale * other.scale;
    out.translation = apply(other.translation);
    return out;
  }

  bool is_valid(double tol = 1e-6) const {
    if (!(scale > 0.0) || !std::isfinite(scale)) return false;
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
  }
};

inline PointSet apply_pose(const Pose9D& pose, const PointSet& points) {
  PointSet out(points.rows(), 3);
  const Mat3 sr = pose.scale * pose.rotation;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = (sr * points.row(i).transpose() + pose.translation).transpose();
  }
  return out;
}

/// Axis symmetry of a reference model, expressed in its canonical frame.
struct SymmetryDescriptor {
  enum class Kind { None, Axis };
  Kind kind = Kind::None;
  Vec3 axis = Vec3::UnitY();
  Vec3 reference = Vec3::UnitX();

  static SymmetryDescriptor none() { return {}; }
  static SymmetryDescriptor about(const Vec3& axis, const Vec3& reference) {
    SymmetryDescriptor s;
    s.kind = Kind::Axis;
    s.axis = axis.normalized();
    s.reference = reference.normalized();
    if (std::abs(s.axis.dot(s.reference)) > 1e-9) {
      fail(ErrorCode::DegenerateInput, "symmetry reference axis must be orthogonal to the symmetry axis");
    }
    return s;
  }
  bool is_axis() const { return kind == Kind::Axis; }
};

/// Number of discrete rotations searched about a symmetry axis.
inline constexpr int kSymmetrySteps = 360;

/// Pinhole camera with a rigid world-to-camera transform. Camera frame is
/// +x right, +y down, +z forward.
struct CameraView {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Mat4 world_to_camera = Mat4::Identity();

  Mat3 rotation() const { return world_to_camera.block<3, 3>(0, 0); }
  Vec3 translation() const { return world_to_camera.block<3, 1>(0, 3); }
  Vec3 to_camera(const Vec3& world) const { return rotation() * world + translation(); }
  Vec3 center_world() const { return -(rotation().transpose() * translation()); }

  bool is_valid(double tol = 1e-6) const {
    if (!(fx > 0 && fy > 0) || width <= 0 || height <= 0) return false;
    if (world_to_camera.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) return false;
    const Mat3 r = rotation();
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
  }
};

struct Match {
  int partial_index = 0;
  int full_index = 0;
  double score = 0.0;
};

struct OrientedBox3D {
  Pose9D pose;
  Vec3 extents = Vec3::Ones();

  double volume() const { return extents.prod() * std::pow(pose.scale, 3); }

  /// Box corners in the posed frame.
  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> out;
    for (int k = 0; k < 8; ++k) {
      const Vec3 sign((k & 1) ? 0.5 : -0.5, (k & 2) ? 0.5 : -0.5, (k & 4) ? 0.5 : -0.5);
      out[k] = pose.apply(sign.cwiseProduct(extents));
    }
    return out;
  }

  bool contains(const Vec3& p, double rel_tol = 1e-12) const {
    const Vec3 local = pose.rotation.transpose() * (p - pose.translation) / pose.scale;
    const Vec3 half = 0.5 * extents;
    return (local.cwiseAbs().array() <= half.array() * (1.0 + rel_tol)).all();
  }
};

// ---------------------------------------------------------------------------
// Umeyama

namespace detail {

inline Vec3 centroid(const PointSet& p) { return p.colwise().mean().transpose(); }

}  // namespace detail

/// Least-squares similarity transform taking `src` onto `dst`.
inline Pose9D umeyama(const PointSet& src, const PointSet& dst) {
  const Eigen::Index n = src.rows();
  if (n != dst.rows()) fail(ErrorCode::DimensionMismatch, "umeyama: point counts differ");
  if (n < 3) fail(ErrorCode::DegenerateInput, "umeyama: need at least 3 correspondences");

  const Vec3 mu_src = detail::centroid(src);
  const Vec3 mu_dst = detail::centroid(dst);
  const PointSet src_c = src.rowwise() - mu_src.transpose();
  const PointSet dst_c = dst.rowwise() - mu_dst.transpose();

  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat3 src_cov = inv_n * (src_c.transpose() * src_c);
  Eigen::JacobiSVD<Mat3> src_svd(src_cov);
  const Vec3 src_sv = src_svd.singularValues();
  if (!(src_sv(0) > 0.0) || src_sv(1) <= 1e-12 * src_sv(0)) {
    fail(ErrorCode::DegenerateInput, "umeyama: source points are collinear or coincident");
  }

  const Mat3 cov = inv_n * (dst_c.transpose() * src_c);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 sign = Vec3::Ones();
  if (u.determinant() * v.determinant() < 0.0) sign(2) = -1.0;

  Pose9D pose;
  pose.rotation = u * sign.asDiagonal() * v.transpose();
  const double src_var = inv_n * src_c.squaredNorm();
  pose.scale = svd.singularValues().dot(sign) / src_var;
  if (!(pose.scale > 0.0) || !std::isfinite(pose.scale)) {
    fail(ErrorCode::DegenerateInput, "umeyama: non-positive scale (destination collapsed)");
  }
  pose.translation = mu_dst - pose.scale * (pose.rotation * mu_src);
  return pose;
}

inline double alignment_residual(const Pose9D& pose, const PointSet& src, const PointSet& dst) {
  return (apply_pose(pose, src) - dst).squaredNorm();
}

// ---------------------------------------------------------------------------
// RANSAC

struct RansacParams {
  int iterations = 2048;
  double inlier_threshold = 0.05;
  int min_inliers = 5;
  std::uint64_t seed = 0;
  /// Inlier-set refits after the sampling phase.
  int refinement_rounds = 3;
};

struct RansacResult {
  Pose9D pose;
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
};

namespace detail {

inline int mark_inliers(const Pose9D& pose, const PointSet& src, const PointSet& dst, double threshold,
                        std::vector<std::uint8_t>& mask) {
  const double thr2 = threshold * threshold;
  const Mat3 sr = pose.scale * pose.rotation;
  int count = 0;
  mask.assign(static_cast<std::size_t>(src.rows()), 0);
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const Vec3 r = sr * src.row(i).transpose() + pose.translation - dst.row(i).transpose();
    if (r.squaredNorm() < thr2) {
      mask[static_cast<std::size_t>(i)] = 1;
      ++count;
    }
  }
  return count;
}

inline PointSet gather_rows(const PointSet& p, const std::vector<std::uint8_t>& mask) {
  const auto count = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  PointSet out(count, 3);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.row(r++) = p.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

}  // namespace detail

/// Robust similarity fit: minimal 3-point Umeyama hypotheses scored by inlier
/// count (ties keep the earliest iteration), then refit on the consensus set.
inline RansacResult ransac_similarity(const PointSet& src, const PointSet& dst, const RansacParams& params) {
  const Eigen::Index n = src.rows();
  if (n != dst.rows()) fail(ErrorCode::DimensionMismatch, "ransac: point counts differ");
  if (n < 3) fail(ErrorCode::DegenerateInput, "ransac: need at least 3 correspondences");

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  RansacResult best;
  best.inlier_count = -1;
  std::vector<std::uint8_t> mask;
  PointSet s3(3, 3), d3(3, 3);
  for (int it = 0; it < params.iterations; ++it) {
    Eigen::Index idx[3];
    idx[0] = pick(rng);
    do { idx[1] = pick(rng); } while (idx[1] == idx[0]);
    do { idx[2] = pick(rng); } while (idx[2] == idx[0] || idx[2] == idx[1]);
    for (int k = 0; k < 3; ++k) {
      s3.row(k) = src.row(idx[k]);
      d3.row(k) = dst.row(idx[k]);
    }
    Pose9D hypothesis;
    try {
      hypothesis = umeyama(s3, d3);
    } catch (const Error&) {
      continue;
    }
    const int count = detail::mark_inliers(hypothesis, src, dst, params.inlier_threshold, mask);
    if (count > best.inlier_count) {
      best.inlier_count = count;
      best.pose = hypothesis;
      best.inliers = mask;
    }
  }
  if (best.inlier_count < 0) {
    // Every minimal sample was degenerate; let the full set decide.
    best.pose = umeyama(src, dst);
    best.inlier_count = detail::mark_inliers(best.pose, src, dst, params.inlier_threshold, best.inliers);
  }

  for (int round = 0; round < params.refinement_rounds && best.inlier_count >= 3; ++round) {
    Pose9D refit;
    try {
      refit = umeyama(detail::gather_rows(src, best.inliers), detail::gather_rows(dst, best.inliers));
    } catch (const Error&) {
      break;
    }
    const int count = detail::mark_inliers(refit, src, dst, params.inlier_threshold, mask);
    if (count < best.inlier_count) break;
    const bool same = (mask == best.inliers);
    best.pose = refit;
    best.inliers = mask;
    best.inlier_count = count;
    if (same) break;
  }

  if (best.inlier_count < params.min_inliers) {
    fail(ErrorCode::NoConsensus, "ransac: best consensus " + std::to_string(best.inlier_count) + " < " +
                                     std::to_string(params.min_inliers));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Rotation error

/// Angle of a rotation matrix; atan2 keeps full precision near zero.
inline double rotation_angle(const Mat3& r) {
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * v.norm(), 0.5 * (r.trace() - 1.0));
}

inline double geodesic_deg(const Mat3& r1, const Mat3& r2) { return rad2deg(rotation_angle(r1.transpose() * r2)); }

/// Geodesic rotation error in degrees; for axis-symmetric objects the minimum
/// over kSymmetrySteps rotations of `r2` about the object axis.
inline double rotation_error_deg(const Mat3& r1, const Mat3& r2,
                                 const SymmetryDescriptor& sym = SymmetryDescriptor::none()) {
  if (!sym.is_axis()) return geodesic_deg(r1, r2);
  double best = 180.0;
  const Mat3 rel = r1.transpose() * r2;
  for (int k = 0; k < kSymmetrySteps; ++k) {
    const Mat3 spin = axis_rotation(sym.axis, 2.0 * std::numbers::pi * k / kSymmetrySteps);
    best = std::min(best, rad2deg(rotation_angle(rel * spin)));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Oriented-box IoU

struct IouParams {
  int samples = 100000;
  std::uint64_t seed = 0;
};

namespace detail {

/// Fraction of uniform samples drawn in `a` that land inside `b`.
inline double fraction_inside(const OrientedBox3D& a, const OrientedBox3D& b, const IouParams& params) {
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  const Mat3 to_b = b.pose.rotation.transpose() / b.pose.scale;
  const Mat3 from_a = a.pose.scale * a.pose.rotation;
  const Vec3 offset = to_b * (a.pose.translation - b.pose.translation);
  const Mat3 chain = to_b * from_a;
  const Eigen::Array3d half_b = 0.5 * b.extents.array() * (1.0 + 1e-12);
  int inside = 0;
  for (int k = 0; k < params.samples; ++k) {
    const Vec3 local_a(unit(rng) * a.extents(0), unit(rng) * a.extents(1), unit(rng) * a.extents(2));
    const Vec3 local_b = chain * local_a + offset;
    if ((local_b.cwiseAbs().array() <= half_b).all()) ++inside;
  }
  return static_cast<double>(inside) / params.samples;
}

}  // namespace detail

/// Monte-Carlo 3D IoU of two oriented boxes; deterministic for a given seed.
inline double oriented_box_iou(const OrientedBox3D& a, const OrientedBox3D& b, const IouParams& params = {}) {
  if (params.samples < 1) fail(ErrorCode::DegenerateInput, "iou: samples must be >= 1");
  const double va = a.volume();
  const double vb = b.volume();
  const double inter = detail::fraction_inside(a, b, params) * va;
  if (inter <= 0.0) return 0.0;
  return std::clamp(inter / (va + vb - inter), 0.0, 1.0);
}

/// Uniformly distributed rotation (Shoemake).
template <typename Rng>
Mat3 random_rotation(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t1 = 2.0 * std::numbers::pi * u2, t2 = 2.0 * std::numbers::pi * u3;
  Eigen::Quaterniond q(b * std::cos(t2), a * std::sin(t1), a * std::cos(t1), b * std::sin(t2));
  return q.normalized().toRotationMatrix();
}

}  // namespace catpose
