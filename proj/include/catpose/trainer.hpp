#pragma once

// Synthetic training data (parametric toy categories, a location-keyed
// feature oracle, simulated single-view observations), ground-truth
// correspondence labeling with symmetry disambiguation, and the Adam loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "catpose/error.hpp"
#include "catpose/featurelift.hpp"
#include "catpose/geometry.hpp"
#include "catpose/io.hpp"
#include "catpose/matcher.hpp"
#include "catpose/parallel.hpp"

namespace catpose {

// ---------------------------------------------------------------------------
// Toy categories

enum class ToyKind { Lathe, BoxHinge, CupWithHandle };

inline std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::Lathe: return "lathe";
    case ToyKind::BoxHinge: return "box_hinge";
    case ToyKind::CupWithHandle: return "cup_with_handle";
  }
  return "lathe";
}

inline ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "lathe") return ToyKind::Lathe;
  if (s == "box_hinge") return ToyKind::BoxHinge;
  if (s == "cup_with_handle") return ToyKind::CupWithHandle;
  fail(ErrorCode::Format, "unknown toy category '" + s + "'");
}

inline SymmetryDescriptor toy_symmetry(ToyKind k) {
  return k == ToyKind::BoxHinge ? SymmetryDescriptor::none() : SymmetryDescriptor::about(Vec3::UnitY(), Vec3::UnitX());
}

namespace detail {

/// Smooth interpolation of knot values over t in [0, 1].
inline double profile_at(const std::vector<double>& knots, double t) {
  const double x = std::clamp(t, 0.0, 1.0) * static_cast<double>(knots.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(x), knots.size() - 2);
  const double f = x - static_cast<double>(i);
  const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * f);
  return knots[i] * (1.0 - w) + knots[i + 1] * w;
}

struct PointBuffer {
  std::vector<Vec3> points;
  std::vector<std::uint8_t> part;
  void add(const Vec3& p, bool is_part = false) {
    points.push_back(p);
    part.push_back(is_part ? 1 : 0);
  }
};

/// Rings of a surface of revolution about +y, radius(t) over height [y0, y1],
/// sampled at roughly uniform arc spacing; caps close the ends.
inline void add_revolution(PointBuffer& buf, const std::function<double(double)>& radius, double y0, double y1,
                           double spacing, double phase_seed, bool bottom_cap, bool top_cap) {
  const int steps = 400;
  std::vector<double> arc(steps + 1, 0.0);
  auto at = [&](int k) {
    const double t = static_cast<double>(k) / steps;
    return Eigen::Vector2d(radius(t), y0 + (y1 - y0) * t);
  };
  for (int k = 1; k <= steps; ++k) arc[static_cast<std::size_t>(k)] = arc[static_cast<std::size_t>(k - 1)] + (at(k) - at(k - 1)).norm();
  const int rings = std::max(2, static_cast<int>(std::ceil(arc.back() / spacing)) + 1);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int r = 0; r < rings; ++r) {
    const double s = arc.back() * r / (rings - 1);
    const auto it = std::lower_bound(arc.begin(), arc.end(), s);
    const int k = static_cast<int>(std::clamp<std::ptrdiff_t>(it - arc.begin(), 0, steps));
    const Eigen::Vector2d ry = at(k);
    const int around = std::max(8, static_cast<int>(std::round(2.0 * std::numbers::pi * ry(0) / spacing)));
    const double phase = phase_seed + golden * r;
    for (int a = 0; a < around; ++a) {
      const double th = phase + 2.0 * std::numbers::pi * a / around;
      buf.add(Vec3(ry(0) * std::cos(th), ry(1), ry(0) * std::sin(th)));
    }
  }
  auto cap = [&](double rad, double y) {
    const int rings_cap = std::max(1, static_cast<int>(std::floor(rad / spacing)));
    for (int r = 1; r <= rings_cap; ++r) {
      const double rr = rad * (r - 0.5) / rings_cap;
      const int around = std::max(6, static_cast<int>(std::round(2.0 * std::numbers::pi * rr / spacing)));
      for (int a = 0; a < around; ++a) {
        const double th = phase_seed + golden * r + 2.0 * std::numbers::pi * a / around;
        buf.add(Vec3(rr * std::cos(th), y, rr * std::sin(th)));
      }
    }
  };
  if (bottom_cap) cap(radius(0.0), y0);
  if (top_cap) cap(radius(1.0), y1);
}

inline void add_cuboid(PointBuffer& buf, const Mat3& rot, const Vec3& center, const Vec3& size, double spacing) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const int n1 = std::max(2, static_cast<int>(std::ceil(size(a1) / spacing)));
    const int n2 = std::max(2, static_cast<int>(std::ceil(size(a2) / spacing)));
    for (int side = -1; side <= 1; side += 2) {
      for (int i = 0; i < n1; ++i) {
        for (int j = 0; j < n2; ++j) {
          Vec3 p;
          p(axis) = 0.5 * side * size(axis);
          p(a1) = size(a1) * ((i + 0.5) / n1 - 0.5);
          p(a2) = size(a2) * ((j + 0.5) / n2 - 0.5);
          buf.add(rot * p + center);
        }
      }
    }
  }
}

/// Center on the bounding box and scale to unit bounding-box diagonal.
inline ReferenceModel finish_model(const PointBuffer& buf, ToyKind kind, bool with_parts) {
  ReferenceModel m;
  m.points.resize(static_cast<Eigen::Index>(buf.points.size()), 3);
  for (std::size_t i = 0; i < buf.points.size(); ++i) m.points.row(static_cast<Eigen::Index>(i)) = buf.points[i].transpose();
  const Eigen::RowVector3d lo = m.points.colwise().minCoeff(), hi = m.points.colwise().maxCoeff();
  const Eigen::RowVector3d mid = 0.5 * (lo + hi);
  const double diag = (hi - lo).norm();
  m.points = (m.points.rowwise() - mid) / diag;
  if (with_parts) m.part_mask = buf.part;
  m.category = to_string(kind);
  m.symmetry = toy_symmetry(kind);
  m.recompute_extents();
  return m;
}

}  // namespace detail

/// Parametric point-cloud instance of a toy category. The category fixes the
/// base shape; `seed` perturbs its proportions. Output is centered on its
/// bounds with unit bounding-box diagonal.
inline ReferenceModel generate_toy_category(ToyKind kind, std::uint64_t seed, double spacing = 0.018) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(kind) + 17));
  std::uniform_real_distribution<double> jitter(0.85, 1.15);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  detail::PointBuffer buf;
  // Generated at roughly unit size, then normalized; spacing is scaled so the
  // final density is close to `spacing` in normalized units.
  const double s = spacing * 1.3;
  switch (kind) {
    case ToyKind::Lathe: {
      std::vector<double> knots = {0.30, 0.34, 0.33, 0.24, 0.12, 0.11};
      for (auto& k : knots) k *= jitter(rng);
      const double height = 1.0 * jitter(rng);
      detail::add_revolution(
          buf, [&](double t) { return detail::profile_at(knots, t); }, -0.5 * height, 0.5 * height, s,
          unit(rng) * 6.283, true, true);
      break;
    }
    case ToyKind::CupWithHandle: {
      const double r_bottom = 0.30 * jitter(rng), r_top = 0.34 * jitter(rng);
      const double height = 0.8 * jitter(rng);
      auto body = [&](double t) { return r_bottom + (r_top - r_bottom) * t; };
      detail::add_revolution(buf, body, -0.5 * height, 0.5 * height, s, unit(rng) * 6.283, true, true);
      // Handle: half torus in the x-y plane on the +x side.
      const double arc_radius = 0.22 * height * jitter(rng);
      const double tube = 0.045 * jitter(rng);
      const double yc = 0.04 * height * (unit(rng) - 0.5);
      const double xc = 0.5 * (r_bottom + r_top) + 0.02;
      const int n_arc = static_cast<int>(std::ceil(std::numbers::pi * arc_radius * 1.4 / s)) + 1;
      const int n_tube = std::max(8, static_cast<int>(std::round(2.0 * std::numbers::pi * tube / s)));
      for (int i = 0; i < n_arc; ++i) {
        const double a = -0.5 * std::numbers::pi * 1.4 + std::numbers::pi * 1.4 * i / (n_arc - 1);
        const Vec3 c(xc + arc_radius * std::cos(a), yc + arc_radius * std::sin(a), 0.0);
        const Vec3 radial(std::cos(a), std::sin(a), 0.0);
        for (int j = 0; j < n_tube; ++j) {
          const double b = 2.0 * std::numbers::pi * (j + 0.5 * (i % 2)) / n_tube;
          const Vec3 p = c + tube * (std::cos(b) * radial + std::sin(b) * Vec3::UnitZ());
          const double t = std::clamp((p.y() + 0.5 * height) / height, 0.0, 1.0);
          if (std::hypot(p.x(), p.z()) <= body(t) + 0.25 * s) continue;
          buf.add(p, true);
        }
      }
      break;
    }
    case ToyKind::BoxHinge: {
      const double w = 0.9 * jitter(rng), d = 0.65 * jitter(rng);
      const double base_t = 0.07 * jitter(rng), lid_t = 0.04 * jitter(rng);
      const double opening = deg2rad(95.0 + 30.0 * unit(rng));
      detail::add_cuboid(buf, Mat3::Identity(), Vec3(0, 0.5 * base_t, 0), Vec3(w, base_t, d), s);
      // Lid hinged along the back edge (z = -d/2), opened by `opening`.
      const Mat3 lid_rot = axis_rotation(Vec3::UnitX(), -(std::numbers::pi - opening));
      const Vec3 hinge(0, base_t, -0.5 * d);
      const Vec3 lid_center = hinge + lid_rot * Vec3(0, 0.5 * lid_t, 0.5 * d);
      detail::add_cuboid(buf, lid_rot, lid_center, Vec3(w, lid_t, d), s);
      break;
    }
  }
  return detail::finish_model(buf, kind, kind == ToyKind::CupWithHandle);
}

// ---------------------------------------------------------------------------
// Feature oracle

inline std::uint64_t category_seed(const std::string& category) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : category) h = (h ^ c) * 1099511628211ull;
  return h;
}

struct OracleParams {
  int dim = 32;
  double noise_amp = 0.1;
};

/// Synthetic semantic features keyed on canonical location:
/// f_k(p) = sin(w_k . p + phi_k) + noise_amp * sin(w'_k . p + phi'_k), rows
/// L2-normalized. The (w, phi) bank is fixed per category; (w', phi') come
/// from the instance seed. Points on an axis-symmetric body are evaluated at
/// their rotation into the (reference, axis) half-plane, so features respect
/// the symmetry; part-masked points use a separate bank.
class FeatureOracle {
 public:
  FeatureOracle(const std::string& category, int dim, double frequency = 4.0)
      : dim_(dim), frequency_(frequency), body_(make_bank(category_seed(category), dim, frequency)),
        part_(make_bank(category_seed(category + "/part"), dim, frequency)) {
    if (dim < 1) fail(ErrorCode::DegenerateInput, "feature oracle: D must be >= 1");
  }

  int dim() const { return dim_; }

  FeatureMatrix features(const PointSet& canonical, std::uint64_t instance_seed, double noise_amp,
                         const SymmetryDescriptor& sym = SymmetryDescriptor::none(),
                         const std::vector<std::uint8_t>& part_mask = {}) const {
    const Bank noise = make_bank(mix_seed(instance_seed, 0xFEA7u), dim_, frequency_);
    FeatureMatrix out(canonical.rows(), dim_);
    for (Eigen::Index i = 0; i < canonical.rows(); ++i) {
      Vec3 p = canonical.row(i).transpose();
      const bool is_part = !part_mask.empty() && part_mask[static_cast<std::size_t>(i)];
      if (sym.is_axis() && !is_part) {
        const double h = p.dot(sym.axis);
        const double rho = (p - h * sym.axis).norm();
        p = h * sym.axis + rho * sym.reference;
      }
      const Bank& bank = is_part ? part_ : body_;
      double norm2 = 0.0;
      for (int k = 0; k < dim_; ++k) {
        const double v = std::sin(bank.omega.row(k).dot(p) + bank.phase(k)) +
                         noise_amp * std::sin(noise.omega.row(k).dot(p) + noise.phase(k));
        out(i, k) = static_cast<float>(v);
        norm2 += v * v;
      }
      const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-24));
      for (int k = 0; k < dim_; ++k) out(i, k) = static_cast<float>(out(i, k) * inv);
    }
    return out;
  }

 private:
  struct Bank {
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> omega;
    Eigen::VectorXd phase;
  };

  static Bank make_bank(std::uint64_t seed, int dim, double frequency) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, frequency);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    Bank b;
    b.omega.resize(dim, 3);
    b.phase.resize(dim);
    for (int k = 0; k < dim; ++k) {
      for (int c = 0; c < 3; ++c) b.omega(k, c) = g(rng);
      b.phase(k) = ph(rng);
    }
    return b;
  }

  int dim_;
  double frequency_;
  Bank body_;
  Bank part_;
};

/// Oracle features for every point of a model.
inline FeatureMatrix model_features(const FeatureOracle& oracle, const ReferenceModel& model, std::uint64_t instance_seed,
                                    double noise_amp) {
  return oracle.features(model.points, instance_seed, noise_amp, model.symmetry, model.part_mask);
}

// ---------------------------------------------------------------------------
// View simulation

/// Splats per-point depth and features into a z-buffered image of `view`
/// (points already expressed in the view's world frame).
inline Observation render_observation(const PointSet& points, const FeatureMatrix& features, const CameraView& view,
                                      double splat_radius_px = 2.0) {
  Observation obs;
  obs.camera = view;
  const auto pixels = static_cast<std::size_t>(view.width) * view.height;
  obs.depth.assign(pixels, 0.0f);
  obs.mask.assign(pixels, 0);
  obs.features = FeatureMap(view.width, view.height, static_cast<int>(features.cols()));
  std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
  std::vector<int> owner(pixels, -1);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 pc = view.to_camera(points.row(i).transpose());
    if (!(pc.z() > 0.0)) continue;
    const auto pr = project_camera_point(view, pc);
    if (!in_image(view, pr.u, pr.v)) continue;
    for_each_splat_pixel(pr.u, pr.v, splat_radius_px, view.width, view.height, [&](int px, int py) {
      const std::size_t k = static_cast<std::size_t>(py) * view.width + px;
      if (pr.depth < zbuf[k]) {
        zbuf[k] = pr.depth;
        owner[k] = static_cast<int>(i);
      }
    });
  }
  for (std::size_t k = 0; k < pixels; ++k) {
    if (owner[k] < 0) continue;
    obs.depth[k] = static_cast<float>(zbuf[k]);
    obs.mask[k] = 1;
    const int u = static_cast<int>(k % static_cast<std::size_t>(view.width));
    const int v = static_cast<int>(k / static_cast<std::size_t>(view.width));
    auto dst = obs.features.at(u, v);
    for (Eigen::Index c = 0; c < features.cols(); ++c) dst[static_cast<std::size_t>(c)] = features(owner[k], c);
  }
  return obs;
}

struct SceneParams {
  int width = 128;
  int height = 128;
  double focal = 224.0;
  /// Object center depth in units of its metric diameter.
  double min_depth_factor = 2.2;
  double max_depth_factor = 2.8;
  /// Max principal-point offset of the object center, as a fraction of the image size.
  double max_center_offset = 0.12;
  double min_scale = 0.7;
  double max_scale = 1.3;
};

inline CameraView scene_camera(const SceneParams& sp) {
  CameraView v;
  v.width = sp.width;
  v.height = sp.height;
  v.fx = v.fy = sp.focal;
  v.cx = 0.5 * sp.width;
  v.cy = 0.5 * sp.height;
  return v;
}

/// Random object-to-camera similarity: uniform rotation, log-uniform scale,
/// center placed in front of the camera near the optical axis.
template <typename Rng>
Pose9D sample_object_pose(Rng& rng, const SceneParams& sp, double model_diameter = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Pose9D pose;
  pose.rotation = random_rotation(rng);
  pose.scale = std::exp(std::log(sp.min_scale) + (std::log(sp.max_scale) - std::log(sp.min_scale)) * u(rng));
  const double depth = pose.scale * model_diameter *
                       (sp.min_depth_factor + (sp.max_depth_factor - sp.min_depth_factor) * u(rng));
  const double du = (2.0 * u(rng) - 1.0) * sp.max_center_offset * sp.width;
  const double dv = (2.0 * u(rng) - 1.0) * sp.max_center_offset * sp.height;
  pose.translation = Vec3(du * depth / sp.focal, dv * depth / sp.focal, depth);
  return pose;
}

/// Renders reference-model feature maps from views around it (the lifting input).
inline std::vector<LiftView> render_reference_views(const ReferenceModel& model, const FeatureMatrix& features,
                                                    const ViewSamplingParams& params) {
  std::vector<LiftView> out;
  for (const auto& cam : sample_camera_poses(model, params)) {
    out.push_back({cam, render_observation(model.points, features, cam).features});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symmetry handling

/// Canonical representative of an axis-symmetric ground-truth pose: rotates
/// about the object axis so the camera origin lies in the plane spanned by
/// the posed axis and reference directions, on the positive-reference side.
inline Pose9D disambiguate_symmetry(const Pose9D& pose, const SymmetryDescriptor& sym) {
  if (!sym.is_axis()) fail(ErrorCode::DegenerateInput, "disambiguate_symmetry: descriptor has no axis");
  const Vec3 axis_cam = pose.rotation * sym.axis;
  const Vec3 v = -pose.translation;
  const Vec3 w = v - v.dot(axis_cam) * axis_cam;
  if (w.norm() < 1e-9) fail(ErrorCode::DegenerateViewpoint, "camera lies on the symmetry axis");
  const Vec3 w_hat = w.normalized();
  const Vec3 a_hat = axis_cam.normalized();
  Mat3 target, source;
  target.col(0) = a_hat;
  target.col(1) = w_hat;
  target.col(2) = a_hat.cross(w_hat);
  source.col(0) = sym.axis;
  source.col(1) = sym.reference;
  source.col(2) = sym.axis.cross(sym.reference);
  Pose9D out = pose;
  out.rotation = target * source.transpose();
  // Already canonical: return the input bit-for-bit so repeated application is exact.
  if ((out.rotation - pose.rotation).cwiseAbs().maxCoeff() <= 1e-12) return pose;
  return out;
}

/// Handle visibility for part-masked models (points in the view's world frame).
inline bool handle_visible(const ReferenceModel& model, const CameraView& view, int min_points,
                           const VisibilityParams& vis = {}) {
  if (!model.has_part_mask()) fail(ErrorCode::NoPartMask, "handle_visible: model has no part mask");
  if (min_points <= 0) return true;
  const auto visible = visibility_mask(model.points, view, vis);
  int count = 0;
  for (std::size_t i = 0; i < visible.size(); ++i) count += (visible[i] && model.part_mask[i]) ? 1 : 0;
  return count >= min_points;
}

// ---------------------------------------------------------------------------
// Ground truth correspondences

/// Positives: i paired with its nearest full point j when closer than
/// `pos_threshold`. Negatives: every pair farther than `neg_threshold`.
/// Pairs in between are ignored.
inline CorrespondenceGT gt_correspondences(const PointSet& partial, const PointSet& full, double pos_threshold,
                                           double neg_threshold) {
  if (!(pos_threshold > 0.0 && pos_threshold < neg_threshold)) {
    fail(ErrorCode::DegenerateInput, "gt_correspondences: need 0 < pos_threshold < neg_threshold");
  }
  const auto m = partial.rows(), n = full.rows();
  CorrespondenceGT gt;
  gt.inlier_partial.assign(static_cast<std::size_t>(m), 0);
  gt.inlier_full.assign(static_cast<std::size_t>(n), 0);
  const double pos2 = pos_threshold * pos_threshold, neg2 = neg_threshold * neg_threshold;
  for (Eigen::Index i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_j = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d2 = (partial.row(i) - full.row(j)).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_j = j;
      }
      if (d2 > neg2) gt.negatives.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
    if (best_j >= 0 && best < pos2) {
      gt.positives.emplace_back(static_cast<int>(i), static_cast<int>(best_j));
      gt.inlier_partial[static_cast<std::size_t>(i)] = 1;
      gt.inlier_full[static_cast<std::size_t>(best_j)] = 1;
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Samples

struct Ablation {
  bool no_fusion = false;
  bool no_inlier_head = false;
  bool no_symmetry = false;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 100;
  std::uint64_t seed = 0;
  double corr_threshold = 0.05;
  double neg_threshold = 0.10;
  int partial_points = 128;
  int full_points = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Ablation ablation;
  /// Training observations per instance per epoch; 0 uses the dataset's n_views.
  int samples_per_instance = 0;
  /// Draw fresh object poses every epoch instead of reusing the first epoch's.
  bool resample_each_epoch = true;
  int handle_min_points = 10;
  int jobs = 1;
  MatcherConfig matcher;
  SceneParams scene;

  void validate() const {
    if (!(learning_rate > 0.0)) fail(ErrorCode::DegenerateInput, "train config: learning_rate must be > 0");
    if (!(corr_threshold > 0.0 && corr_threshold < neg_threshold)) {
      fail(ErrorCode::DegenerateInput, "train config: need 0 < corr_threshold < neg_threshold");
    }
    if (epochs < 0 || partial_points < 3 || full_points < 3) {
      fail(ErrorCode::DegenerateInput, "train config: bad epochs or point counts");
    }
    matcher.validate();
  }
};

/// Everything needed to train one category.
struct CategoryDataset {
  ReferenceModel reference;
  std::uint64_t reference_seed = 0;
  std::vector<ReferenceModel> instances;
  std::vector<std::uint64_t> instance_seeds;
  int n_views = 40;
  std::uint64_t seed = 0;
  OracleParams oracle;
};

/// Category reference cloud: lifted from rendered oracle views, then reduced
/// to `count` points by farthest-point sampling.
struct ReferenceCloud {
  FeatureCloud cloud;          // canonical metric frame
  FeatureCloud normalized;     // network input
  Normalization norm;
  Vec3 extents = Vec3::Ones();
  double diameter = 1.0;
};

inline ReferenceCloud build_reference_cloud(const FeatureCloud& lifted, const Vec3& extents, int count,
                                            std::uint64_t seed) {
  ReferenceCloud r;
  r.cloud = lifted.subset(farthest_point_sample(lifted.points, count, seed));
  auto [normalized, norm] = normalize_cloud(r.cloud);
  r.normalized = std::move(normalized);
  r.norm = norm;
  r.extents = extents;
  r.diameter = extents.norm();
  return r;
}

inline FeatureCloud lift_reference(const CategoryDataset& ds, int width = 128) {
  const FeatureOracle oracle(ds.reference.category, ds.oracle.dim);
  const FeatureMatrix f = model_features(oracle, ds.reference, ds.reference_seed, ds.oracle.noise_amp);
  ViewSamplingParams vp;
  vp.n_views = ds.n_views;
  vp.width = vp.height = width;
  vp.seed = mix_seed(ds.seed, 0x11F7u);
  return lift_features(ds.reference, render_reference_views(ds.reference, f, vp));
}

struct TrainingSample {
  FeatureCloud partial;  // normalized camera-frame observation
  Normalization partial_norm;
  PointSet partial_camera;  // un-normalized camera-frame points
  Pose9D raw_pose;
  Pose9D gt_pose;
  CorrespondenceGT gt;
  bool symmetric = false;
  bool handle_visible = false;
};

/// Symmetry treatment for one observation of a model: axis symmetry unless the
/// model has a part (mug handle) that is visible.
inline SymmetryDescriptor effective_symmetry(const ReferenceModel& model, bool part_visible) {
  if (!model.symmetry.is_axis()) return SymmetryDescriptor::none();
  if (model.has_part_mask() && part_visible) return SymmetryDescriptor::none();
  return model.symmetry;
}

/// Labels an observed partial cloud (camera frame) given its raw pose.
inline TrainingSample label_sample(const FeatureCloud& partial_camera, const Pose9D& raw_pose,
                                   const SymmetryDescriptor& sym, const ReferenceCloud& reference,
                                   const TrainConfig& cfg) {
  TrainingSample s;
  s.raw_pose = raw_pose;
  s.symmetric = sym.is_axis();
  s.gt_pose = (s.symmetric && !cfg.ablation.no_symmetry) ? disambiguate_symmetry(raw_pose, sym) : raw_pose;
  s.partial_camera = partial_camera.points;
  auto [normalized, norm] = normalize_cloud(partial_camera);
  s.partial = std::move(normalized);
  s.partial_norm = norm;
  const PointSet canonical = apply_pose(s.gt_pose.inverse(), partial_camera.points);
  const double d = reference.diameter;
  s.gt = gt_correspondences(canonical, reference.cloud.points, cfg.corr_threshold * d, cfg.neg_threshold * d);
  return s;
}

/// A rendered test observation with its ground truth.
struct SceneSample {
  Observation observation;
  Pose9D gt_pose;
  SymmetryDescriptor symmetry;
  bool handle_visible = false;
};

/// Renders `instance` under a seeded random pose into depth, mask and feature
/// images. The symmetry follows the mug rule for this view.
inline SceneSample simulate_scene(const ReferenceModel& instance, const FeatureMatrix& instance_features,
                                  const SceneParams& scene, std::uint64_t seed, int handle_min_points = 10) {
  std::mt19937_64 rng(seed);
  const CameraView view = scene_camera(scene);
  SceneSample s;
  s.gt_pose = sample_object_pose(rng, scene, instance.diameter());
  ReferenceModel posed = instance;
  posed.points = apply_pose(s.gt_pose, instance.points);
  s.observation = render_observation(posed.points, instance_features, view);
  s.handle_visible = instance.has_part_mask() && handle_visible(posed, view, handle_min_points);
  s.symmetry = effective_symmetry(instance, s.handle_visible);
  return s;
}

/// Renders and back-projects one observation of `instance` under a seeded
/// random pose, then labels it against the reference cloud.
inline TrainingSample make_training_sample(const ReferenceCloud& reference, const ReferenceModel& instance,
                                           const FeatureMatrix& instance_features, const TrainConfig& cfg,
                                           std::uint64_t seed) {
  const SceneSample scene = simulate_scene(instance, instance_features, cfg.scene, seed, cfg.handle_min_points);
  const FeatureCloud observed = backproject_observation(scene.observation, cfg.partial_points, mix_seed(seed, 1));
  TrainingSample s = label_sample(observed, scene.gt_pose, scene.symmetry, reference, cfg);
  s.handle_visible = scene.handle_visible;
  return s;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(MatcherWeights<T>& weights, const MatcherWeights<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    for (auto& [name, w] : weights) {
      const Matrix<T>& g = grads.at(name);
      auto [it_m, fresh_m] = m_.try_emplace(name, Matrix<T>::Zero(w.rows(), w.cols()));
      auto [it_v, fresh_v] = v_.try_emplace(name, Matrix<T>::Zero(w.rows(), w.cols()));
      Matrix<T>& m = it_m->second;
      Matrix<T>& v = it_v->second;
      m = static_cast<T>(b1_) * m + static_cast<T>(1.0 - b1_) * g;
      v = static_cast<T>(b2_) * v + static_cast<T>(1.0 - b2_) * g.cwiseProduct(g);
      const T eps_hat = static_cast<T>(eps_ * std::sqrt(c2));
      w.array() -= step * m.array() / (v.array().sqrt() + eps_hat);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  MatcherWeights<T> m_, v_;
};

struct LossRecord {
  int epoch = 0;
  long step = 0;
  double partial = 0, full = 0, focal = 0, total = 0;
};

inline std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  out << "epoch,step,L_P,L_Q,L_focal,total\n";
  out.precision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.step << ',' << r.partial << ',' << r.full << ',' << r.focal << ',' << r.total << '\n';
  }
  return out.str();
}

struct TrainResult {
  MatcherWeights<float> weights;
  std::vector<LossRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

struct TrainHooks {
  /// Directory for per-epoch checkpoints and the loss CSV; empty disables.
  std::filesystem::path checkpoint_dir;
  std::function<void(int epoch, double mean_loss, const MatcherWeights<float>& weights)> on_epoch;
};

inline MatcherConfig effective_matcher_config(const TrainConfig& cfg) {
  MatcherConfig m = cfg.matcher;
  m.inlier_head = !cfg.ablation.no_inlier_head;
  return m;
}

/// Pre-computed per-instance inputs for sample generation.
struct PreparedDataset {
  ReferenceCloud reference;
  std::vector<FeatureMatrix> instance_features;
};

inline PreparedDataset prepare_dataset(const CategoryDataset& ds, const TrainConfig& cfg) {
  if (ds.instances.empty()) fail(ErrorCode::DegenerateInput, "train: dataset has no instance models");
  if (ds.instances.size() != ds.instance_seeds.size()) fail(ErrorCode::LengthMismatch, "train: instance seeds");
  PreparedDataset p;
  p.reference = build_reference_cloud(lift_reference(ds), ds.reference.extents, cfg.full_points, mix_seed(ds.seed, 0xF0u));
  const FeatureOracle oracle(ds.reference.category, ds.oracle.dim);
  for (std::size_t k = 0; k < ds.instances.size(); ++k) {
    p.instance_features.push_back(model_features(oracle, ds.instances[k], ds.instance_seeds[k], ds.oracle.noise_amp));
  }
  return p;
}

/// Generates one epoch of samples (deterministic in seed and epoch; degenerate
/// draws are retried with a derived seed).
inline std::vector<TrainingSample> generate_epoch(const CategoryDataset& ds, const PreparedDataset& prep,
                                                  const TrainConfig& cfg, int epoch) {
  const int per = cfg.samples_per_instance > 0 ? cfg.samples_per_instance : ds.n_views;
  const std::size_t total = ds.instances.size() * static_cast<std::size_t>(per);
  std::vector<TrainingSample> samples(total);
  const int draw_epoch = cfg.resample_each_epoch ? epoch : 0;
  parallel_for(total, cfg.jobs, [&](std::size_t idx) {
    const std::size_t inst = idx / static_cast<std::size_t>(per);
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(draw_epoch), idx, attempt);
      try {
        samples[idx] = make_training_sample(prep.reference, ds.instances[inst], prep.instance_features[inst], cfg, seed);
        if (!samples[idx].gt.positives.empty()) return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateViewpoint && e.code() != ErrorCode::EmptyObservation) throw;
      }
      if (attempt > 50) fail(ErrorCode::EmptyObservation, "could not simulate a usable training view");
    }
  });
  return samples;
}

/// Adam over single-sample steps for `epochs` passes; shuffled order per epoch.
inline TrainResult train(const CategoryDataset& ds, const PreparedDataset& prep, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}, const MatcherWeights<float>* initial = nullptr) {
  cfg.validate();
  const MatcherConfig mcfg = effective_matcher_config(cfg);

  TrainResult result;
  result.weights = initial ? *initial : init_weights<float>(mcfg, mix_seed(cfg.seed, 0x1417u));
  check_weights(result.weights, mcfg);
  Adam<float> opt(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
  MatcherWeights<float> last_good = result.weights;

  std::vector<TrainingSample> samples;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == 0 || cfg.resample_each_epoch) samples = generate_epoch(ds, prep, cfg, epoch);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5u, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_sum = 0.0;
    for (std::size_t k : order) {
      const auto& s = samples[k];
      GradientResult<float> g;
      try {
        g = param_gradients(s.partial, prep.reference.normalized, s.gt, result.weights, mcfg);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::NonFiniteGradient ||
            e.code() == ErrorCode::NonFiniteActivation) {
          result.weights = last_good;
          result.aborted = true;
          result.abort_reason = e.what();
          return result;
        }
        throw;
      }
      opt.step(result.weights, g.gradients);
      result.history.push_back({epoch, opt.steps(), g.loss.partial, g.loss.full, g.loss.focal, g.loss.total});
      epoch_sum += g.loss.total;
    }
    last_good = result.weights;
    if (!hooks.checkpoint_dir.empty()) {
      io::write_weights(hooks.checkpoint_dir / "weights.gsmw", result.weights);
      io::write_text(hooks.checkpoint_dir / "loss.csv", loss_history_csv(result.history));
    }
    if (hooks.on_epoch) {
      hooks.on_epoch(epoch, samples.empty() ? 0.0 : epoch_sum / static_cast<double>(samples.size()), result.weights);
    }
  }
  return result;
}

inline TrainResult train(const CategoryDataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {},
                         const MatcherWeights<float>* initial = nullptr) {
  cfg.validate();
  return train(ds, prepare_dataset(ds, cfg), cfg, hooks, initial);
}

}  // namespace catpose
