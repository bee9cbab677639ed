#pragma once

// Inference: matcher forward pass, confident-match extraction, and robust
// similarity fitting from the reference model into the camera frame.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "catpose/error.hpp"
#include "catpose/featurelift.hpp"
#include "catpose/geometry.hpp"
#include "catpose/matcher.hpp"

namespace catpose {

struct InferenceParams {
  double match_threshold = 0.4;
  bool mutual_nearest = true;
  RansacParams ransac;
  /// RANSAC inlier threshold as a fraction of the reference diameter; overrides
  /// ransac.inlier_threshold in infer().
  double inlier_fraction = 0.05;
  int max_points = 128;
  std::uint64_t seed = 0;
  /// Skip the network and match raw features (no-fusion ablation).
  bool raw_features = false;

  void validate() const {
    if (!(match_threshold > 0.0 && match_threshold < 1.0)) {
      fail(ErrorCode::DegenerateInput, "inference: match_threshold must lie in (0, 1)");
    }
    if (max_points < 3) fail(ErrorCode::DegenerateInput, "inference: max_points must be >= 3");
  }
};

/// Thresholded matches from the gated assignment, optionally restricted to
/// mutual nearest neighbours (ties to the lowest index). Sorted by (i, j).
template <typename T>
std::vector<Match> extract_matches(const Matrix<T>& gated, double threshold, bool mutual_nearest) {
  const auto m = gated.rows(), n = gated.cols();
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(m), -1), col_best(static_cast<std::size_t>(n), -1);
  if (mutual_nearest) {
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        auto& rb = row_best[static_cast<std::size_t>(i)];
        if (rb < 0 || gated(i, j) > gated(i, rb)) rb = j;
        auto& cb = col_best[static_cast<std::size_t>(j)];
        if (cb < 0 || gated(i, j) > gated(cb, j)) cb = i;
      }
    }
  }
  std::vector<Match> out;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double s = static_cast<double>(gated(i, j));
      if (!(s >= threshold)) continue;
      if (mutual_nearest && (row_best[static_cast<std::size_t>(i)] != j || col_best[static_cast<std::size_t>(j)] != i)) {
        continue;
      }
      out.push_back({static_cast<int>(i), static_cast<int>(j), std::clamp(s, 0.0, 1.0)});
    }
  }
  if (out.empty()) fail(ErrorCode::NoMatches, "no assignment entry passes the match threshold");
  return out;
}

template <typename T>
std::vector<Match> extract_matches(const AssignmentOutput<T>& output, const InferenceParams& params) {
  return extract_matches(output.gated_scores, params.match_threshold, params.mutual_nearest);
}

struct PoseEstimate {
  Pose9D pose;
  /// Inlier flag per match, in the caller's match order.
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
};

/// RANSAC similarity from full (canonical, metric) points to partial
/// (camera-frame) points over the given matches. Matches are put in (i, j)
/// order first so the result does not depend on list order.
inline PoseEstimate estimate_pose(const std::vector<Match>& matches, const PointSet& partial_camera,
                                  const PointSet& full_metric, const RansacParams& ransac) {
  if (matches.size() < 3) fail(ErrorCode::DegenerateInput, "estimate_pose: need at least 3 matches");
  std::vector<std::size_t> order(matches.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(matches[a].partial_index, matches[a].full_index) <
           std::pair(matches[b].partial_index, matches[b].full_index);
  });
  const auto k = static_cast<Eigen::Index>(matches.size());
  PointSet src(k, 3), dst(k, 3);
  for (Eigen::Index r = 0; r < k; ++r) {
    const Match& mt = matches[order[static_cast<std::size_t>(r)]];
    if (mt.partial_index < 0 || mt.partial_index >= partial_camera.rows() || mt.full_index < 0 ||
        mt.full_index >= full_metric.rows()) {
      fail(ErrorCode::OutOfBounds, "estimate_pose: match index out of range");
    }
    src.row(r) = full_metric.row(mt.full_index);
    dst.row(r) = partial_camera.row(mt.partial_index);
  }
  const RansacResult rr = ransac_similarity(src, dst, ransac);
  PoseEstimate est;
  est.pose = rr.pose;
  est.inlier_count = rr.inlier_count;
  est.inliers.assign(matches.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r) est.inliers[order[r]] = rr.inliers[r];
  return est;
}

/// Category reference as used at inference: the lifted cloud in the canonical
/// metric frame plus the model's bounding-box extents.
struct ReferenceInput {
  FeatureCloud cloud;
  Vec3 extents = Vec3::Ones();
  double diameter() const { return extents.norm(); }
};

struct InferenceDiagnostics {
  int n_matches = 0;
  int n_inliers = 0;
  double mean_score = 0.0;
};

struct InferenceResult {
  Pose9D pose;
  OrientedBox3D box;
  InferenceDiagnostics diagnostics;
  /// Wall-clock per stage; excluded from anything compared for determinism.
  std::map<std::string, double> timings_ms;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, std::map<std::string, double>& timings, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto r = fn();
    timings[stage] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  } catch (const Error& e) {
    throw e.with_stage(stage);
  }
}

}  // namespace detail

/// Full pipeline for one observation; errors carry the failing stage name.
inline InferenceResult infer(const Observation& observation, const ReferenceInput& reference,
                             const MatcherWeights<float>& weights, const MatcherConfig& cfg,
                             const InferenceParams& params) {
  params.validate();
  InferenceResult res;
  auto& tm = res.timings_ms;
  const FeatureCloud partial = detail::run_stage(
      "backproject", tm, [&] { return backproject_observation(observation, params.max_points, params.seed); });
  const auto normalized = detail::run_stage("normalize", tm, [&] {
    return std::pair(normalize_cloud(partial).first, normalize_cloud(reference.cloud).first);
  });
  const FeatureCloud& partial_n = normalized.first;
  const FeatureCloud& full_n = normalized.second;
  const AssignmentOutput<float> out = detail::run_stage("match", tm, [&] {
    if (partial_n.dim() != reference.cloud.dim()) {
      fail(ErrorCode::DimensionMismatch, "observation and reference feature dims differ");
    }
    return params.raw_features ? raw_feature_assignment<float>(partial_n, full_n)
                               : forward<float>(partial_n, full_n, weights, cfg);
  });
  const std::vector<Match> matches = detail::run_stage("extract", tm, [&] { return extract_matches(out, params); });
  const PoseEstimate est = detail::run_stage("solve", tm, [&] {
    RansacParams rp = params.ransac;
    rp.inlier_threshold = params.inlier_fraction * reference.diameter();
    rp.seed = params.seed;
    // Normalization only rescales/translates, so match indices refer to the
    // original partial and reference rows directly.
    return estimate_pose(matches, partial.points, reference.cloud.points, rp);
  });
  res.pose = est.pose;
  res.box = OrientedBox3D{est.pose, reference.extents};
  res.diagnostics.n_matches = static_cast<int>(matches.size());
  res.diagnostics.n_inliers = est.inlier_count;
  double sum = 0.0;
  for (std::size_t k = 0; k < matches.size(); ++k) sum += est.inliers[k] ? matches[k].score : 0.0;
  res.diagnostics.mean_score = est.inlier_count > 0 ? sum / est.inlier_count : 0.0;
  return res;
}

}  // namespace catpose
