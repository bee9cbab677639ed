#pragma once

// NOCS-style pose metrics: 3D IoU precision at thresholds and n-degree m-cm
// accuracy, both symmetry-aware, plus cumulative accuracy curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "catpose/error.hpp"
#include "catpose/geometry.hpp"
#include "catpose/parallel.hpp"

namespace catpose {

struct EvalItem {
  OrientedBox3D prediction;
  OrientedBox3D ground_truth;
  SymmetryDescriptor symmetry;
  std::string category;
};

struct ThresholdSet {
  std::vector<double> iou = {0.25, 0.5};
  std::vector<std::pair<double, double>> deg_cm = {{5, 5}, {10, 5}, {15, 5}};
};

inline std::string iou_key(double t) { return "3d_" + std::to_string(static_cast<int>(std::lround(t * 100))); }

inline std::string deg_cm_key(double deg, double cm) {
  auto fmt = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return std::string(buf);
  };
  return fmt(deg) + "deg" + fmt(cm) + "cm";
}

struct ItemErrors {
  double rotation_deg = 0.0;
  double translation_m = 0.0;
  double iou = 0.0;
};

struct MetricsReport {
  std::map<std::string, double> pooled;
  std::map<std::string, std::map<std::string, double>> per_category;
  /// Per-category metrics averaged over categories.
  std::map<std::string, double> category_mean;
  std::size_t n_items = 0;
  std::vector<ItemErrors> items;
};

/// IoU maximized over spins of the prediction about the symmetry axis. Spins
/// are screened with a cheap estimate and the best few re-estimated with the
/// full sample budget.
inline double symmetric_iou(const OrientedBox3D& pred, const OrientedBox3D& gt, const SymmetryDescriptor& sym,
                            const IouParams& params = {}) {
  if (!sym.is_axis()) return oriented_box_iou(pred, gt, params);
  IouParams coarse = params;
  coarse.samples = std::max(1, std::min(params.samples, 4000));
  std::vector<std::pair<double, int>> scored;
  scored.reserve(kSymmetrySteps);
  auto spun = [&](int k) {
    OrientedBox3D b = pred;
    b.pose.rotation = pred.pose.rotation * axis_rotation(sym.axis, 2.0 * std::numbers::pi * k / kSymmetrySteps);
    return b;
  };
  for (int k = 0; k < kSymmetrySteps; ++k) scored.emplace_back(-oriented_box_iou(spun(k), gt, coarse), k);
  std::stable_sort(scored.begin(), scored.end());
  double best = oriented_box_iou(pred, gt, params);
  for (std::size_t r = 0; r < std::min<std::size_t>(4, scored.size()); ++r) {
    best = std::max(best, oriented_box_iou(spun(scored[r].second), gt, params));
  }
  return best;
}

inline ItemErrors item_errors(const EvalItem& item, const IouParams& iou) {
  ItemErrors e;
  e.rotation_deg = rotation_error_deg(item.ground_truth.pose.rotation, item.prediction.pose.rotation, item.symmetry);
  e.translation_m = (item.prediction.pose.translation - item.ground_truth.pose.translation).norm();
  e.iou = symmetric_iou(item.prediction, item.ground_truth, item.symmetry, iou);
  return e;
}

inline std::map<std::string, double> summarize(const std::vector<ItemErrors>& errs, const ThresholdSet& th) {
  std::map<std::string, double> out;
  const double n = static_cast<double>(errs.size());
  for (double t : th.iou) {
    const auto c = std::count_if(errs.begin(), errs.end(), [&](const ItemErrors& e) { return e.iou >= t; });
    out[iou_key(t)] = n > 0 ? static_cast<double>(c) / n : 0.0;
  }
  for (const auto& [deg, cm] : th.deg_cm) {
    const auto c = std::count_if(errs.begin(), errs.end(), [&](const ItemErrors& e) {
      return e.rotation_deg <= deg && e.translation_m <= cm / 100.0;
    });
    out[deg_cm_key(deg, cm)] = n > 0 ? static_cast<double>(c) / n : 0.0;
  }
  return out;
}

inline MetricsReport evaluate(const std::vector<EvalItem>& items, const ThresholdSet& thresholds = {},
                              const IouParams& iou = {}, int jobs = 1) {
  MetricsReport rep;
  rep.n_items = items.size();
  rep.items.resize(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t k) { rep.items[k] = item_errors(items[k], iou); });
  rep.pooled = summarize(rep.items, thresholds);
  std::map<std::string, std::vector<ItemErrors>> groups;
  for (std::size_t k = 0; k < items.size(); ++k) groups[items[k].category].push_back(rep.items[k]);
  for (const auto& [cat, errs] : groups) rep.per_category[cat] = summarize(errs, thresholds);
  for (const auto& [cat, metrics] : rep.per_category) {
    for (const auto& [key, v] : metrics) rep.category_mean[key] += v / static_cast<double>(rep.per_category.size());
  }
  return rep;
}

/// Aligned prediction / ground-truth lists.
inline std::vector<EvalItem> make_items(const std::vector<OrientedBox3D>& predictions,
                                        const std::vector<OrientedBox3D>& ground_truths,
                                        const std::vector<SymmetryDescriptor>& symmetries,
                                        const std::vector<std::string>& categories = {}) {
  if (predictions.size() != ground_truths.size() || symmetries.size() != predictions.size() ||
      (!categories.empty() && categories.size() != predictions.size())) {
    fail(ErrorCode::LengthMismatch, "evaluate: prediction, ground-truth and symmetry lists differ in length");
  }
  std::vector<EvalItem> items(predictions.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    items[k] = {predictions[k], ground_truths[k], symmetries[k], categories.empty() ? "all" : categories[k]};
  }
  return items;
}

struct CurvePoint {
  double threshold = 0.0;
  double accuracy = 0.0;
};

struct AccuracyCurves {
  std::vector<CurvePoint> rotation;     // degrees
  std::vector<CurvePoint> translation;  // centimeters
};

inline AccuracyCurves accuracy_curves(const std::vector<ItemErrors>& errs, double max_deg, double max_cm, int steps) {
  if (steps < 2) fail(ErrorCode::DegenerateInput, "accuracy_curves: steps must be >= 2");
  AccuracyCurves c;
  const double n = static_cast<double>(errs.size());
  for (int k = 0; k < steps; ++k) {
    const double deg = max_deg * k / (steps - 1);
    const double cm = max_cm * k / (steps - 1);
    const auto nr = std::count_if(errs.begin(), errs.end(), [&](const ItemErrors& e) { return e.rotation_deg <= deg; });
    const auto nt = std::count_if(errs.begin(), errs.end(),
                                  [&](const ItemErrors& e) { return e.translation_m * 100.0 <= cm; });
    c.rotation.push_back({deg, n > 0 ? static_cast<double>(nr) / n : 0.0});
    c.translation.push_back({cm, n > 0 ? static_cast<double>(nt) / n : 0.0});
  }
  return c;
}

inline AccuracyCurves accuracy_curves(const std::vector<EvalItem>& items, double max_deg, double max_cm, int steps) {
  std::vector<ItemErrors> errs;
  for (const auto& it : items) {
    ItemErrors e;
    e.rotation_deg = rotation_error_deg(it.ground_truth.pose.rotation, it.prediction.pose.rotation, it.symmetry);
    e.translation_m = (it.prediction.pose.translation - it.ground_truth.pose.translation).norm();
    errs.push_back(e);
  }
  return accuracy_curves(errs, max_deg, max_cm, steps);
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out.precision(9);
  out << "threshold,accuracy\n";
  for (const auto& p : curve) out << p.threshold << ',' << p.accuracy << '\n';
  return out.str();
}

}  // namespace catpose
