#pragma once

// Finite-difference oracle for matcher gradients, evaluated through the
// value-only forward pass and loss.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "catpose/matcher.hpp"

namespace oracle {

struct MatcherInstance {
  catpose::FeatureCloud partial, full;
  catpose::CorrespondenceGT gt;
};

inline catpose::FeatureCloud random_cloud(std::mt19937_64& rng, int n, int dim) {
  std::normal_distribution<double> g;
  catpose::FeatureCloud c;
  c.points.resize(n, 3);
  for (Eigen::Index k = 0; k < c.points.size(); ++k) c.points.data()[k] = 0.5 * g(rng);
  c.features.resize(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) c.features(i, k) = static_cast<float>(g(rng));
    c.features.row(i).normalize();
  }
  c.view_counts.assign(static_cast<std::size_t>(n), 1u);
  return c;
}

inline MatcherInstance random_instance(std::mt19937_64& rng, int m, int n, int dim) {
  MatcherInstance inst;
  inst.partial = random_cloud(rng, m, dim);
  inst.full = random_cloud(rng, n, dim);
  std::uniform_int_distribution<int> coin(0, 3);
  inst.gt.inlier_partial.assign(static_cast<std::size_t>(m), 0);
  inst.gt.inlier_full.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const int c = coin(rng);
      if (c == 0 && j == (i * 3) % n) {
        inst.gt.positives.emplace_back(i, j);
        inst.gt.inlier_partial[static_cast<std::size_t>(i)] = 1;
        inst.gt.inlier_full[static_cast<std::size_t>(j)] = 1;
      } else if (c >= 2) {
        inst.gt.negatives.emplace_back(i, j);
      }
    }
  }
  if (inst.gt.positives.empty()) {
    inst.gt.positives.emplace_back(0, 0);
    inst.gt.inlier_partial[0] = inst.gt.inlier_full[0] = 1;
  }
  return inst;
}

inline double loss_value(const MatcherInstance& inst, const catpose::MatcherWeights<double>& w,
                         const catpose::MatcherConfig& cfg) {
  return catpose::total_loss(catpose::forward<double>(inst.partial, inst.full, w, cfg), inst.gt, cfg).total;
}

struct TensorCheck {
  std::string name;
  double relative_error = 0.0;
  int entries = 0;
};

/// Central differences for `stride`-spaced entries of every tensor; relative
/// error is ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12).
inline std::vector<TensorCheck> check_tensors(const MatcherInstance& inst, catpose::MatcherWeights<double> w,
                                              const catpose::MatcherConfig& cfg, int stride = 1, double h = 1e-6) {
  const auto grads = catpose::param_gradients<double>(inst.partial, inst.full, inst.gt, w, cfg).gradients;
  std::vector<TensorCheck> out;
  for (auto& [name, m] : w) {
    const auto& an = grads.at(name);
    double diff = 0.0, na = 0.0, nn = 0.0;
    int count = 0;
    for (Eigen::Index k = 0; k < m.size(); k += stride) {
      const double x0 = m.data()[k];
      m.data()[k] = x0 + h;
      const double fp = loss_value(inst, w, cfg);
      m.data()[k] = x0 - h;
      const double fm = loss_value(inst, w, cfg);
      m.data()[k] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      diff += std::pow(an.data()[k] - fd, 2);
      na += std::pow(an.data()[k], 2);
      nn += fd * fd;
      ++count;
    }
    out.push_back({name, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12}), count});
  }
  return out;
}

}  // namespace oracle
