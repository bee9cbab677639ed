#pragma once

// Transformer matching network between a partial (observed) feature cloud and
// the full reference feature cloud: Fourier positional encoding plus projected
// semantic features, shared self-attention and bidirectional cross-attention
// blocks, a rescaled-cosine assignment matrix gated by per-point inlier
// probabilities, and the training losses on that gated matrix.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "catpose/autodiff.hpp"
#include "catpose/error.hpp"
#include "catpose/featurelift.hpp"

namespace catpose {

template <typename T>
using Matrix = ad::Mat<T>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class EmbedCombine { Add, Concat };

struct MatcherConfig {
  int feature_dim = 32;
  int model_dim = 64;
  int num_blocks = 2;
  int num_heads = 4;
  int pe_freqs = 6;
  double gamma = 2.0;
  double score_floor = 1e-6;
  EmbedCombine combine = EmbedCombine::Add;
  /// When false, inlier probabilities are fixed at 1 and their losses dropped.
  bool inlier_head = true;

  int pe_width() const { return 6 * pe_freqs; }

  void validate() const {
    if (model_dim <= 0 || num_heads <= 0 || model_dim % num_heads != 0) {
      fail(ErrorCode::DimensionMismatch, "matcher config: model_dim must be divisible by num_heads");
    }
    if (combine == EmbedCombine::Concat && model_dim % 2 != 0) {
      fail(ErrorCode::DimensionMismatch, "matcher config: concat embedding needs an even model_dim");
    }
    if (num_blocks < 1 || pe_freqs < 1 || feature_dim < 1) {
      fail(ErrorCode::DegenerateInput, "matcher config: num_blocks, pe_freqs and feature_dim must be >= 1");
    }
    if (gamma < 0.0 || !(score_floor > 0.0 && score_floor < 0.5)) {
      fail(ErrorCode::DegenerateInput, "matcher config: gamma >= 0 and 0 < score_floor < 0.5 required");
    }
  }
};

/// Named parameter tensors, iterated in name order.
template <typename T>
using MatcherWeights = std::map<std::string, Matrix<T>>;

template <typename To, typename From>
MatcherWeights<To> cast_weights(const MatcherWeights<From>& w) {
  MatcherWeights<To> out;
  for (const auto& [name, m] : w) out.emplace(name, m.template cast<To>());
  return out;
}

/// Tensor names and shapes implied by a configuration.
inline std::vector<std::pair<std::string, std::pair<int, int>>> weight_layout(const MatcherConfig& cfg) {
  const int d = cfg.model_dim;
  const int embed = cfg.combine == EmbedCombine::Add ? d : d / 2;
  std::vector<std::pair<std::string, std::pair<int, int>>> layout = {
      {"embed.semantic.weight", {cfg.feature_dim, embed}},
      {"embed.semantic.bias", {1, embed}},
      {"embed.position.weight", {cfg.pe_width(), embed}},
      {"embed.position.bias", {1, embed}},
  };
  for (int b = 0; b < cfg.num_blocks; ++b) {
    for (const char* kind : {"self", "cross"}) {
      const std::string p = "block" + std::to_string(b) + "." + kind + ".";
      for (const char* w : {"query", "key", "value", "output"}) layout.push_back({p + w, {d, d}});
      layout.push_back({p + "norm1.scale", {1, d}});
      layout.push_back({p + "norm1.bias", {1, d}});
      layout.push_back({p + "ffn.in.weight", {d, 2 * d}});
      layout.push_back({p + "ffn.in.bias", {1, 2 * d}});
      layout.push_back({p + "ffn.out.weight", {2 * d, d}});
      layout.push_back({p + "ffn.out.bias", {1, d}});
      layout.push_back({p + "norm2.scale", {1, d}});
      layout.push_back({p + "norm2.bias", {1, d}});
    }
  }
  if (cfg.inlier_head) {
    layout.push_back({"inlier.partial.weight", {d, 1}});
    layout.push_back({"inlier.partial.bias", {1, 1}});
    layout.push_back({"inlier.full.weight", {d, 1}});
    layout.push_back({"inlier.full.bias", {1, 1}});
  }
  return layout;
}

/// Glorot-uniform weights, unit norm scales, zero biases. Positional and
/// residual-branch output projections start at gain 0.1.
template <typename T = float>
MatcherWeights<T> init_weights(const MatcherConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  MatcherWeights<T> w;
  for (const auto& [name, shape] : weight_layout(cfg)) {
    const auto [rows, cols] = shape;
    Matrix<double> m = Matrix<double>::Zero(rows, cols);
    const bool is_scale = name.ends_with("scale");
    const bool is_bias = name.ends_with("bias");
    if (is_scale) {
      m.setOnes();
    } else if (!is_bias) {
      const bool damped = name.starts_with("embed.position") || name.ends_with(".output") ||
                          name.ends_with("ffn.out.weight");
      const double gain = damped ? 0.1 : 1.0;
      const double limit = gain * std::sqrt(6.0 / (rows + cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    }
    w.emplace(name, m.cast<T>());
  }
  return w;
}

template <typename T>
void check_weights(const MatcherWeights<T>& w, const MatcherConfig& cfg) {
  const auto layout = weight_layout(cfg);
  if (w.size() != layout.size()) fail(ErrorCode::DimensionMismatch, "matcher weights: tensor count mismatch");
  for (const auto& [name, shape] : layout) {
    auto it = w.find(name);
    if (it == w.end()) fail(ErrorCode::DimensionMismatch, "matcher weights: missing tensor " + name);
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      fail(ErrorCode::DimensionMismatch, "matcher weights: bad shape for " + name);
    }
    if (!it->second.allFinite()) fail(ErrorCode::NonFiniteActivation, "matcher weights: non-finite " + name);
  }
}

/// Per point, per axis, per band b: (sin(2^b pi p), cos(2^b pi p)).
template <typename T = double>
Matrix<T> positional_encode(const PointSet& points, int freqs) {
  Matrix<T> out(points.rows(), 6 * freqs);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int k = 0; k < 3; ++k) {
      for (int b = 0; b < freqs; ++b) {
        const double arg = std::ldexp(1.0, b) * std::numbers::pi * points(i, k);
        out(i, (k * freqs + b) * 2) = static_cast<T>(std::sin(arg));
        out(i, (k * freqs + b) * 2 + 1) = static_cast<T>(std::cos(arg));
      }
    }
  }
  return out;
}

/// Unit-norm descriptors rescaled to unit variance per entry.
template <typename T>
Matrix<T> semantic_input(const FeatureCloud& cloud, const MatcherConfig& cfg) {
  return (cloud.features.template cast<T>() * static_cast<T>(std::sqrt(static_cast<double>(cfg.feature_dim)))).eval();
}

template <typename T>
struct AssignmentOutput {
  Matrix<T> scores;        // A, rescaled cosine in [0, 1]
  Matrix<T> gated_scores;  // A_hat
  Vector<T> sigma_partial;
  Vector<T> sigma_full;
  Matrix<T> fused_partial;
  Matrix<T> fused_full;
};

/// Ground-truth supervision for one partial/full pair.
struct CorrespondenceGT {
  std::vector<std::pair<int, int>> positives;
  std::vector<std::pair<int, int>> negatives;
  std::vector<std::uint8_t> inlier_partial;
  std::vector<std::uint8_t> inlier_full;
};

struct LossBreakdown {
  double partial = 0.0;  // L_P
  double full = 0.0;     // L_Q
  double focal = 0.0;
  double total = 0.0;
  bool empty_positives = false;
  bool empty_negatives = false;
};

// ---------------------------------------------------------------------------
// Losses on plain values

template <typename T>
T clamp_prob(T x, double eps) {
  return std::min(std::max(x, static_cast<T>(eps)), static_cast<T>(1.0 - eps));
}

/// Mean binary cross-entropy of clamped probabilities against {0,1} labels.
template <typename T>
double inlier_bce_loss(const Vector<T>& sigma, const std::vector<std::uint8_t>& labels, double eps) {
  if (static_cast<std::size_t>(sigma.size()) != labels.size()) {
    fail(ErrorCode::LengthMismatch, "inlier_bce_loss: sizes differ");
  }
  if (sigma.size() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const double s = clamp_prob(static_cast<double>(sigma(i)), eps);
    sum += labels[static_cast<std::size_t>(i)] ? -std::log(s) : -std::log(1.0 - s);
  }
  return sum / static_cast<double>(sigma.size());
}

struct FocalResult {
  double value = 0.0;
  bool empty_positives = false;
  bool empty_negatives = false;
};

/// Focal loss on the gated matrix: mean over positives of -(1-x)^g ln x plus
/// mean over negatives of -x^g ln(1-x), entries clamped to [eps, 1-eps].
/// An empty set contributes 0 and is flagged.
template <typename T>
FocalResult focal_assignment_loss(const Matrix<T>& gated, const CorrespondenceGT& gt, double gamma, double eps) {
  FocalResult r;
  r.empty_positives = gt.positives.empty();
  r.empty_negatives = gt.negatives.empty();
  double pos = 0.0, neg = 0.0;
  for (auto [i, j] : gt.positives) {
    const double x = clamp_prob(static_cast<double>(gated(i, j)), eps);
    pos += -std::pow(1.0 - x, gamma) * std::log(x);
  }
  for (auto [i, j] : gt.negatives) {
    const double x = clamp_prob(static_cast<double>(gated(i, j)), eps);
    neg += -std::pow(x, gamma) * std::log(1.0 - x);
  }
  if (!r.empty_positives) r.value += pos / static_cast<double>(gt.positives.size());
  if (!r.empty_negatives) r.value += neg / static_cast<double>(gt.negatives.size());
  return r;
}

/// Elementwise sigma_p[i] * sigma_q[j] * A[i][j].
template <typename T>
Matrix<T> gate_assignment(const Matrix<T>& scores, const Vector<T>& sigma_p, const Vector<T>& sigma_q) {
  if (scores.rows() != sigma_p.size() || scores.cols() != sigma_q.size()) {
    fail(ErrorCode::DimensionMismatch, "gate_assignment: shape mismatch");
  }
  Matrix<T> out = scores;
  out.array().colwise() *= sigma_p.array();
  out.array().rowwise() *= sigma_q.transpose().array();
  return out;
}

template <typename T>
LossBreakdown total_loss(const AssignmentOutput<T>& out, const CorrespondenceGT& gt, const MatcherConfig& cfg) {
  LossBreakdown l;
  if (cfg.inlier_head) {
    l.partial = inlier_bce_loss(out.sigma_partial, gt.inlier_partial, cfg.score_floor);
    l.full = inlier_bce_loss(out.sigma_full, gt.inlier_full, cfg.score_floor);
  }
  const auto f = focal_assignment_loss(out.gated_scores, gt, cfg.gamma, cfg.score_floor);
  l.focal = f.value;
  l.empty_positives = f.empty_positives;
  l.empty_negatives = f.empty_negatives;
  l.total = l.partial + l.full + l.focal;
  return l;
}

// ---------------------------------------------------------------------------
// Network graph

template <typename T>
class MatcherGraph {
 public:
  MatcherGraph(const MatcherWeights<T>& weights, const MatcherConfig& cfg, bool track_params)
      : cfg_(cfg) {
    for (const auto& [name, m] : weights) {
      params_.emplace(name, track_params ? tape_.parameter(m) : tape_.constant(m));
    }
  }

  ad::Tape<T>& tape() { return tape_; }
  const std::map<std::string, ad::Var>& params() const { return params_; }

  struct Outputs {
    ad::Var scores, gated, sigma_p, sigma_q, fused_p, fused_q;
  };

  Outputs build(const FeatureCloud& partial, const FeatureCloud& full) {
    if (partial.dim() != cfg_.feature_dim || full.dim() != cfg_.feature_dim) {
      fail(ErrorCode::DimensionMismatch, "matcher: feature dim " + std::to_string(partial.dim()) + "/" +
                                             std::to_string(full.dim()) + " != config " +
                                             std::to_string(cfg_.feature_dim));
    }
    ad::Var xp = embed(partial);
    ad::Var xq = embed(full);
    for (int b = 0; b < cfg_.num_blocks; ++b) {
      const std::string self = "block" + std::to_string(b) + ".self.";
      const std::string cross = "block" + std::to_string(b) + ".cross.";
      xp = attention_layer(self, xp, xp);
      xq = attention_layer(self, xq, xq);
      const ad::Var np = attention_layer(cross, xp, xq);
      const ad::Var nq = attention_layer(cross, xq, xp);
      xp = np;
      xq = nq;
    }
    Outputs o;
    o.fused_p = xp;
    o.fused_q = xq;
    const ad::Var cosine = tape_.matmul_nt(tape_.normalize_rows(xp), tape_.normalize_rows(xq));
    o.scores = tape_.affine(cosine, T(0.5), T(0.5));
    if (cfg_.inlier_head) {
      o.sigma_p = inlier_head("inlier.partial.", xp);
      o.sigma_q = inlier_head("inlier.full.", xq);
    } else {
      o.sigma_p = tape_.constant(Matrix<T>::Ones(partial.size(), 1));
      o.sigma_q = tape_.constant(Matrix<T>::Ones(full.size(), 1));
    }
    o.gated = tape_.gate(o.scores, o.sigma_p, o.sigma_q);
    if (!tape_.value(o.gated).allFinite()) fail(ErrorCode::NonFiniteActivation, "matcher: non-finite assignment");
    return o;
  }

  /// Appends the total training loss as a 1x1 node.
  ad::Var loss(const Outputs& o, const CorrespondenceGT& gt, LossBreakdown* breakdown = nullptr) {
    const double eps = cfg_.score_floor;
    const double gamma = cfg_.gamma;
    const Matrix<T>& gated = tape_.value(o.gated);
    const Matrix<T>& sp = tape_.value(o.sigma_p);
    const Matrix<T>& sq = tape_.value(o.sigma_q);
    if (gt.inlier_partial.size() != static_cast<std::size_t>(sp.rows()) ||
        gt.inlier_full.size() != static_cast<std::size_t>(sq.rows())) {
      fail(ErrorCode::LengthMismatch, "matcher loss: label sizes do not match clouds");
    }

    LossBreakdown lb;
    Matrix<T> d_gated = Matrix<T>::Zero(gated.rows(), gated.cols());
    Matrix<T> d_sp = Matrix<T>::Zero(sp.rows(), 1);
    Matrix<T> d_sq = Matrix<T>::Zero(sq.rows(), 1);

    auto bce = [&](const Matrix<T>& sigma, const std::vector<std::uint8_t>& labels, Matrix<T>& grad) {
      const double inv = 1.0 / static_cast<double>(sigma.rows());
      double sum = 0.0;
      for (Eigen::Index i = 0; i < sigma.rows(); ++i) {
        const double raw = static_cast<double>(sigma(i, 0));
        const double s = clamp_prob(raw, eps);
        const bool clamped = s != raw;
        if (labels[static_cast<std::size_t>(i)]) {
          sum -= std::log(s);
          if (!clamped) grad(i, 0) = static_cast<T>(-inv / s);
        } else {
          sum -= std::log(1.0 - s);
          if (!clamped) grad(i, 0) = static_cast<T>(inv / (1.0 - s));
        }
      }
      return sum * inv;
    };
    if (cfg_.inlier_head) {
      lb.partial = bce(sp, gt.inlier_partial, d_sp);
      lb.full = bce(sq, gt.inlier_full, d_sq);
    }

    lb.empty_positives = gt.positives.empty();
    lb.empty_negatives = gt.negatives.empty();
    if (!gt.positives.empty()) {
      const double inv = 1.0 / static_cast<double>(gt.positives.size());
      double sum = 0.0;
      for (auto [i, j] : gt.positives) {
        const double raw = static_cast<double>(gated(i, j));
        const double x = clamp_prob(raw, eps);
        const double om = 1.0 - x;
        sum += -std::pow(om, gamma) * std::log(x);
        if (x == raw) {
          const double dg = (gamma > 0 ? gamma * std::pow(om, gamma - 1.0) * std::log(x) : 0.0) - std::pow(om, gamma) / x;
          d_gated(i, j) += static_cast<T>(inv * dg);
        }
      }
      lb.focal += sum * inv;
    }
    if (!gt.negatives.empty()) {
      const double inv = 1.0 / static_cast<double>(gt.negatives.size());
      double sum = 0.0;
      for (auto [i, j] : gt.negatives) {
        const double raw = static_cast<double>(gated(i, j));
        const double x = clamp_prob(raw, eps);
        sum += -std::pow(x, gamma) * std::log(1.0 - x);
        if (x == raw) {
          const double dg = (gamma > 0 ? -gamma * std::pow(x, gamma - 1.0) * std::log(1.0 - x) : 0.0) +
                            std::pow(x, gamma) / (1.0 - x);
          d_gated(i, j) += static_cast<T>(inv * dg);
        }
      }
      lb.focal += sum * inv;
    }
    lb.total = lb.partial + lb.full + lb.focal;
    if (!std::isfinite(lb.total)) fail(ErrorCode::NonFiniteLoss, "matcher loss is not finite");
    if (breakdown) *breakdown = lb;

    Matrix<T> value(1, 1);
    value(0, 0) = static_cast<T>(lb.total);
    return tape_.custom(std::move(value), {o.gated, o.sigma_p, o.sigma_q},
                        [d_gated = std::move(d_gated), d_sp = std::move(d_sp),
                         d_sq = std::move(d_sq)](const Matrix<T>& g) {
                          const T s = g(0, 0);
                          return std::vector<Matrix<T>>{d_gated * s, d_sp * s, d_sq * s};
                        });
  }

 private:
  ad::Var p(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::DimensionMismatch, "matcher: missing weight " + name);
    return it->second;
  }

  ad::Var linear(ad::Var x, const std::string& prefix) {
    return tape_.add_row(tape_.matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
  }

  ad::Var embed(const FeatureCloud& cloud) {
    const ad::Var sem = tape_.constant(semantic_input<T>(cloud, cfg_));
    const ad::Var pos = tape_.constant(positional_encode<T>(cloud.points, cfg_.pe_freqs));
    const ad::Var s = linear(sem, "embed.semantic");
    const ad::Var g = linear(pos, "embed.position");
    return cfg_.combine == EmbedCombine::Add ? tape_.add(s, g) : tape_.hcat({s, g});
  }

  /// Post-norm transformer layer: x' = LN(x + MHA(x, src)); out = LN(x' + FFN(x')).
  ad::Var attention_layer(const std::string& prefix, ad::Var x, ad::Var src) {
    const int d = cfg_.model_dim;
    const int heads = cfg_.num_heads;
    const int dh = d / heads;
    const ad::Var q = tape_.matmul(x, p(prefix + "query"));
    const ad::Var k = tape_.matmul(src, p(prefix + "key"));
    const ad::Var v = tape_.matmul(src, p(prefix + "value"));
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<ad::Var> per_head;
    per_head.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const ad::Var qh = tape_.cols(q, h * dh, dh);
      const ad::Var kh = tape_.cols(k, h * dh, dh);
      const ad::Var vh = tape_.cols(v, h * dh, dh);
      const ad::Var attn = tape_.softmax_rows(tape_.affine(tape_.matmul_nt(qh, kh), scale, T(0)));
      per_head.push_back(tape_.matmul(attn, vh));
    }
    const ad::Var msg = tape_.matmul(heads == 1 ? per_head.front() : tape_.hcat(per_head), p(prefix + "output"));
    const ad::Var h1 = tape_.layer_norm(tape_.add(x, msg), p(prefix + "norm1.scale"), p(prefix + "norm1.bias"));
    const ad::Var ff = linear(tape_.gelu(linear(h1, prefix + "ffn.in")), prefix + "ffn.out");
    return tape_.layer_norm(tape_.add(h1, ff), p(prefix + "norm2.scale"), p(prefix + "norm2.bias"));
  }

  ad::Var inlier_head(const std::string& prefix, ad::Var x) {
    return tape_.sigmoid(tape_.add_row(tape_.matmul(x, p(prefix + "weight")), p(prefix + "bias")));
  }

  MatcherConfig cfg_;
  ad::Tape<T> tape_;
  std::map<std::string, ad::Var> params_;
};

/// Embedding of a normalized cloud into model_dim (positional + semantic).
template <typename T>
Matrix<T> embed_inputs(const FeatureCloud& cloud, const MatcherWeights<T>& weights, const MatcherConfig& cfg) {
  if (cloud.dim() != cfg.feature_dim) fail(ErrorCode::DimensionMismatch, "embed_inputs: feature dim mismatch");
  const Matrix<T> sem = semantic_input<T>(cloud, cfg);
  const Matrix<T> pos = positional_encode<T>(cloud.points, cfg.pe_freqs);
  Matrix<T> s = sem * weights.at("embed.semantic.weight");
  s.rowwise() += weights.at("embed.semantic.bias").row(0);
  Matrix<T> g = pos * weights.at("embed.position.weight");
  g.rowwise() += weights.at("embed.position.bias").row(0);
  if (cfg.combine == EmbedCombine::Add) return s + g;
  Matrix<T> out(s.rows(), s.cols() + g.cols());
  out << s, g;
  return out;
}

/// Runs the network on normalized clouds.
template <typename T>
AssignmentOutput<T> forward(const FeatureCloud& partial, const FeatureCloud& full, const MatcherWeights<T>& weights,
                            const MatcherConfig& cfg) {
  cfg.validate();
  MatcherGraph<T> graph(weights, cfg, false);
  const auto o = graph.build(partial, full);
  auto& t = graph.tape();
  AssignmentOutput<T> out;
  out.scores = t.value(o.scores);
  out.gated_scores = t.value(o.gated);
  out.sigma_partial = t.value(o.sigma_p).col(0);
  out.sigma_full = t.value(o.sigma_q).col(0);
  out.fused_partial = t.value(o.fused_p);
  out.fused_full = t.value(o.fused_q);
  return out;
}

template <typename T>
struct GradientResult {
  MatcherWeights<T> gradients;
  LossBreakdown loss;
};

/// Reverse-mode gradients of the total loss for every weight tensor.
template <typename T>
GradientResult<T> param_gradients(const FeatureCloud& partial, const FeatureCloud& full, const CorrespondenceGT& gt,
                                  const MatcherWeights<T>& weights, const MatcherConfig& cfg) {
  cfg.validate();
  MatcherGraph<T> graph(weights, cfg, true);
  const auto o = graph.build(partial, full);
  GradientResult<T> r;
  const ad::Var loss = graph.loss(o, gt, &r.loss);
  auto& t = graph.tape();
  t.backward(loss);
  for (const auto& [name, var] : graph.params()) {
    Matrix<T> g = t.grad(var);
    if (g.size() == 0) g = Matrix<T>::Zero(t.value(var).rows(), t.value(var).cols());
    if (!g.allFinite()) fail(ErrorCode::NonFiniteGradient, "non-finite gradient for " + name);
    r.gradients.emplace(name, std::move(g));
  }
  return r;
}

/// Raw-feature matching without the network: A = (cos + 1) / 2 and unit
/// inlier probabilities.
template <typename T = float>
AssignmentOutput<T> raw_feature_assignment(const FeatureCloud& partial, const FeatureCloud& full) {
  if (partial.dim() != full.dim()) fail(ErrorCode::DimensionMismatch, "raw matching: feature dims differ");
  auto unit = [](const FeatureMatrix& f) {
    Matrix<T> m = f.cast<T>();
    const Vector<T> n = (m.rowwise().squaredNorm().array() + T(1e-16)).sqrt().matrix();
    m.array().colwise() /= n.array();
    return m;
  };
  AssignmentOutput<T> out;
  out.fused_partial = unit(partial.features);
  out.fused_full = unit(full.features);
  out.scores = ((out.fused_partial * out.fused_full.transpose()).array() * T(0.5) + T(0.5)).matrix();
  out.sigma_partial = Vector<T>::Ones(partial.size());
  out.sigma_full = Vector<T>::Ones(full.size());
  out.gated_scores = out.scores;
  return out;
}

}  // namespace catpose
