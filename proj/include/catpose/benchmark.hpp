#pragma once

// Synthetic train/test benchmark over toy categories: builds datasets, trains
// one matcher per category, renders held-out scenes, infers, and scores.

#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "catpose/eval.hpp"
#include "catpose/solver.hpp"
#include "catpose/trainer.hpp"

namespace catpose {

struct BenchmarkSpec {
  std::vector<ToyKind> categories = {ToyKind::Lathe, ToyKind::CupWithHandle};
  int train_instances = 5;
  /// Held-out instances per category.
  int test_instances = 10;
  int views_per_test = 5;
  int n_views = 40;
  std::uint64_t seed = 7;
  OracleParams oracle;
  TrainConfig train;
  InferenceParams inference;
  ThresholdSet thresholds;
  /// Success criterion for `accuracy`: rotation and relative translation error.
  double success_deg = 10.0;
  double success_translation_fraction = 0.05;
  int jobs = 1;
};

inline std::uint64_t instance_seed(std::uint64_t seed, ToyKind kind, int split, int index) {
  return mix_seed(seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(split),
                  static_cast<std::uint64_t>(index));
}

/// Dataset for one category: reference (split 0), training instances (split 1).
inline CategoryDataset make_category_dataset(const BenchmarkSpec& spec, ToyKind kind, int train_instances) {
  CategoryDataset ds;
  ds.reference_seed = instance_seed(spec.seed, kind, 0, 0);
  ds.reference = generate_toy_category(kind, ds.reference_seed);
  for (int k = 0; k < train_instances; ++k) {
    ds.instance_seeds.push_back(instance_seed(spec.seed, kind, 1, k));
    ds.instances.push_back(generate_toy_category(kind, ds.instance_seeds.back()));
  }
  ds.n_views = spec.n_views;
  ds.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(kind), 0xDA7Au);
  ds.oracle = spec.oracle;
  return ds;
}

struct CaseResult {
  std::string category;
  ItemErrors errors;
  double relative_translation = 0.0;
  bool solved = false;
  bool symmetric = false;
  InferenceDiagnostics diagnostics;
  std::string failure;
};

struct BenchmarkResult {
  std::vector<CaseResult> cases;
  std::map<std::string, double> pooled;
  std::map<std::string, std::map<std::string, double>> per_category;
  /// Fraction of cases within success_deg and success_translation_fraction.
  double accuracy = 0.0;
  /// Fraction of cases with IoU >= 0.5.
  double iou50 = 0.0;
  std::map<std::string, double> category_accuracy;
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

struct TrainedCategory {
  ReferenceCloud reference;
  MatcherWeights<float> weights;
  MatcherConfig config;
};

inline TrainedCategory train_category(const BenchmarkSpec& spec, ToyKind kind, const TrainConfig& cfg,
                                      int train_instances) {
  const CategoryDataset ds = make_category_dataset(spec, kind, train_instances);
  TrainedCategory tc;
  tc.config = effective_matcher_config(cfg);
  TrainConfig c = cfg;
  c.jobs = spec.jobs;
  const PreparedDataset prep = prepare_dataset(ds, c);
  tc.reference = prep.reference;
  if (cfg.epochs > 0 && !cfg.ablation.no_fusion) {
    const TrainResult r = train(ds, prep, c);
    if (r.aborted) fail(ErrorCode::NonFiniteLoss, "benchmark training aborted: " + r.abort_reason);
    tc.weights = r.weights;
  } else {
    tc.weights = init_weights<float>(tc.config, cfg.seed);
  }
  return tc;
}

/// Scores one trained category on its held-out scenes (split 2).
inline std::vector<CaseResult> test_category(const BenchmarkSpec& spec, ToyKind kind, const TrainedCategory& tc,
                                             const Ablation& ablation) {
  const FeatureOracle oracle(to_string(kind), spec.oracle.dim);
  const ReferenceInput ref{tc.reference.cloud, tc.reference.extents};
  const int n_cases = spec.test_instances * spec.views_per_test;
  std::vector<CaseResult> out(static_cast<std::size_t>(n_cases));
  std::vector<ReferenceModel> models(static_cast<std::size_t>(spec.test_instances));
  std::vector<FeatureMatrix> feats(models.size());
  parallel_for(models.size(), spec.jobs, [&](std::size_t k) {
    const std::uint64_t s = instance_seed(spec.seed, kind, 2, static_cast<int>(k));
    models[k] = generate_toy_category(kind, s);
    feats[k] = model_features(oracle, models[k], s, spec.oracle.noise_amp);
  });
  parallel_for(out.size(), spec.jobs, [&](std::size_t idx) {
    const std::size_t inst = idx / static_cast<std::size_t>(spec.views_per_test);
    const std::uint64_t scene_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(kind), 0x7E57u, idx);
    const SceneSample scene = simulate_scene(models[inst], feats[inst], spec.train.scene, scene_seed,
                                             spec.train.handle_min_points);
    CaseResult& c = out[idx];
    c.category = to_string(kind);
    c.symmetric = scene.symmetry.is_axis();
    const OrientedBox3D gt_box{scene.gt_pose, models[inst].extents};
    const double diameter = scene.gt_pose.scale * models[inst].diameter();
    InferenceParams ip = spec.inference;
    ip.raw_features = ablation.no_fusion;
    ip.seed = mix_seed(scene_seed, 0x1F);
    try {
      const InferenceResult r = infer(scene.observation, ref, tc.weights, tc.config, ip);
      c.solved = true;
      c.diagnostics = r.diagnostics;
      c.errors = item_errors(EvalItem{r.box, gt_box, scene.symmetry, c.category}, IouParams{});
      c.relative_translation = c.errors.translation_m / diameter;
    } catch (const Error& e) {
      const ErrorCode code = e.code();
      if (code != ErrorCode::NoMatches && code != ErrorCode::NoConsensus && code != ErrorCode::DegenerateInput &&
          code != ErrorCode::EmptyObservation) {
        throw;
      }
      const double inf = std::numeric_limits<double>::infinity();
      c.failure = e.what();
      c.errors = {inf, inf, 0.0};
      c.relative_translation = inf;
    }
  });
  return out;
}

inline double success_rate(const std::vector<CaseResult>& cases, const BenchmarkSpec& spec) {
  if (cases.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& c : cases) {
    ok += (c.errors.rotation_deg <= spec.success_deg && c.relative_translation <= spec.success_translation_fraction);
  }
  return static_cast<double>(ok) / static_cast<double>(cases.size());
}

inline BenchmarkResult summarize_cases(std::vector<CaseResult> cases, const BenchmarkSpec& spec) {
  BenchmarkResult r;
  r.cases = std::move(cases);
  std::vector<ItemErrors> all;
  std::map<std::string, std::vector<ItemErrors>> groups;
  std::map<std::string, std::vector<CaseResult>> by_cat;
  std::size_t iou_ok = 0;
  for (const auto& c : r.cases) {
    all.push_back(c.errors);
    groups[c.category].push_back(c.errors);
    by_cat[c.category].push_back(c);
    iou_ok += c.errors.iou >= 0.5;
  }
  r.pooled = summarize(all, spec.thresholds);
  for (const auto& [cat, errs] : groups) r.per_category[cat] = summarize(errs, spec.thresholds);
  for (const auto& [cat, cs] : by_cat) r.category_accuracy[cat] = success_rate(cs, spec);
  r.accuracy = success_rate(r.cases, spec);
  r.iou50 = r.cases.empty() ? 0.0 : static_cast<double>(iou_ok) / static_cast<double>(r.cases.size());
  return r;
}

/// Trains (unless the ablation skips the network) and tests every category.
inline BenchmarkResult run_benchmark(const BenchmarkSpec& spec, const Ablation& ablation = {},
                                     int train_instances = -1) {
  TrainConfig cfg = spec.train;
  cfg.ablation = ablation;
  const int n_train = train_instances > 0 ? train_instances : spec.train_instances;
  std::vector<CaseResult> cases;
  double train_s = 0.0, test_s = 0.0;
  for (ToyKind kind : spec.categories) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainedCategory tc = train_category(spec, kind, cfg, n_train);
    const auto t1 = std::chrono::steady_clock::now();
    auto part = test_category(spec, kind, tc, ablation);
    const auto t2 = std::chrono::steady_clock::now();
    train_s += std::chrono::duration<double>(t1 - t0).count();
    test_s += std::chrono::duration<double>(t2 - t1).count();
    cases.insert(cases.end(), part.begin(), part.end());
  }
  BenchmarkResult r = summarize_cases(std::move(cases), spec);
  r.train_seconds = train_s;
  r.test_seconds = test_s;
  return r;
}

}  // namespace catpose
