#pragma once

// Batch command-line frontend: lift, synth, train, infer, eval, ablate.
// Every subcommand reads one JSON config (plus --set overrides), writes its
// outputs under --out, and echoes the effective config there.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "catpose/benchmark.hpp"
#include "catpose/error.hpp"
#include "catpose/eval.hpp"
#include "catpose/io.hpp"
#include "catpose/solver.hpp"
#include "catpose/trainer.hpp"

namespace catpose::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline json default_config() {
  return json::parse(R"({
    "seed": 7,
    "category": "lathe",
    "synth": {"train_instances": 5, "test_instances": 10, "views_per_test": 5, "n_views": 40},
    "oracle": {"D": 32, "noise_amp": 0.1},
    "scene": {"width": 128, "height": 128, "focal": 224.0, "min_scale": 0.7, "max_scale": 1.3,
              "min_depth_factor": 2.2, "max_depth_factor": 2.8, "max_center_offset": 0.12},
    "train": {"learning_rate": 1e-4, "epochs": 100, "corr_threshold": 0.05, "neg_threshold": 0.10,
              "partial_points": 128, "full_points": 128, "samples_per_instance": 0,
              "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "handle_min_points": 10,
              "ablation": {"no_fusion": false, "no_inlier_head": false, "no_symmetry": false}},
    "matcher": {"model_dim": 64, "num_blocks": 2, "num_heads": 4, "pe_freqs": 6, "gamma": 2.0,
                "score_floor": 1e-6, "combine": "add"},
    "inference": {"match_threshold": 0.4, "mutual_nearest": true, "ransac_iterations": 2048,
                  "inlier_fraction": 0.05, "min_inliers": 5, "max_points": 128},
    "eval": {"iou": [0.25, 0.5], "deg_cm": [[5, 5], [10, 5], [15, 5]], "iou_samples": 100000,
             "curve_max_deg": 60, "curve_max_cm": 20, "curve_steps": 61},
    "lift": {"model": null, "manifest": null, "points": null, "category": null, "symmetry": null},
    "paths": {"dataset": null, "model_dir": null, "manifest": null, "predictions": null, "ground_truth": null},
    "ablate": {"categories": ["lathe", "cup_with_handle"], "sweep": [2, 5, 10]}
  })");
}

/// `key.sub=value`; value parsed as JSON when possible, else taken as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::Usage, "--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->is_object()) fail(ErrorCode::Usage, "--set " + key + ": '" + parts[k] + "' is not an object");
    node = &(*node)[parts[k]];
  }
  (*node)[parts.back()] = value;
}

inline json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!path.empty()) cfg.merge_patch(io::read_json(path));
  for (const auto& o : overrides) apply_override(cfg, o);
  if (!cfg.contains("seed") || !cfg["seed"].is_number_integer()) fail(ErrorCode::Usage, "config needs an integer seed");
  return cfg;
}

inline fs::path config_path(const json& cfg, const char* section, const char* key) {
  const json& v = cfg.at(section).at(key);
  if (v.is_null()) fail(ErrorCode::Usage, std::string("config needs ") + section + "." + key);
  return v.get<std::string>();
}

inline MatcherConfig matcher_config(const json& cfg, int feature_dim) {
  const json& m = cfg.at("matcher");
  MatcherConfig mc;
  mc.feature_dim = feature_dim;
  mc.model_dim = m.at("model_dim").get<int>();
  mc.num_blocks = m.at("num_blocks").get<int>();
  mc.num_heads = m.at("num_heads").get<int>();
  mc.pe_freqs = m.at("pe_freqs").get<int>();
  mc.gamma = m.at("gamma").get<double>();
  mc.score_floor = m.at("score_floor").get<double>();
  const std::string combine = m.at("combine").get<std::string>();
  if (combine != "add" && combine != "concat") fail(ErrorCode::Usage, "matcher.combine must be add or concat");
  mc.combine = combine == "add" ? EmbedCombine::Add : EmbedCombine::Concat;
  return mc;
}

inline json matcher_to_json(const MatcherConfig& mc) {
  return {{"feature_dim", mc.feature_dim}, {"model_dim", mc.model_dim}, {"num_blocks", mc.num_blocks},
          {"num_heads", mc.num_heads},     {"pe_freqs", mc.pe_freqs},   {"gamma", mc.gamma},
          {"score_floor", mc.score_floor}, {"combine", mc.combine == EmbedCombine::Add ? "add" : "concat"},
          {"inlier_head", mc.inlier_head}};
}

inline MatcherConfig matcher_from_json(const json& j) {
  MatcherConfig mc;
  mc.feature_dim = j.at("feature_dim").get<int>();
  mc.model_dim = j.at("model_dim").get<int>();
  mc.num_blocks = j.at("num_blocks").get<int>();
  mc.num_heads = j.at("num_heads").get<int>();
  mc.pe_freqs = j.at("pe_freqs").get<int>();
  mc.gamma = j.at("gamma").get<double>();
  mc.score_floor = j.at("score_floor").get<double>();
  mc.combine = j.at("combine").get<std::string>() == "concat" ? EmbedCombine::Concat : EmbedCombine::Add;
  mc.inlier_head = j.at("inlier_head").get<bool>();
  mc.validate();
  return mc;
}

inline SceneParams scene_params(const json& cfg) {
  const json& s = cfg.at("scene");
  SceneParams sp;
  sp.width = s.at("width").get<int>();
  sp.height = s.at("height").get<int>();
  sp.focal = s.at("focal").get<double>();
  sp.min_scale = s.at("min_scale").get<double>();
  sp.max_scale = s.at("max_scale").get<double>();
  sp.min_depth_factor = s.at("min_depth_factor").get<double>();
  sp.max_depth_factor = s.at("max_depth_factor").get<double>();
  sp.max_center_offset = s.at("max_center_offset").get<double>();
  return sp;
}

inline TrainConfig train_config(const json& cfg, int jobs) {
  const json& t = cfg.at("train");
  TrainConfig tc;
  tc.learning_rate = t.at("learning_rate").get<double>();
  tc.epochs = t.at("epochs").get<int>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.corr_threshold = t.at("corr_threshold").get<double>();
  tc.neg_threshold = t.at("neg_threshold").get<double>();
  tc.partial_points = t.at("partial_points").get<int>();
  tc.full_points = t.at("full_points").get<int>();
  tc.samples_per_instance = t.at("samples_per_instance").get<int>();
  tc.beta1 = t.at("beta1").get<double>();
  tc.beta2 = t.at("beta2").get<double>();
  tc.adam_eps = t.at("eps").get<double>();
  tc.handle_min_points = t.at("handle_min_points").get<int>();
  const json& a = t.at("ablation");
  tc.ablation.no_fusion = a.at("no_fusion").get<bool>();
  tc.ablation.no_inlier_head = a.at("no_inlier_head").get<bool>();
  tc.ablation.no_symmetry = a.at("no_symmetry").get<bool>();
  tc.jobs = jobs;
  tc.matcher = matcher_config(cfg, cfg.at("oracle").at("D").get<int>());
  tc.scene = scene_params(cfg);
  tc.validate();
  return tc;
}

inline InferenceParams inference_params(const json& cfg) {
  const json& i = cfg.at("inference");
  InferenceParams ip;
  ip.match_threshold = i.at("match_threshold").get<double>();
  ip.mutual_nearest = i.at("mutual_nearest").get<bool>();
  ip.ransac.iterations = i.at("ransac_iterations").get<int>();
  ip.ransac.min_inliers = i.at("min_inliers").get<int>();
  ip.inlier_fraction = i.at("inlier_fraction").get<double>();
  ip.max_points = i.at("max_points").get<int>();
  ip.seed = cfg.at("seed").get<std::uint64_t>();
  ip.validate();
  return ip;
}

inline ThresholdSet thresholds(const json& cfg) {
  ThresholdSet th;
  th.iou = cfg.at("eval").at("iou").get<std::vector<double>>();
  th.deg_cm.clear();
  for (const auto& p : cfg.at("eval").at("deg_cm")) th.deg_cm.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return th;
}

inline BenchmarkSpec benchmark_spec(const json& cfg, int jobs) {
  BenchmarkSpec spec;
  const json& s = cfg.at("synth");
  spec.train_instances = s.at("train_instances").get<int>();
  spec.test_instances = s.at("test_instances").get<int>();
  spec.views_per_test = s.at("views_per_test").get<int>();
  spec.n_views = s.at("n_views").get<int>();
  spec.seed = cfg.at("seed").get<std::uint64_t>();
  spec.oracle.dim = cfg.at("oracle").at("D").get<int>();
  spec.oracle.noise_amp = cfg.at("oracle").at("noise_amp").get<double>();
  spec.train = train_config(cfg, jobs);
  spec.inference = inference_params(cfg);
  spec.thresholds = thresholds(cfg);
  spec.jobs = jobs;
  spec.categories.clear();
  for (const auto& c : cfg.at("ablate").at("categories")) spec.categories.push_back(toy_kind_from_string(c.get<std::string>()));
  return spec;
}

struct Context {
  json config;
  fs::path out;
  int jobs = 1;
};

inline void echo_config(const Context& ctx) {
  fs::create_directories(ctx.out);
  io::write_json(ctx.out / "config.json", ctx.config);
}

// ---------------------------------------------------------------------------
// Dataset spec files

inline json dataset_to_json(const CategoryDataset& ds, const std::vector<std::string>& instance_files) {
  json seeds = json::array();
  for (auto s : ds.instance_seeds) seeds.push_back(s);
  return {{"category", ds.reference.category},
          {"reference_model", "models/reference.ply"},
          {"reference_seed", ds.reference_seed},
          {"instance_models", instance_files},
          {"instance_seeds", seeds},
          {"n_views", ds.n_views},
          {"seed", ds.seed},
          {"oracle", {{"D", ds.oracle.dim}, {"noise_amp", ds.oracle.noise_amp}}}};
}

/// Reads {category, reference_model, instance_models[], n_views, seed, oracle}.
/// Instance seeds default to values derived from the dataset seed.
inline CategoryDataset load_dataset(const fs::path& path) {
  const json j = io::read_json(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  CategoryDataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.n_views = j.at("n_views").get<int>();
  ds.oracle.dim = j.at("oracle").at("D").get<int>();
  ds.oracle.noise_amp = j.at("oracle").at("noise_amp").get<double>();
  const std::string category = j.at("category").get<std::string>();
  auto finish = [&](ReferenceModel m) {
    m.category = category;
    if (j.contains("symmetry")) {
      m.symmetry = io::symmetry_from_json(j["symmetry"]);
    } else {
      m.symmetry = toy_symmetry(toy_kind_from_string(category));
    }
    if (!m.has_part_mask() || std::none_of(m.part_mask.begin(), m.part_mask.end(), [](auto v) { return v != 0; })) {
      m.part_mask.clear();
    }
    return m;
  };
  ds.reference = finish(io::read_ply(resolve(j.at("reference_model").get<std::string>())));
  ds.reference_seed = j.value("reference_seed", mix_seed(ds.seed, 0));
  const auto files = j.at("instance_models").get<std::vector<std::string>>();
  for (std::size_t k = 0; k < files.size(); ++k) {
    ds.instances.push_back(finish(io::read_ply(resolve(files[k]))));
    ds.instance_seeds.push_back(j.contains("instance_seeds") ? j["instance_seeds"].at(k).get<std::uint64_t>()
                                                             : mix_seed(ds.seed, k + 1));
  }
  return ds;
}

inline json reference_meta(const std::string& category, const Vec3& extents, const SymmetryDescriptor& sym) {
  return {{"category", category}, {"extents", io::to_json(extents)}, {"symmetry", io::to_json(sym)}};
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_synth(const Context& ctx) {
  const json& cfg = ctx.config;
  const ToyKind kind = toy_kind_from_string(cfg.at("category").get<std::string>());
  BenchmarkSpec spec = benchmark_spec(cfg, ctx.jobs);
  const CategoryDataset ds = make_category_dataset(spec, kind, spec.train_instances);
  const fs::path models = ctx.out / "models";
  fs::create_directories(models);
  io::write_ply(models / "reference.ply", ds.reference);
  std::vector<std::string> files;
  for (std::size_t k = 0; k < ds.instances.size(); ++k) {
    std::ostringstream name;
    name << "models/train_" << std::setw(2) << std::setfill('0') << k << ".ply";
    io::write_ply(ctx.out / name.str(), ds.instances[k]);
    files.push_back(name.str());
  }
  io::write_json(ctx.out / "dataset.json", dataset_to_json(ds, files));

  // Oracle-feature renders of the reference (input for `lift`).
  const FeatureOracle oracle(ds.reference.category, ds.oracle.dim);
  const FeatureMatrix ref_features = model_features(oracle, ds.reference, ds.reference_seed, ds.oracle.noise_amp);
  ViewSamplingParams vp;
  vp.n_views = ds.n_views;
  vp.width = spec.train.scene.width;
  vp.height = spec.train.scene.height;
  vp.seed = mix_seed(ds.seed, 0x11F7u);
  const auto cams = sample_camera_poses(ds.reference, vp);
  const fs::path views = ctx.out / "views";
  fs::create_directories(views);
  std::vector<io::ManifestEntry> view_entries(cams.size());
  parallel_for(cams.size(), ctx.jobs, [&](std::size_t k) {
    const Observation obs = render_observation(ds.reference.points, ref_features, cams[k]);
    std::ostringstream id;
    id << "ref_" << std::setw(3) << std::setfill('0') << k;
    io::write_observation(views, id.str(), obs, &view_entries[k]);
  });
  io::write_manifest(views / "manifest.json", view_entries);

  // Held-out test scenes with ground truth.
  const fs::path test = ctx.out / "test";
  const fs::path gt = ctx.out / "gt";
  fs::create_directories(test);
  fs::create_directories(gt);
  const int n_cases = spec.test_instances * spec.views_per_test;
  std::vector<ReferenceModel> test_models(static_cast<std::size_t>(spec.test_instances));
  std::vector<FeatureMatrix> test_features(test_models.size());
  parallel_for(test_models.size(), ctx.jobs, [&](std::size_t k) {
    const std::uint64_t s = instance_seed(spec.seed, kind, 2, static_cast<int>(k));
    test_models[k] = generate_toy_category(kind, s);
    test_features[k] = model_features(oracle, test_models[k], s, ds.oracle.noise_amp);
  });
  std::vector<io::ManifestEntry> entries(static_cast<std::size_t>(n_cases));
  parallel_for(entries.size(), ctx.jobs, [&](std::size_t idx) {
    const std::size_t inst = idx / static_cast<std::size_t>(spec.views_per_test);
    const std::uint64_t scene_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(kind), 0x7E57u, idx);
    const SceneSample scene = simulate_scene(test_models[inst], test_features[inst], spec.train.scene, scene_seed,
                                             spec.train.handle_min_points);
    std::ostringstream id;
    id << to_string(kind) << '_' << std::setw(2) << std::setfill('0') << inst << "_v"
       << idx % static_cast<std::size_t>(spec.views_per_test);
    io::write_observation(test, id.str(), scene.observation, &entries[idx]);
    io::write_json(gt / (id.str() + ".json"), {{"pose", io::to_json(scene.gt_pose)},
                                               {"extents", io::to_json(test_models[inst].extents)},
                                               {"symmetry", io::to_json(scene.symmetry)},
                                               {"category", to_string(kind)}});
  });
  io::write_manifest(test / "manifest.json", entries);
  std::cout << "synth: " << ds.instances.size() << " training models, " << cams.size() << " reference views, "
            << n_cases << " test scenes -> " << ctx.out.string() << "\n";
  return 0;
}

inline int cmd_lift(const Context& ctx) {
  const json& cfg = ctx.config;
  ReferenceModel model = io::read_ply(config_path(cfg, "lift", "model"));
  const auto entries = io::read_manifest(config_path(cfg, "lift", "manifest"));
  std::vector<LiftView> views(entries.size());
  parallel_for(entries.size(), ctx.jobs, [&](std::size_t k) {
    views[k] = {io::read_camera(entries[k].camera_file), io::read_feature_map(entries[k].feature_file)};
  });
  const FeatureCloud lifted = lift_features(model, views);
  const json& lc = cfg.at("lift");
  const int points = lc.at("points").is_null() ? cfg.at("train").at("full_points").get<int>() : lc.at("points").get<int>();
  const FeatureCloud cloud = lifted.subset(farthest_point_sample(lifted.points, points, cfg.at("seed").get<std::uint64_t>()));
  io::write_feature_cloud(ctx.out / "reference.gsfc", cloud);
  const std::string category = lc.at("category").is_null() ? cfg.at("category").get<std::string>()
                                                           : lc.at("category").get<std::string>();
  io::write_json(ctx.out / "reference.json", reference_meta(category, model.extents, io::symmetry_from_json(lc.at("symmetry"))));
  std::cout << "lift: " << lifted.size() << " of " << model.points.rows() << " points seen, kept " << cloud.size()
            << " -> " << (ctx.out / "reference.gsfc").string() << "\n";
  return 0;
}

inline int cmd_train(const Context& ctx) {
  const json& cfg = ctx.config;
  const CategoryDataset ds = load_dataset(config_path(cfg, "paths", "dataset"));
  TrainConfig tc = train_config(cfg, ctx.jobs);
  tc.matcher.feature_dim = ds.oracle.dim;
  const PreparedDataset prep = prepare_dataset(ds, tc);
  io::write_feature_cloud(ctx.out / "reference.gsfc", prep.reference.cloud);
  io::write_json(ctx.out / "reference.json",
                 reference_meta(ds.reference.category, prep.reference.extents, ds.reference.symmetry));
  io::write_json(ctx.out / "matcher.json", matcher_to_json(effective_matcher_config(tc)));
  TrainHooks hooks;
  hooks.checkpoint_dir = ctx.out;
  hooks.on_epoch = [&](int epoch, double loss, const MatcherWeights<float>&) {
    std::cerr << "train: epoch " << epoch + 1 << "/" << tc.epochs << " mean loss " << loss << "\n";
  };
  MatcherWeights<float> weights;
  if (tc.ablation.no_fusion || tc.epochs == 0) {
    weights = init_weights<float>(effective_matcher_config(tc), tc.seed);
    io::write_text(ctx.out / "loss.csv", loss_history_csv({}));
  } else {
    const TrainResult r = train(ds, prep, tc, hooks);
    weights = r.weights;
    if (r.aborted) {
      io::write_weights(ctx.out / "weights.gsmw", weights);
      fail(ErrorCode::NonFiniteLoss, "training aborted, last good checkpoint kept: " + r.abort_reason);
    }
  }
  io::write_weights(ctx.out / "weights.gsmw", weights);
  std::cout << "train: wrote " << (ctx.out / "weights.gsmw").string() << "\n";
  return 0;
}

struct LoadedModel {
  ReferenceInput reference;
  SymmetryDescriptor symmetry;
  std::string category;
  MatcherWeights<float> weights;
  MatcherConfig config;
};

inline LoadedModel load_model(const fs::path& dir) {
  LoadedModel m;
  m.reference.cloud = io::read_feature_cloud(dir / "reference.gsfc");
  const json meta = io::read_json(dir / "reference.json");
  m.reference.extents = io::vec3_from_json(meta.at("extents"));
  m.symmetry = io::symmetry_from_json(meta.at("symmetry"));
  m.category = meta.at("category").get<std::string>();
  m.weights = io::read_weights(dir / "weights.gsmw");
  m.config = matcher_from_json(io::read_json(dir / "matcher.json"));
  check_weights(m.weights, m.config);
  return m;
}

inline int cmd_infer(const Context& ctx) {
  const json& cfg = ctx.config;
  const LoadedModel model = load_model(config_path(cfg, "paths", "model_dir"));
  InferenceParams ip = inference_params(cfg);
  ip.raw_features = cfg.at("train").at("ablation").at("no_fusion").get<bool>();
  const auto entries = io::read_manifest(config_path(cfg, "paths", "manifest"));
  std::vector<std::string> failures(entries.size());
  parallel_for(entries.size(), ctx.jobs, [&](std::size_t k) {
    const auto& e = entries[k];
    json result;
    json timings = json::object();
    try {
      InferenceParams p = ip;
      p.seed = mix_seed(ip.seed, k);
      const InferenceResult r = infer(io::read_observation(e), model.reference, model.weights, model.config, p);
      result = {{"pose", io::to_json(r.pose)},
                {"box", {{"extents", io::to_json(model.reference.extents)},
                         {"size", io::to_json(model.reference.extents * r.pose.scale)}}},
                {"diagnostics", {{"n_matches", r.diagnostics.n_matches},
                                 {"n_inliers", r.diagnostics.n_inliers},
                                 {"mean_score", r.diagnostics.mean_score}}}};
      for (const auto& [stage, ms] : r.timings_ms) timings[stage] = ms;
    } catch (const Error& err) {
      failures[k] = err.what();
      result = {{"error", err.what()}, {"stage", err.stage()}, {"code", to_string(err.code())}};
    }
    io::write_json(ctx.out / (e.image_id + ".json"), result);
    io::write_json(ctx.out / (e.image_id + ".timings.json"), {{"timings_ms", timings}});
  });
  std::size_t failed = 0;
  for (std::size_t k = 0; k < failures.size(); ++k) {
    if (failures[k].empty()) continue;
    ++failed;
    std::cerr << "infer: " << entries[k].image_id << ": " << failures[k] << "\n";
  }
  std::cout << "infer: " << entries.size() - failed << "/" << entries.size() << " observations solved -> "
            << ctx.out.string() << "\n";
  return 0;
}

inline std::string format_report(const MetricsReport& rep) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "items " << rep.n_items << "\n";
  for (const auto& [k, v] : rep.pooled) out << "  " << std::left << std::setw(12) << k << v << "\n";
  for (const auto& [cat, m] : rep.per_category) {
    out << cat << "\n";
    for (const auto& [k, v] : m) out << "  " << std::left << std::setw(12) << k << v << "\n";
  }
  return out.str();
}

inline int cmd_eval(const Context& ctx) {
  const json& cfg = ctx.config;
  const fs::path pred_dir = config_path(cfg, "paths", "predictions");
  const fs::path gt_dir = config_path(cfg, "paths", "ground_truth");
  std::vector<fs::path> gt_files;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    if (entry.path().extension() == ".json") gt_files.push_back(entry.path());
  }
  std::sort(gt_files.begin(), gt_files.end());
  if (gt_files.empty()) fail(ErrorCode::Io, "eval: no ground-truth JSON files in " + gt_dir.string());
  const ThresholdSet th = thresholds(cfg);
  IouParams iou;
  iou.samples = cfg.at("eval").at("iou_samples").get<int>();

  std::vector<ItemErrors> errs(gt_files.size());
  std::vector<std::string> categories(gt_files.size());
  std::vector<char> missing(gt_files.size(), 0);
  parallel_for(gt_files.size(), ctx.jobs, [&](std::size_t k) {
    const json g = io::read_json(gt_files[k]);
    categories[k] = g.value("category", std::string("all"));
    const OrientedBox3D gt_box{io::pose_from_json(g.at("pose")), io::vec3_from_json(g.at("extents"))};
    const fs::path pred_file = pred_dir / gt_files[k].filename();
    const double inf = std::numeric_limits<double>::infinity();
    if (!fs::exists(pred_file)) {
      missing[k] = 1;
      errs[k] = {inf, inf, 0.0};
      return;
    }
    const json p = io::read_json(pred_file);
    if (p.contains("error")) {
      missing[k] = 1;
      errs[k] = {inf, inf, 0.0};
      return;
    }
    const OrientedBox3D pred_box{io::pose_from_json(p.at("pose")), io::vec3_from_json(p.at("box").at("extents"))};
    errs[k] = item_errors({pred_box, gt_box, io::symmetry_from_json(g.value("symmetry", json())), categories[k]}, iou);
  });

  MetricsReport rep;
  rep.n_items = errs.size();
  rep.items = errs;
  rep.pooled = summarize(errs, th);
  std::map<std::string, std::vector<ItemErrors>> groups;
  for (std::size_t k = 0; k < errs.size(); ++k) groups[categories[k]].push_back(errs[k]);
  for (const auto& [cat, e] : groups) rep.per_category[cat] = summarize(e, th);
  for (const auto& [cat, m] : rep.per_category) {
    for (const auto& [key, v] : m) rep.category_mean[key] += v / static_cast<double>(rep.per_category.size());
  }
  const auto n_missing = std::count(missing.begin(), missing.end(), 1);
  io::write_json(ctx.out / "report.json", {{"per_threshold", rep.pooled},
                                           {"per_category", rep.per_category},
                                           {"category_mean", rep.category_mean},
                                           {"n_items", rep.n_items},
                                           {"n_unsolved", n_missing}});
  const json& ec = cfg.at("eval");
  const AccuracyCurves curves = accuracy_curves(errs, ec.at("curve_max_deg").get<double>(),
                                                ec.at("curve_max_cm").get<double>(), ec.at("curve_steps").get<int>());
  io::write_text(ctx.out / "rotation_curve.csv", curve_csv(curves.rotation));
  io::write_text(ctx.out / "translation_curve.csv", curve_csv(curves.translation));
  std::cout << format_report(rep);
  return 0;
}

inline int cmd_ablate(const Context& ctx) {
  const json& cfg = ctx.config;
  const BenchmarkSpec spec = benchmark_spec(cfg, ctx.jobs);
  struct Row {
    std::string variant;
    int instances;
    BenchmarkResult result;
  };
  std::vector<Row> rows;
  auto run = [&](const std::string& name, Ablation a, int n) {
    std::cerr << "ablate: " << name << " (" << n << " training instances)\n";
    rows.push_back({name, n, run_benchmark(spec, a, n)});
  };
  run("full", {}, spec.train_instances);
  run("no_inlier_head", {false, true, false}, spec.train_instances);
  run("no_fusion", {true, false, false}, spec.train_instances);
  run("no_symmetry", {false, false, true}, spec.train_instances);
  for (int n : cfg.at("ablate").at("sweep").get<std::vector<int>>()) {
    if (n != spec.train_instances) run("full", {}, n);
  }

  std::ostringstream csv;
  csv << "variant,train_instances,accuracy,symmetric_accuracy,iou50";
  for (const auto& [k, v] : rows.front().result.pooled) csv << ',' << k;
  csv << '\n';
  std::ostringstream table;
  table << std::left << std::setw(16) << "variant" << std::setw(10) << "models" << std::setw(10) << "acc"
        << std::setw(10) << "sym_acc" << std::setw(10) << "3d_50" << "\n";
  for (const auto& r : rows) {
    std::vector<CaseResult> sym;
    for (const auto& c : r.result.cases) {
      if (c.symmetric) sym.push_back(c);
    }
    const double sym_acc = success_rate(sym, spec);
    csv << r.variant << ',' << r.instances << ',' << r.result.accuracy << ',' << sym_acc << ',' << r.result.iou50;
    for (const auto& [k, v] : r.result.pooled) csv << ',' << v;
    csv << '\n';
    table << std::left << std::setw(16) << r.variant << std::setw(10) << r.instances << std::fixed
          << std::setprecision(3) << std::setw(10) << r.result.accuracy << std::setw(10) << sym_acc << std::setw(10)
          << r.result.iou50 << "\n";
  }
  io::write_text(ctx.out / "ablation.csv", csv.str());
  std::cout << table.str();
  return 0;
}

/// Entry point; returns the process exit code (0 ok, 1 pipeline error, 2 usage).
inline int run(int argc, char** argv) {
  CLI::App app{"Category-level 9D pose estimation from lifted semantic features"};
  app.require_subcommand(1);
  std::string config_file;
  std::string out_dir = "out";
  int jobs = 1;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--set", overrides, "override a config value, key.sub=value")->allow_extra_args(false);
  };
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Context&);
  };
  const Sub subs[] = {{"lift", "lift view features onto a reference model", cmd_lift},
                      {"synth", "generate a toy-category dataset with test scenes", cmd_synth},
                      {"train", "train the matcher on a dataset spec", cmd_train},
                      {"infer", "estimate poses for a manifest of observations", cmd_infer},
                      {"eval", "score predicted poses against ground truth", cmd_eval},
                      {"ablate", "run the ablation benchmark", cmd_ablate}};
  std::vector<CLI::App*> handles;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub);
    handles.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }
  for (std::size_t k = 0; k < handles.size(); ++k) {
    if (!handles[k]->parsed()) continue;
    try {
      Context ctx{load_config(config_file, overrides), out_dir, jobs};
      echo_config(ctx);
      return subs[k].fn(ctx);
    } catch (const Error& e) {
      std::cerr << subs[k].name << ": " << e.what() << "\n";
      return e.code() == ErrorCode::Usage ? 2 : 1;
    } catch (const json::exception& e) {
      std::cerr << subs[k].name << ": malformed JSON document: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << subs[k].name << ": " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}

}  // namespace catpose::cli
