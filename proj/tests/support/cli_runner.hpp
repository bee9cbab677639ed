#pragma once

// Drives the catpose executable through a full synth -> train -> infer -> eval
// run in a scratch directory.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace clirun {

namespace fs = std::filesystem;

inline int exit_code(int status) {
#ifdef WIFEXITED
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
#else
  return status;
#endif
}

inline std::string quote(const std::string& s) { return "'" + s + "'"; }

/// Runs the CLI with `args`; stdout and stderr go to `log`.
inline int run(const std::string& args, const fs::path& log) {
  const std::string cmd = quote(CATPOSE_CLI_PATH) + " " + args + " >" + quote(log.string()) + " 2>&1";
  return exit_code(std::system(cmd.c_str()));
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PipelineResult {
  std::vector<int> exit_codes;
  fs::path root;
};

/// synth, train, infer on the synthesized test manifest, eval. `settings` are
/// extra `--set` overrides shared by every stage.
inline PipelineResult run_pipeline(const fs::path& root, const std::vector<std::string>& settings) {
  fs::remove_all(root);
  fs::create_directories(root);
  std::string common;
  for (const auto& s : settings) common += " --set " + quote(s);
  PipelineResult r;
  r.root = root;
  const auto data = root / "data", model = root / "model", pred = root / "pred", report = root / "report";
  r.exit_codes.push_back(run("synth --out " + quote(data.string()) + common, root / "synth.log"));
  r.exit_codes.push_back(run("train --out " + quote(model.string()) + common + " --set " +
                                 quote("paths.dataset=" + (data / "dataset.json").string()),
                             root / "train.log"));
  r.exit_codes.push_back(run("infer --out " + quote(pred.string()) + common + " --set " +
                                 quote("paths.model_dir=" + model.string()) + " --set " +
                                 quote("paths.manifest=" + (data / "test" / "manifest.json").string()),
                             root / "infer.log"));
  r.exit_codes.push_back(run("eval --out " + quote(report.string()) + common + " --set " +
                                 quote("paths.predictions=" + pred.string()) + " --set " +
                                 quote("paths.ground_truth=" + (data / "gt").string()),
                             root / "eval.log"));
  return r;
}

/// Contents of every pose JSON (timings excluded) and report file, keyed by
/// path relative to the run root.
inline std::map<std::string, std::string> comparable_outputs(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& dir : {root / "pred", root / "report"}) {
    if (!fs::exists(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.ends_with(".timings.json") || name == "config.json") continue;
      out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    }
  }
  return out;
}

}  // namespace clirun
