#pragma once

// On-disk formats: GSFM feature maps, GSFC feature clouds, GSMW matcher
// weights, ASCII PLY models, and the JSON pose/camera/manifest documents.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "catpose/error.hpp"
#include "catpose/featurelift.hpp"
#include "catpose/geometry.hpp"
#include "catpose/matcher.hpp"

namespace catpose::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::uint32_t kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Byte helpers

class ByteWriter {
 public:
  void magic(const char (&m)[5]) { bytes_.insert(bytes_.end(), m, m + 4); }
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_floats(const float* data, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n * sizeof(float));
  }
  void put_string(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

  void expect_magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0) fail(ErrorCode::Format, what_ + ": bad magic, expected " + m);
    pos_ += 4;
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_floats(float* out, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) fail(ErrorCode::Format, what_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::Format, what_ + ": truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const fs::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_atomic(const fs::path& path, const std::vector<char>& bytes) {
  write_atomic(path, bytes.data(), bytes.size());
}

inline void write_text(const fs::path& path, const std::string& text) { write_atomic(path, text.data(), text.size()); }

inline std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Format, path.string() + ": malformed JSON: " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// GSFM

inline std::vector<char> encode_feature_map(const FeatureMap& map) {
  ByteWriter w;
  w.magic("GSFM");
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.dim));
  w.put_floats(map.data.data(), map.data.size());
  return w.bytes();
}

inline FeatureMap decode_feature_map(std::vector<char> bytes, const std::string& what = "GSFM") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("GSFM");
  if (r.get<std::uint32_t>() != kFormatVersion) fail(ErrorCode::Format, what + ": unsupported version");
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  if (h == 0 || w == 0 || d == 0) fail(ErrorCode::Format, what + ": zero dimension");
  FeatureMap map(static_cast<int>(w), static_cast<int>(h), static_cast<int>(d));
  r.get_floats(map.data.data(), map.data.size());
  r.expect_end();
  if (!map.is_valid()) fail(ErrorCode::Format, what + ": non-finite values");
  return map;
}

inline void write_feature_map(const fs::path& path, const FeatureMap& map) {
  write_atomic(path, encode_feature_map(map));
}
inline FeatureMap read_feature_map(const fs::path& path) {
  return decode_feature_map(read_bytes(path), path.string());
}

/// Depth (meters) and masks share the GSFM layout with D = 1.
inline FeatureMap scalar_image(int width, int height, const std::vector<float>& values) {
  FeatureMap m(width, height, 1);
  m.data = values;
  return m;
}

// ---------------------------------------------------------------------------
// GSFC

inline std::vector<char> encode_feature_cloud(const FeatureCloud& cloud) {
  ByteWriter w;
  w.magic("GSFC");
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cloud.dim()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.put<float>(static_cast<float>(cloud.points(i, k)));
  }
  w.put_floats(cloud.features.data(), static_cast<std::size_t>(cloud.features.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    w.put<std::uint32_t>(cloud.view_counts.empty() ? 1u : cloud.view_counts[static_cast<std::size_t>(i)]);
  }
  return w.bytes();
}

inline FeatureCloud decode_feature_cloud(std::vector<char> bytes, const std::string& what = "GSFC") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("GSFC");
  if (r.get<std::uint32_t>() != kFormatVersion) fail(ErrorCode::Format, what + ": unsupported version");
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  FeatureCloud c;
  c.points.resize(n, 3);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) c.points(i, k) = r.get<float>();
  }
  c.features.resize(n, d);
  r.get_floats(c.features.data(), static_cast<std::size_t>(n) * d);
  c.view_counts.resize(n);
  for (auto& v : c.view_counts) v = r.get<std::uint32_t>();
  r.expect_end();
  return c;
}

inline void write_feature_cloud(const fs::path& path, const FeatureCloud& c) {
  write_atomic(path, encode_feature_cloud(c));
}
inline FeatureCloud read_feature_cloud(const fs::path& path) {
  return decode_feature_cloud(read_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// GSMW

inline std::vector<char> encode_weights(const MatcherWeights<float>& weights) {
  ByteWriter w;
  w.magic("GSMW");
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.size()));
  for (const auto& [name, m] : weights) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put<std::uint8_t>(2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    w.put_floats(m.data(), static_cast<std::size_t>(m.size()));
  }
  return w.bytes();
}

inline MatcherWeights<float> decode_weights(std::vector<char> bytes, const std::string& what = "GSMW") {
  ByteReader r(std::move(bytes), what);
  r.expect_magic("GSMW");
  if (r.get<std::uint32_t>() != kFormatVersion) fail(ErrorCode::Format, what + ": unsupported version");
  const auto count = r.get<std::uint32_t>();
  MatcherWeights<float> weights;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.get_string(len);
    const auto rank = r.get<std::uint8_t>();
    if (rank < 1 || rank > 2) fail(ErrorCode::Format, what + ": tensor " + name + " has unsupported rank");
    std::uint32_t dims[2] = {1, 1};
    for (int k = 0; k < rank; ++k) dims[k] = r.get<std::uint32_t>();
    // Rank-1 tensors load as row vectors.
    const std::uint32_t rows = rank == 2 ? dims[0] : 1, cols = rank == 2 ? dims[1] : dims[0];
    Matrix<float> m(rows, cols);
    r.get_floats(m.data(), static_cast<std::size_t>(m.size()));
    weights.emplace(std::move(name), std::move(m));
  }
  r.expect_end();
  return weights;
}

inline void write_weights(const fs::path& path, const MatcherWeights<float>& w) { write_atomic(path, encode_weights(w)); }
inline MatcherWeights<float> read_weights(const fs::path& path) { return decode_weights(read_bytes(path), path.string()); }

// ---------------------------------------------------------------------------
// PLY (ASCII)

inline void write_ply(const fs::path& path, const ReferenceModel& model) {
  std::ostringstream out;
  out << std::setprecision(9);
  const bool parts = model.has_part_mask();
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << model.points.rows() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (parts) out << "property uchar part\n";
  if (!model.triangles.empty()) {
    out << "element face " << model.triangles.size() << "\nproperty list uchar int vertex_indices\n";
  }
  out << "end_header\n";
  for (Eigen::Index i = 0; i < model.points.rows(); ++i) {
    out << static_cast<float>(model.points(i, 0)) << ' ' << static_cast<float>(model.points(i, 1)) << ' '
        << static_cast<float>(model.points(i, 2));
    if (parts) out << ' ' << int(model.part_mask[static_cast<std::size_t>(i)]);
    out << '\n';
  }
  for (const auto& t : model.triangles) out << "3 " << t(0) << ' ' << t(1) << ' ' << t(2) << '\n';
  write_text(path, out.str());
}

/// Reads vertex x/y/z and the optional "part" property; faces are optional.
inline ReferenceModel read_ply(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  auto bad = [&](const std::string& why) { fail(ErrorCode::Format, path.string() + ": " + why); };
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) bad("not a PLY file");
  std::size_t n_vertices = 0, n_faces = 0;
  std::vector<std::string> vertex_props;
  std::string current;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") bad("only ASCII PLY is supported");
    } else if (tok == "element") {
      std::size_t n = 0;
      ls >> current >> n;
      if (current == "vertex") n_vertices = n;
      if (current == "face") n_faces = n;
    } else if (tok == "property" && current == "vertex") {
      std::string type, name;
      ls >> type >> name;
      vertex_props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  auto index_of = [&](const std::string& name) -> int {
    for (std::size_t k = 0; k < vertex_props.size(); ++k) {
      if (vertex_props[k] == name) return static_cast<int>(k);
    }
    return -1;
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z"), ipart = index_of("part");
  if (ix < 0 || iy < 0 || iz < 0) bad("vertex x/y/z properties missing");

  ReferenceModel model;
  model.points.resize(static_cast<Eigen::Index>(n_vertices), 3);
  if (ipart >= 0) model.part_mask.resize(n_vertices);
  std::vector<double> values(vertex_props.size());
  for (std::size_t i = 0; i < n_vertices; ++i) {
    if (!std::getline(in, line)) bad("truncated vertex list");
    std::istringstream ls(line);
    for (auto& v : values) {
      if (!(ls >> v)) bad("malformed vertex line");
    }
    model.points.row(static_cast<Eigen::Index>(i)) << values[static_cast<std::size_t>(ix)],
        values[static_cast<std::size_t>(iy)], values[static_cast<std::size_t>(iz)];
    if (ipart >= 0) model.part_mask[i] = values[static_cast<std::size_t>(ipart)] != 0.0 ? 1 : 0;
  }
  for (std::size_t f = 0; f < n_faces; ++f) {
    if (!std::getline(in, line)) bad("truncated face list");
    std::istringstream ls(line);
    int count = 0;
    ls >> count;
    std::vector<int> idx(static_cast<std::size_t>(std::max(count, 0)));
    for (auto& k : idx) ls >> k;
    for (int k = 1; k + 1 < count; ++k) model.triangles.emplace_back(idx[0], idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(k + 1)]);
  }
  if (model.points.rows() < 4) bad("model needs at least 4 vertices");
  model.recompute_extents();
  return model;
}

// ---------------------------------------------------------------------------
// JSON documents

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::Format, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json to_json(const Pose9D& pose) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({pose.rotation(r, 0), pose.rotation(r, 1), pose.rotation(r, 2)});
  return {{"rotation", rot}, {"translation", to_json(pose.translation)}, {"scale", pose.scale}};
}

inline Pose9D pose_from_json(const json& j) {
  Pose9D pose;
  const auto& rot = j.at("rotation");
  if (!rot.is_array() || rot.size() != 3) fail(ErrorCode::Format, "pose rotation must be 3x3");
  for (int r = 0; r < 3; ++r) {
    if (!rot[r].is_array() || rot[r].size() != 3) fail(ErrorCode::Format, "pose rotation must be 3x3");
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rot[r][c].get<double>();
  }
  pose.translation = vec3_from_json(j.at("translation"));
  pose.scale = j.at("scale").get<double>();
  if (!pose.is_valid(1e-5)) fail(ErrorCode::Format, "pose is not a valid similarity transform");
  return pose;
}

inline json to_json(const CameraView& cam) {
  json m = json::array();
  for (int i = 0; i < 16; ++i) m.push_back(cam.world_to_camera(i / 4, i % 4));
  return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
          {"width", cam.width}, {"height", cam.height}, {"world_to_camera", m}};
}

inline CameraView camera_from_json(const json& j) {
  CameraView cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto& m = j.at("world_to_camera");
  if (!m.is_array() || m.size() != 16) fail(ErrorCode::Format, "world_to_camera must have 16 numbers");
  for (int i = 0; i < 16; ++i) cam.world_to_camera(i / 4, i % 4) = m[static_cast<std::size_t>(i)].get<double>();
  if (!cam.is_valid(1e-5)) fail(ErrorCode::Format, "camera is not valid");
  return cam;
}

inline json to_json(const SymmetryDescriptor& sym) {
  if (!sym.is_axis()) return nullptr;
  return {{"axis", to_json(sym.axis)}, {"reference", to_json(sym.reference)}};
}

inline SymmetryDescriptor symmetry_from_json(const json& j) {
  if (j.is_null()) return SymmetryDescriptor::none();
  return SymmetryDescriptor::about(vec3_from_json(j.at("axis")), vec3_from_json(j.at("reference")));
}

inline void write_pose(const fs::path& path, const Pose9D& pose) { write_json(path, to_json(pose)); }
inline Pose9D read_pose(const fs::path& path) { return pose_from_json(read_json(path)); }
inline void write_camera(const fs::path& path, const CameraView& cam) { write_json(path, to_json(cam)); }
inline CameraView read_camera(const fs::path& path) { return camera_from_json(read_json(path)); }

struct ManifestEntry {
  std::string image_id;
  fs::path camera_file;
  fs::path feature_file;
  fs::path depth_file;  // empty when absent
  fs::path mask_file;   // empty when absent
};

/// Manifest: {"entries": [{image_id, camera_file, feature_file, depth_file?, mask_file?}]}
/// or a bare array of entries. Relative paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const json j = read_json(path);
  const json& list = j.is_array() ? j : j.at("entries");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<ManifestEntry> out;
  for (const auto& e : list) {
    ManifestEntry m;
    m.image_id = e.at("image_id").get<std::string>();
    m.camera_file = resolve(e.at("camera_file").get<std::string>());
    m.feature_file = resolve(e.at("feature_file").get<std::string>());
    if (e.contains("depth_file") && !e["depth_file"].is_null()) m.depth_file = resolve(e["depth_file"].get<std::string>());
    if (e.contains("mask_file") && !e["mask_file"].is_null()) m.mask_file = resolve(e["mask_file"].get<std::string>());
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  const fs::path base = path.parent_path();
  json list = json::array();
  for (const auto& e : entries) {
    json j = {{"image_id", e.image_id},
              {"camera_file", fs::relative(e.camera_file, base).generic_string()},
              {"feature_file", fs::relative(e.feature_file, base).generic_string()}};
    if (!e.depth_file.empty()) j["depth_file"] = fs::relative(e.depth_file, base).generic_string();
    if (!e.mask_file.empty()) j["mask_file"] = fs::relative(e.mask_file, base).generic_string();
    list.push_back(std::move(j));
  }
  write_json(path, json{{"entries", list}});
}

/// Loads depth, mask and features for a manifest entry into an observation.
inline Observation read_observation(const ManifestEntry& e) {
  Observation obs;
  obs.camera = read_camera(e.camera_file);
  obs.features = read_feature_map(e.feature_file);
  if (e.depth_file.empty() || e.mask_file.empty()) {
    fail(ErrorCode::Format, "observation " + e.image_id + " needs depth_file and mask_file");
  }
  const FeatureMap depth = read_feature_map(e.depth_file);
  const FeatureMap mask = read_feature_map(e.mask_file);
  if (depth.dim != 1 || mask.dim != 1) fail(ErrorCode::Format, "depth and mask maps must have D = 1");
  obs.depth = depth.data;
  obs.mask.resize(mask.data.size());
  for (std::size_t k = 0; k < mask.data.size(); ++k) obs.mask[k] = mask.data[k] != 0.0f ? 1 : 0;
  return obs;
}

inline void write_observation(const fs::path& dir, const std::string& id, const Observation& obs, ManifestEntry* entry) {
  ManifestEntry e;
  e.image_id = id;
  e.camera_file = dir / (id + ".camera.json");
  e.feature_file = dir / (id + ".features.gsfm");
  e.depth_file = dir / (id + ".depth.gsfm");
  e.mask_file = dir / (id + ".mask.gsfm");
  write_camera(e.camera_file, obs.camera);
  write_feature_map(e.feature_file, obs.features);
  write_feature_map(e.depth_file, scalar_image(obs.camera.width, obs.camera.height, obs.depth));
  std::vector<float> m(obs.mask.begin(), obs.mask.end());
  write_feature_map(e.mask_file, scalar_image(obs.camera.width, obs.camera.height, m));
  if (entry) *entry = e;
}

}  // namespace catpose::io
