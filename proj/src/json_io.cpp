#include "vact/json_io.hpp"

#include <algorithm>
#include <fstream>

#include "vact/errors.hpp"

namespace vact {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json state_to_json(const ProprioState& s) {
  return ordered_json{{"joints", s.joints}, {"gripper", s.gripper}};
}

ProprioState state_from_json(const json& j) {
  ProprioState s;
  s.joints = j.at("joints").get<std::vector<double>>();
  s.gripper = j.at("gripper").get<double>();
  return s;
}

ordered_json camera_to_json(const CameraModel& c) {
  ordered_json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  ordered_json rows = ordered_json::array();
  for (const auto& row : c.extrinsic) rows.push_back(row);
  j["extrinsic"] = rows;
  return j;
}

CameraModel camera_from_json(const json& j) {
  CameraModel c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto& rows = j.at("extrinsic");
  if (!rows.is_array() || rows.size() != 4) throw ValidationError("extrinsic must be 4x4");
  for (int i = 0; i < 4; ++i) {
    if (!rows[i].is_array() || rows[i].size() != 4) throw ValidationError("extrinsic must be 4x4");
    for (int k = 0; k < 4; ++k) c.extrinsic[i][k] = rows[i][k].get<double>();
  }
  return c;
}

}  // namespace

ordered_json episode_to_json(const Episode& e) {
  ordered_json j;
  j["id"] = e.id;
  j["subset"] = e.subset;
  j["robot"] = ordered_json{{"name", e.robot.name}};
  j["mode"] = ordered_json{{"actuation", to_string(e.mode.actuation)},
                           {"frame", to_string(e.mode.frame)}};
  j["instruction"] = e.instruction;
  if (e.camera) j["camera"] = camera_to_json(*e.camera);
  ordered_json frames = ordered_json::array();
  for (const Frame& f : e.frames) {
    ordered_json fj;
    fj["index"] = f.index;
    fj["image_ref"] = f.image_ref;
    fj["state"] = state_to_json(f.state);
    if (f.action) fj["action"] = ordered_json{{"values", f.action->values}};
    if (f.ee_pos_3d) fj["ee_pos_3d"] = *f.ee_pos_3d;
    if (f.ee_bbox) fj["ee_bbox"] = *f.ee_bbox;
    frames.push_back(std::move(fj));
  }
  j["frames"] = std::move(frames);
  return j;
}

Episode episode_from_json(const json& j) {
  Episode e;
  e.id = j.at("id").get<std::string>();
  e.subset = j.at("subset").get<std::string>();
  e.robot.name = j.at("robot").at("name").get<std::string>();
  // Parse-time reject: velocities are rate commands, never absolute.
  e.mode = make_control_mode(actuation_from_string(j.at("mode").at("actuation").get<std::string>()),
                             control_frame_from_string(j.at("mode").at("frame").get<std::string>()));
  e.instruction = j.at("instruction").get<std::string>();
  if (j.contains("camera")) e.camera = camera_from_json(j.at("camera"));
  for (const auto& fj : j.at("frames")) {
    Frame f;
    f.index = fj.at("index").get<int>();
    f.image_ref = fj.at("image_ref").get<std::string>();
    f.state = state_from_json(fj.at("state"));
    if (fj.contains("action")) {
      f.action = Action{fj.at("action").at("values").get<std::vector<double>>()};
    }
    if (fj.contains("ee_pos_3d")) f.ee_pos_3d = fj.at("ee_pos_3d").get<std::array<double, 3>>();
    if (fj.contains("ee_bbox")) f.ee_bbox = fj.at("ee_bbox").get<std::array<double, 4>>();
    e.frames.push_back(std::move(f));
  }
  return e;
}

std::string episode_to_string(const Episode& e) { return episode_to_json(e).dump(2) + "\n"; }

Episode episode_from_string(const std::string& text) {
  try {
    return episode_from_json(json::parse(text));
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("episode JSON: ") + ex.what());
  }
}

Episode load_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open episode file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return episode_from_string(text);
  } catch (const Error& ex) {
    throw ValidationError(path.string() + ": " + ex.what());
  }
}

void save_episode(const Episode& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write episode file: " + path.string());
  out << episode_to_string(e);
}

Manifest load_manifest(const std::filesystem::path& corpus_dir) {
  const auto path = corpus_dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw IoError("manifest " + path.string() + ": " + ex.what());
  }
  Manifest m;
  m.subsets = j.at("subsets").get<std::vector<std::string>>();
  if (j.contains("robots")) m.robots = j.at("robots").get<std::vector<std::string>>();
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& corpus_dir) {
  ordered_json j;
  j["schema_version"] = 1;
  j["subsets"] = m.subsets;
  j["robots"] = m.robots;
  std::ofstream out(corpus_dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + corpus_dir.string());
  out << j.dump(2) << "\n";
}

std::vector<std::filesystem::path> list_episode_files(const std::filesystem::path& corpus_dir,
                                                      const Manifest& manifest) {
  std::vector<std::filesystem::path> files;
  auto subsets = manifest.subsets;
  std::sort(subsets.begin(), subsets.end());
  for (const auto& subset : subsets) {
    const auto dir = corpus_dir / subset;
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> here;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        here.push_back(entry.path());
      }
    }
    std::sort(here.begin(), here.end());
    files.insert(files.end(), here.begin(), here.end());
  }
  return files;
}

}  // namespace vact
