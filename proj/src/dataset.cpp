// SPDX-License-Identifier: Apache-2.0
#include "rerender/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace rerender {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json camera_json(const CameraSpec& cam) {
  Mat4 pose = Mat4::Identity();
  pose.topLeftCorner<3, 3>() = cam.R;
  pose.topRightCorner<3, 1>() = cam.t;
  std::vector<double> flat(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) flat[r * 4 + c] = pose(r, c);
  return json{{"pose", flat}, {"width", cam.width}, {"height", cam.height},
              {"fx", cam.fx}, {"fy", cam.fy},       {"cx", cam.cx},
              {"cy", cam.cy}};
}

CameraSpec camera_from(const json& j) {
  CameraSpec cam;
  cam.width = j.at("width");
  cam.height = j.at("height");
  cam.fx = j.at("fx");
  cam.fy = j.at("fy");
  cam.cx = j.at("cx");
  cam.cy = j.at("cy");
  const auto flat = j.at("pose").get<std::vector<double>>();
  require(flat.size() == 16, "cameras.json: pose must be a 4x4 row-major matrix");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.R(r, c) = flat[r * 4 + c];
    cam.t[r] = flat[r * 4 + 3];
  }
  validate_camera(cam);
  return cam;
}

}  // namespace

std::string camera_to_json(const CameraSpec& cam) { return camera_json(cam).dump(2); }

CameraSpec camera_from_json(const std::string& json_text) {
  return camera_from(json::parse(json_text));
}

std::vector<int> Dataset::train_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(frames.size()); ++i)
    if (!frames[i].test) out.push_back(i);
  return out;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(frames.size()); ++i)
    if (frames[i].test) out.push_back(i);
  return out;
}

const Frame& Dataset::frame_by_id(const std::string& id) const {
  for (const Frame& f : frames)
    if (f.id == id) return f;
  fail("Dataset: no frame with id '" + id + "'");
}

Dataset load_dataset(const std::string& dir) {
  require(fs::exists(fs::path(dir) / "cameras.json"), "load_dataset: missing cameras.json in " + dir);
  std::ifstream cam_in(fs::path(dir) / "cameras.json");
  json cams = json::parse(cam_in);
  json manifest;
  {
    std::ifstream man_in(fs::path(dir) / "gt_manifest.json");
    require(man_in.good(), "load_dataset: missing gt_manifest.json in " + dir);
    manifest = json::parse(man_in);
  }

  Dataset ds;
  ds.root = dir;
  ds.scene_preset = manifest.value("scene_preset", "");
  ds.scene_seed = manifest.value("scene_seed", 0ull);
  ds.spec_hash = manifest.value("spec_hash", 0ull);

  for (const auto& fj : cams.at("frames")) {
    Frame f;
    f.id = fj.at("id");
    f.cam = camera_from(fj);
    f.image = load_exr_image((fs::path(dir) / "images" / (f.id + ".exr")).string());
    f.mask_sky = load_mask_png((fs::path(dir) / "masks_sky" / (f.id + ".png")).string());
    f.mask_occluder =
        load_mask_png((fs::path(dir) / "masks_occluder" / (f.id + ".png")).string());
    const auto& mj = manifest.at("frames").at(f.id);
    f.env_id = mj.at("env_id");
    f.shadow_id = mj.at("shadow_id");
    f.tone_id = mj.at("tone_id");
    f.test = mj.at("test");
    ds.frames.push_back(std::move(f));
  }
  validate_dataset(ds);
  return ds;
}

void validate_dataset(const Dataset& ds) {
  require(!ds.frames.empty(), "dataset: no frames");
  for (const Frame& f : ds.frames) {
    validate_camera(f.cam);
    require(f.image.width == f.cam.width && f.image.height == f.cam.height,
            "dataset: image/camera resolution mismatch for " + f.id);
    require(f.image.channels == 3, "dataset: images must be rgb for " + f.id);
    for (const Image* m : {&f.mask_sky, &f.mask_occluder}) {
      require(m->width == f.image.width && m->height == f.image.height && m->channels == 1,
              "dataset: mask resolution mismatch for " + f.id);
      for (float v : m->data)
        require(v == 0.0f || v == 1.0f, "dataset: masks must be binary for " + f.id);
    }
  }
}

}  // namespace rerender
