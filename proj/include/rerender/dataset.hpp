// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rerender/camera.hpp"
#include "rerender/image.hpp"

namespace rerender {

struct Frame {
  std::string id;
  CameraSpec cam;
  Image image;          // linear rgb
  Image mask_sky;       // 1 = non-sky (BCE target is the desired opacity)
  Image mask_occluder;  // 1 = synthetic occluder pixel
  int env_id = 0, shadow_id = 0, tone_id = 0;
  bool test = false;
};

/// On-disk layout: images/*.exr, masks_sky/*.png, masks_occluder/*.png,
/// cameras.json (pose 4x4 row-major + intrinsics), gt_manifest.json.
struct Dataset {
  std::string root;
  std::string scene_preset;
  uint64_t scene_seed = 0;
  uint64_t spec_hash = 0;
  std::vector<Frame> frames;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
  const Frame& frame_by_id(const std::string& id) const;
};

Dataset load_dataset(const std::string& dir);
void validate_dataset(const Dataset& ds);

/// Serialization helpers shared with the generator.
std::string camera_to_json(const CameraSpec& cam);
CameraSpec camera_from_json(const std::string& json_text);

}  // namespace rerender
