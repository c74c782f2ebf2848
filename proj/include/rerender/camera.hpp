// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rerender/core.hpp"

namespace rerender {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit length
};

/// Pinhole camera, right-handed, looking down +z with y pointing down the
/// image. R columns are the camera axes in world space; t is the camera
/// origin.
struct CameraSpec {
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

/// Ray through the center of pixel (ix, iy) (offset +0.5). Domain error if
/// the pixel is outside the image.
Ray ray_through_pixel(const CameraSpec& cam, int ix, int iy);
/// Continuous variant; (px, py) in pixel units, no bounds check on purpose
/// (used for extrapolated virtual cameras).
Ray ray_through_point(const CameraSpec& cam, double px, double py);

/// World point to (pixel x, pixel y, camera depth). Domain error if the point
/// is behind the camera.
Vec3 project(const CameraSpec& cam, const Vec3& world);

void validate_camera(const CameraSpec& cam);

/// Rays through the centers of the given linear pixel indices (row-major).
std::vector<Ray> generate_rays(const CameraSpec& cam, const std::vector<int>& pixel_ids);

CameraSpec camera_look_at(const Vec3& eye, const Vec3& target, int width, int height,
                          double fov_x_rad);
/// Same pose, wider field of view and enlarged image, keeping the original
/// pixel grid aligned at the center (scale = new_fov factor on the focal
/// plane).
CameraSpec widen_camera(const CameraSpec& cam, double scale);

}  // namespace rerender
