// SPDX-License-Identifier: Apache-2.0
#include "rerender/camera.hpp"

#include <cmath>

namespace rerender {

Ray ray_through_pixel(const CameraSpec& cam, int ix, int iy) {
  require(ix >= 0 && ix < cam.width && iy >= 0 && iy < cam.height,
          "ray_through_pixel: pixel outside image");
  return ray_through_point(cam, ix + 0.5, iy + 0.5);
}

Ray ray_through_point(const CameraSpec& cam, double px, double py) {
  Vec3 d_cam((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = cam.t;
  r.dir = (cam.R * d_cam).normalized();
  return r;
}

Vec3 project(const CameraSpec& cam, const Vec3& world) {
  const Vec3 p = cam.R.transpose() * (world - cam.t);
  require(p.z() > 0, "project: point behind camera");
  return Vec3(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy, p.z());
}

void validate_camera(const CameraSpec& cam) {
  require(cam.width > 0 && cam.height > 0, "camera: empty image");
  require(cam.fx > 0 && cam.fy > 0, "camera: focal lengths must be positive");
  require(cam.cx > 0 && cam.cx < cam.width && cam.cy > 0 && cam.cy < cam.height,
          "camera: principal point outside image");
}

std::vector<Ray> generate_rays(const CameraSpec& cam, const std::vector<int>& pixel_ids) {
  std::vector<Ray> rays;
  rays.reserve(pixel_ids.size());
  for (int id : pixel_ids) {
    require(id >= 0 && id < cam.width * cam.height, "generate_rays: pixel outside image");
    rays.push_back(ray_through_pixel(cam, id % cam.width, id / cam.width));
  }
  return rays;
}

CameraSpec camera_look_at(const Vec3& eye, const Vec3& target, int width, int height,
                          double fov_x_rad) {
  require((target - eye).norm() > 1e-9, "camera_look_at: eye and target coincide");
  require(fov_x_rad > 0 && fov_x_rad < kPi, "camera_look_at: fov out of range");
  const Vec3 fwd = (target - eye).normalized();
  Vec3 up_w(0, 1, 0);
  if (std::abs(fwd.dot(up_w)) > 0.999) up_w = Vec3(0, 0, 1);  // looking straight up/down
  const Vec3 right = up_w.cross(fwd).normalized();
  const Vec3 down = fwd.cross(right);
  CameraSpec cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = width / (2.0 * std::tan(fov_x_rad / 2.0));
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.R.col(0) = right;
  cam.R.col(1) = down;
  cam.R.col(2) = fwd;
  cam.t = eye;
  return cam;
}

CameraSpec widen_camera(const CameraSpec& cam, double scale) {
  require(scale >= 1.0, "widen_camera: scale must be >= 1");
  CameraSpec out = cam;
  // Same focal length, symmetric integer padding: source pixel (ix, iy) keeps
  // exactly the ray of pixel (ix + pad_x, iy + pad_y) in the widened camera.
  const int pad_x = static_cast<int>(std::lround(cam.width * (scale - 1.0) / 2.0));
  const int pad_y = static_cast<int>(std::lround(cam.height * (scale - 1.0) / 2.0));
  out.width = cam.width + 2 * pad_x;
  out.height = cam.height + 2 * pad_y;
  out.cx = cam.cx + pad_x;
  out.cy = cam.cy + pad_y;
  return out;
}

}  // namespace rerender
