// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rerender/core.hpp"

namespace rerender {

/// Row-major interleaved float image, linear radiometric values.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  Vec3 rgb(int x, int y) const {
    return Vec3(at(x, y, 0), at(x, y, 1), channels > 2 ? at(x, y, 2) : at(x, y, 0));
  }
  void set_rgb(int x, int y, const Vec3& v) {
    at(x, y, 0) = static_cast<float>(v.x());
    at(x, y, 1) = static_cast<float>(v.y());
    if (channels > 2) at(x, y, 2) = static_cast<float>(v.z());
  }
};

/// Bilinear sample with clamped edges; (x, y) in pixel coordinates where the
/// center of pixel (i, j) sits at (i + 0.5, j + 0.5).
Vec3 sample_bilinear(const Image& img, double x, double y);

Image downscale_area(const Image& img, int factor);
Image resize_bilinear(const Image& img, int out_w, int out_h);
Image clamp01(const Image& img);
double mean_abs_diff(const Image& a, const Image& b);

Image load_exr_image(const std::string& path);
void save_exr_image(const std::string& path, const Image& img);

/// 8-bit PNG with gamma 2.2 encoding of linear rgb (or raw for masks).
void save_png(const std::string& path, const Image& img, bool gamma_encode = true);
Image load_png(const std::string& path, bool gamma_decode = false);

Image load_mask_png(const std::string& path);            // values in {0,1}
void save_mask_png(const std::string& path, const Image& m);

}  // namespace rerender
