// SPDX-License-Identifier: Apache-2.0
#include "rerender/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rerender/exr.hpp"

namespace rerender {

Vec3 sample_bilinear(const Image& img, double x, double y) {
  double fx = x - 0.5, fy = y - 0.5;
  int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  double tx = fx - x0, ty = fy - y0;
  auto cl = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  int x1 = cl(x0 + 1, img.width), y1 = cl(y0 + 1, img.height);
  x0 = cl(x0, img.width);
  y0 = cl(y0, img.height);
  Vec3 c00 = img.rgb(x0, y0), c10 = img.rgb(x1, y0), c01 = img.rgb(x0, y1), c11 = img.rgb(x1, y1);
  return (c00 * (1 - tx) + c10 * tx) * (1 - ty) + (c01 * (1 - tx) + c11 * tx) * ty;
}

Image downscale_area(const Image& img, int factor) {
  require(factor >= 1 && img.width % factor == 0 && img.height % factor == 0,
          "downscale_area: size not divisible by factor");
  Image out(img.width / factor, img.height / factor, img.channels);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = static_cast<float>(acc * inv);
      }
  return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  Image out(out_w, out_h, img.channels);
  double sx = static_cast<double>(img.width) / out_w;
  double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      Vec3 v = sample_bilinear(img, (x + 0.5) * sx, (y + 0.5) * sy);
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = static_cast<float>(v[std::min(c, 2)]);
    }
  return out;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

double mean_abs_diff(const Image& a, const Image& b) {
  require(a.same_shape(b), "mean_abs_diff: shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(double(a.data[i]) - b.data[i]);
  return a.data.empty() ? 0.0 : acc / a.data.size();
}

Image load_exr_image(const std::string& path) {
  ExrImage exr = read_exr(path);
  bool rgb = exr.channels.count("R") && exr.channels.count("G") && exr.channels.count("B");
  Image img(exr.width, exr.height, rgb ? 3 : 1);
  if (rgb) {
    const auto &R = exr.channels["R"], &G = exr.channels["G"], &B = exr.channels["B"];
    for (size_t i = 0; i < R.size(); ++i) {
      img.data[3 * i + 0] = R[i];
      img.data[3 * i + 1] = G[i];
      img.data[3 * i + 2] = B[i];
    }
  } else {
    img.data = exr.channels.begin()->second;
  }
  return img;
}

void save_exr_image(const std::string& path, const Image& img) {
  size_t n = static_cast<size_t>(img.width) * img.height;
  if (img.channels == 1) {
    write_exr(path, img.width, img.height, {{"Y", img.data.data()}});
    return;
  }
  require(img.channels == 3, "save_exr_image: expected 1 or 3 channels");
  std::vector<float> r(n), g(n), b(n);
  for (size_t i = 0; i < n; ++i) {
    r[i] = img.data[3 * i + 0];
    g[i] = img.data[3 * i + 1];
    b[i] = img.data[3 * i + 2];
  }
  write_exr(path, img.width, img.height, {{"R", r.data()}, {"G", g.data()}, {"B", b.data()}});
}

void save_png(const std::string& path, const Image& img, bool gamma_encode) {
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        double v = std::clamp(double(img.at(x, y, 0)), 0.0, 1.0);
        if (gamma_encode) v = std::pow(v, 1.0 / 2.2);
        m.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(v * 255.0));
      } else {
        cv::Vec3b& px = m.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) {
          double v = std::clamp(double(img.at(x, y, c)), 0.0, 1.0);
          if (gamma_encode) v = std::pow(v, 1.0 / 2.2);
          px[2 - c] = static_cast<uint8_t>(std::lround(v * 255.0));  // BGR
        }
      }
    }
  if (!cv::imwrite(path, m)) fail("save_png: cannot write " + path);
}

Image load_png(const std::string& path, bool gamma_decode) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) fail("load_png: cannot read " + path);
  int ch = m.channels() >= 3 ? 3 : 1;
  Image img(m.cols, m.rows, ch);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < ch; ++c) {
        uint8_t raw = ch == 1 ? m.at<uint8_t>(y, x) : m.at<cv::Vec3b>(y, x)[2 - c];
        double v = raw / 255.0;
        if (gamma_decode) v = std::pow(v, 2.2);
        img.at(x, y, c) = static_cast<float>(v);
      }
  return img;
}

Image load_mask_png(const std::string& path) {
  Image raw = load_png(path, false);
  Image m(raw.width, raw.height, 1);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) m.at(x, y, 0) = raw.at(x, y, 0) > 0.5f ? 1.0f : 0.0f;
  return m;
}

void save_mask_png(const std::string& path, const Image& m) { save_png(path, m, false); }

}  // namespace rerender
