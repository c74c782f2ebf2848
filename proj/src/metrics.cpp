// SPDX-License-Identifier: Apache-2.0
#include "rerender/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rerender/core.hpp"

namespace rerender {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
    return 0.5 * (hi + v[mid - 1]);
  }
  return hi;
}

}  // namespace

double compute_mse(const Image& a, const Image& b) {
  require(a.same_shape(b), "metrics: image shape mismatch");
  require(a.channels == 3, "metrics: rgb images required");
  double acc = 0.0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = clamp01(a.at(x, y, c)) - clamp01(b.at(x, y, c));
        acc += d * d;
      }
  return acc / (3.0 * a.width * a.height);
}

double compute_mse_masked(const Image& a, const Image& b, const Image& mask) {
  require(a.same_shape(b), "metrics: image shape mismatch");
  require(a.channels == 3, "metrics: rgb images required");
  require(mask.width == a.width && mask.height == a.height, "metrics: mask shape mismatch");
  double acc = 0.0;
  long n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(x, y, 0) <= 0.5f) continue;
      ++n;
      for (int c = 0; c < 3; ++c) {
        const double d = clamp01(a.at(x, y, c)) - clamp01(b.at(x, y, c));
        acc += d * d;
      }
    }
  require(n > 0, "metrics: mask selects no pixels");
  return acc / (3.0 * n);
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double compute_psnr(const Image& a, const Image& b) { return psnr_from_mse(compute_mse(a, b)); }

double compute_psnr_masked(const Image& a, const Image& b, const Image& mask) {
  return psnr_from_mse(compute_mse_masked(a, b, mask));
}

double compute_ssim(const Image& a, const Image& b) {
  require(a.same_shape(b), "metrics: image shape mismatch");
  require(a.channels == 3, "metrics: rgb images required");
  constexpr int W = 11;
  constexpr double kSigma = 1.5, kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  require(a.width >= W && a.height >= W, "metrics: image smaller than the SSIM window");

  double win[W];
  double wsum = 0.0;
  for (int i = 0; i < W; ++i) {
    const double d = i - (W - 1) / 2.0;
    win[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    wsum += win[i];
  }
  for (double& w : win) w /= wsum;

  const auto luma = [](const Image& img, int x, int y) {
    return 0.2126 * clamp01(img.at(x, y, 0)) + 0.7152 * clamp01(img.at(x, y, 1)) +
           0.0722 * clamp01(img.at(x, y, 2));
  };

  // Separable Gaussian filtering of the five moment maps, valid region only.
  const int w = a.width, h = a.height;
  std::vector<double> la(static_cast<size_t>(w) * h), lb(la.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      la[static_cast<size_t>(y) * w + x] = luma(a, x, y);
      lb[static_cast<size_t>(y) * w + x] = luma(b, x, y);
    }
  const int vw = w - W + 1, vh = h - W + 1;
  const auto filt = [&](const std::vector<double>& src, auto&& fn) {
    // horizontal pass
    std::vector<double> tmp(static_cast<size_t>(vw) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < vw; ++x) {
        double acc = 0.0;
        for (int i = 0; i < W; ++i) acc += win[i] * fn(src[static_cast<size_t>(y) * w + x + i]);
        tmp[static_cast<size_t>(y) * vw + x] = acc;
      }
    std::vector<double> out(static_cast<size_t>(vw) * vh);
    for (int y = 0; y < vh; ++y)
      for (int x = 0; x < vw; ++x) {
        double acc = 0.0;
        for (int i = 0; i < W; ++i) acc += win[i] * tmp[static_cast<size_t>(y + i) * vw + x];
        out[static_cast<size_t>(y) * vw + x] = acc;
      }
    return out;
  };
  const auto id = [](double v) { return v; };
  const auto sq = [](double v) { return v * v; };
  const std::vector<double> mu_a = filt(la, id), mu_b = filt(lb, id);
  const std::vector<double> ra_a = filt(la, sq), ra_b = filt(lb, sq);
  std::vector<double> lab(la.size());
  for (size_t i = 0; i < la.size(); ++i) lab[i] = la[i] * lb[i];
  const std::vector<double> ra_ab = filt(lab, id);

  double acc = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = ra_a[i] - ma * ma, vb = ra_b[i] - mb * mb;
    const double cov = ra_ab[i] - ma * mb;
    acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
           ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return acc / static_cast<double>(mu_a.size());
}

void MetricsReport::finalize() {
  std::vector<double> ps, ss, pa, sa;
  n_valid = n_failed = 0;
  for (const ImageScore& s : images) {
    if (!s.valid) {
      ++n_failed;
      continue;
    }
    ++n_valid;
    ps.push_back(s.psnr);
    ss.push_back(s.ssim);
    if (has_aug) {
      pa.push_back(s.psnr_aug);
      sa.push_back(s.ssim_aug);
    }
  }
  const auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  mean_psnr = mean(ps);
  mean_ssim = mean(ss);
  median_psnr = median(ps);
  median_ssim = median(ss);
  mean_psnr_aug = mean(pa);
  mean_ssim_aug = mean(sa);
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["protocol"] = protocol;
  j["has_aug"] = has_aug;
  j["aggregate"] = {{"mean_psnr", mean_psnr},   {"median_psnr", median_psnr},
                    {"mean_ssim", mean_ssim},   {"median_ssim", median_ssim},
                    {"mean_psnr_aug", mean_psnr_aug}, {"mean_ssim_aug", mean_ssim_aug},
                    {"n_valid", n_valid},       {"n_failed", n_failed}};
  nlohmann::json imgs = nlohmann::json::array();
  for (const ImageScore& s : images) {
    imgs.push_back({{"id", s.id},
                    {"psnr", s.psnr},
                    {"ssim", s.ssim},
                    {"lpips", nullptr},
                    {"psnr_full", s.psnr_full},
                    {"ssim_full", s.ssim_full},
                    {"psnr_aug", s.psnr_aug},
                    {"ssim_aug", s.ssim_aug},
                    {"adapt_initial_mse", s.adapt_initial_mse},
                    {"adapt_final_mse", s.adapt_final_mse},
                    {"valid", s.valid},
                    {"note", s.note}});
  }
  j["images"] = imgs;
  return j.dump(2);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "id,psnr,ssim,psnr_full,ssim_full,psnr_aug,ssim_aug,valid,note\n";
  for (const ImageScore& s : images) {
    out << s.id << ',' << s.psnr << ',' << s.ssim << ',' << s.psnr_full << ',' << s.ssim_full
        << ',' << s.psnr_aug << ',' << s.ssim_aug << ',' << (s.valid ? 1 : 0) << ',' << s.note
        << '\n';
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  require(out.good(), "cannot write " + path);
}

}  // namespace rerender
