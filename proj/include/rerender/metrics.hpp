// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rerender/image.hpp"

namespace rerender {

/// Mean squared error over rgb, both images clamped to [0,1] first.
double compute_mse(const Image& a, const Image& b);
/// As above over mask==1 pixels only (mask single-channel, same size).
double compute_mse_masked(const Image& a, const Image& b, const Image& mask);

/// 10*log10(1/MSE) on clamped linear rgb, capped at 99 dB.
double compute_psnr(const Image& a, const Image& b);
double compute_psnr_masked(const Image& a, const Image& b, const Image& mask);
double psnr_from_mse(double mse);

/// Single-scale SSIM on the luma of clamped linear rgb: 11x11 Gaussian
/// window (sigma 1.5), k1=0.01, k2=0.03, L=1, valid-window mean. Images must
/// be at least 11x11.
double compute_ssim(const Image& a, const Image& b);

struct ImageScore {
  std::string id;
  double psnr = 0.0, ssim = 0.0;            // protocol's primary region
  double psnr_full = 0.0, ssim_full = 0.0;  // whole view
  double psnr_aug = 0.0, ssim_aug = 0.0;    // with realism augmentation
  double adapt_initial_mse = 0.0, adapt_final_mse = 0.0;
  bool valid = true;
  std::string note;
};

struct MetricsReport {
  std::string protocol;  // full-view | left-half | extrapolation
  bool has_aug = false;
  std::vector<ImageScore> images;
  double mean_psnr = 0.0, median_psnr = 0.0;
  double mean_ssim = 0.0, median_ssim = 0.0;
  double mean_psnr_aug = 0.0, mean_ssim_aug = 0.0;
  int n_valid = 0, n_failed = 0;

  void finalize();  // aggregates over valid images
  std::string to_json() const;  // lpips reported as null (not computed)
  std::string to_csv() const;
};

void write_text_file(const std::string& path, const std::string& text);

}  // namespace rerender
