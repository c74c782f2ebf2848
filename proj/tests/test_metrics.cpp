// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "rerender/metrics.hpp"

using namespace rerender;

namespace {

Image noise_image(int w, int h, uint64_t seed) {
  Image img(w, h, 3);
  HashRng rng(seed, 0);
  for (auto& v : img.data) v = static_cast<float>(rng.next_u01());
  return img;
}

}  // namespace

TEST_CASE("psnr oracles") {
  const Image a = noise_image(12, 12, 81);
  CHECK(compute_psnr(a, a) == 99.0);
  CHECK(psnr_from_mse(0.0) == 99.0);
  CHECK(psnr_from_mse(1e-12) == doctest::Approx(99.0).epsilon(1e-12));

  // Constant offset of 0.1 on mid-gray: MSE = 0.01 -> exactly 20 dB.
  Image mid(12, 12, 3, 0.45f);
  Image off(12, 12, 3, 0.55f);
  CHECK(compute_mse(mid, off) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(compute_psnr(mid, off) == doctest::Approx(20.0).epsilon(1e-4));

  // Symmetric in its arguments.
  const Image b = noise_image(12, 12, 82);
  CHECK(compute_psnr(a, b) == compute_psnr(b, a));

  // Values outside [0,1] are clamped before scoring.
  Image hot = mid;
  Image hot2 = off;
  for (auto& v : hot.data) v += 40.0f;
  for (auto& v : hot2.data) v += 40.0f;
  CHECK(compute_psnr(hot, hot2) == 99.0);

  CHECK_THROWS(compute_psnr(a, Image(3, 3, 3)));
}

TEST_CASE("masked psnr scores only the selected pixels") {
  Image a(12, 12, 3, 0.2f);
  Image b = a;
  // Corrupt the left half only.
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) b.at(x, y, c) = 0.9f;
  Image right(12, 12, 1, 0.0f);
  for (int y = 0; y < 12; ++y)
    for (int x = 6; x < 12; ++x) right.at(x, y, 0) = 1.0f;
  CHECK(compute_psnr_masked(a, b, right) == 99.0);
  Image left(12, 12, 1, 0.0f);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 6; ++x) left.at(x, y, 0) = 1.0f;
  CHECK(compute_mse_masked(a, b, left) == doctest::Approx(0.49).epsilon(1e-6));
  CHECK_THROWS(compute_mse_masked(a, b, Image(12, 12, 1, 0.0f)));  // empty mask
}

TEST_CASE("ssim oracles") {
  const Image a = noise_image(16, 16, 83);
  CHECK(compute_ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Image b = noise_image(16, 16, 84);
  const double s = compute_ssim(a, b);
  CHECK(s < 0.9);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  // Mild noise scores higher than strong noise.
  Image mild = a, strong = a;
  HashRng rng(85, 0);
  for (size_t i = 0; i < a.data.size(); ++i) {
    const float n = static_cast<float>(rng.next_u01() - 0.5);
    mild.data[i] = std::min(1.0f, std::max(0.0f, mild.data[i] + 0.05f * n));
    strong.data[i] = std::min(1.0f, std::max(0.0f, strong.data[i] + 0.8f * n));
  }
  CHECK(compute_ssim(a, mild) > compute_ssim(a, strong));

  CHECK_THROWS(compute_ssim(Image(8, 8, 3, 0.5f), Image(8, 8, 3, 0.5f)));  // below 11x11
}

TEST_CASE("metrics report aggregates, serializes, and keeps lpips null") {
  MetricsReport rep;
  rep.protocol = "full-view";
  rep.has_aug = true;
  for (int i = 0; i < 3; ++i) {
    ImageScore s;
    s.id = "t" + std::to_string(i);
    s.psnr = 20.0 + 5.0 * i;  // 20, 25, 30
    s.ssim = 0.7 + 0.1 * i;
    s.psnr_full = s.psnr;
    s.ssim_full = s.ssim;
    s.psnr_aug = s.psnr + 1.0;
    s.ssim_aug = s.ssim + 0.01;
    rep.images.push_back(s);
  }
  ImageScore bad;
  bad.id = "broken";
  bad.valid = false;
  bad.note = "render failed";
  rep.images.push_back(bad);
  rep.finalize();

  CHECK(rep.n_valid == 3);
  CHECK(rep.n_failed == 1);
  CHECK(rep.mean_psnr == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(rep.median_psnr == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(rep.mean_ssim == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(rep.mean_psnr_aug == doctest::Approx(26.0).epsilon(1e-12));

  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j.at("protocol").get<std::string>() == "full-view");
  CHECK(j.at("aggregate").at("mean_psnr").get<double>() == doctest::Approx(25.0));
  REQUIRE(j.at("images").size() == 4);
  CHECK(j.at("images")[0].at("lpips").is_null());
  CHECK(j.at("images")[3].at("valid").get<bool>() == false);

  const std::string csv = rep.to_csv();
  CHECK(csv.find("id,") == 0);
  CHECK(csv.find("psnr") != std::string::npos);
  CHECK(csv.find("t2") != std::string::npos);
  // One header plus one row per image.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("median uses the middle of an even count") {
  MetricsReport rep;
  rep.protocol = "left-half";
  for (double p : {10.0, 20.0, 30.0, 40.0}) {
    ImageScore s;
    s.psnr = p;
    s.ssim = 0.5;
    rep.images.push_back(s);
  }
  rep.finalize();
  CHECK(rep.median_psnr == doctest::Approx(25.0).epsilon(1e-12));
}
