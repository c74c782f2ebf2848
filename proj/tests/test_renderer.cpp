// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "rerender/renderer.hpp"

using namespace rerender;

namespace {

ModelConfig small_model_config() {
  ModelConfig cfg;
  cfg.pos_freqs = 4;
  cfg.dir_freqs = 2;
  cfg.geom_width = 32;
  cfg.geom_hidden = 2;
  cfg.feature_dim = 16;
  cfg.app_width = 32;
  cfg.app_hidden = 2;
  cfg.shadow_width = 16;
  cfg.shadow_hidden = 2;
  cfg.sky_width = 16;
  cfg.sky_hidden = 2;
  return cfg;
}

SkyDecoder random_frozen_decoder(uint64_t seed) {
  Rng rng(seed);
  SkyDecoder dec;
  dec.net.init({dec.latent_dim, 32, 32, 3 * dec.native_h * dec.native_w}, rng, nn::Act::ReLU,
               nn::Act::None, 0.05);
  dec.frozen = true;
  return dec;
}

}  // namespace

TEST_CASE("rays: principal point, unit norm, projection round-trip") {
  CameraSpec cam;
  cam.width = 3;
  cam.height = 3;
  cam.fx = cam.fy = 50.0;
  cam.cx = cam.cy = 1.5;
  const Ray center = ray_through_pixel(cam, 1, 1);
  CHECK((center.dir - Vec3(0, 0, 1)).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(center.origin.cwiseAbs().maxCoeff() == 0.0);

  CameraSpec look = camera_look_at(Vec3(1.5, 0.7, -2.0), Vec3::Zero(), 64, 48, 0.9);
  HashRng rng(41, 0);
  for (int k = 0; k < 20; ++k) {
    const int ix = int(rng.next_u64() % 64), iy = int(rng.next_u64() % 48);
    const Ray r = ray_through_pixel(look, ix, iy);
    CHECK(std::abs(r.dir.norm() - 1.0) <= 1e-12);
    const double depth = 0.5 + 3.0 * rng.next_u01();
    const Vec3 proj = project(look, r.origin + depth * r.dir);
    CHECK(proj.x() == doctest::Approx(ix + 0.5).epsilon(1e-4));
    CHECK(proj.y() == doctest::Approx(iy + 0.5).epsilon(1e-4));
    // project reports z along the optical axis, not ray arc length.
    const double z_expect = depth * look.R.col(2).dot(r.dir);
    CHECK(proj.z() == doctest::Approx(z_expect).epsilon(1e-9));
  }

  CHECK_THROWS(ray_through_pixel(cam, -1, 0));
  CHECK_THROWS(ray_through_pixel(cam, 3, 0));
  CHECK_THROWS(project(look, look.t - 0.5 * (look.R * Vec3(0, 0, 1))));
}

TEST_CASE("render options validation") {
  RenderOptions bad;
  bad.n_coarse = 0;
  CHECK_THROWS(bad.validate());
  bad = RenderOptions();
  bad.bound_radius = -1.0;
  CHECK_THROWS(bad.validate());
  RenderOptions ok;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("depth sampling: counts, ordering, sphere range") {
  Ray ray;
  ray.origin = Vec3(0, 0, -2);
  ray.dir = Vec3(0, 0, 1);
  const auto range = ray_sphere_range(ray, 1.25);
  REQUIRE(range.has_value());
  CHECK(range->first == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(range->second == doctest::Approx(3.25).epsilon(1e-12));

  Ray miss;
  miss.origin = Vec3(0, 3, -2);
  miss.dir = Vec3(0, 0, 1);
  CHECK(!ray_sphere_range(miss, 1.25).has_value());

  HashRng rng(7, 0);
  const VecX d = stratified_depths(0.75, 3.25, 24, rng);
  REQUIRE(d.size() == 24);
  for (int i = 0; i + 1 < d.size(); ++i) CHECK(d(i) < d(i + 1));
  CHECK(d.minCoeff() >= 0.75);
  CHECK(d.maxCoeff() < 3.25);
  // One sample per stratum.
  for (int i = 0; i < 24; ++i) {
    const double lo = 0.75 + 2.5 * i / 24.0, hi = 0.75 + 2.5 * (i + 1) / 24.0;
    CHECK(d(i) >= lo);
    CHECK(d(i) <= hi);
  }

  const SceneModel model = SceneModel::create(3, small_model_config());
  HashRng rng2(7, 1);
  const SampleResult coarse_only = sample_points(ray, 0.75, 3.25, 20, 0, model, rng2);
  CHECK(coarse_only.depths.size() == 20);
  CHECK(coarse_only.importance.size() == 0);
  HashRng rng3(7, 2);
  const SampleResult both = sample_points(ray, 0.75, 3.25, 20, 12, model, rng3);
  CHECK(both.depths.size() == 32);
  CHECK(both.importance.size() == 12);
  for (int i = 0; i + 1 < both.depths.size(); ++i) CHECK(both.depths(i) < both.depths(i + 1));
}

TEST_CASE("importance samples crowd the sphere crossing at high sharpness") {
  SceneModel model = SceneModel::create(5, small_model_config());
  model.log_sharpness = std::log(50.0);
  Ray ray;
  ray.origin = Vec3(0, 0, -2);
  ray.dir = Vec3(0, 0, 1);
  // Analytic surface hit of the init sphere (radius 0.5) at t = 1.5.
  int hits = 0, total = 0;
  for (int trial = 0; trial < 4; ++trial) {
    HashRng rng(100 + trial, 0);
    const SampleResult sr = sample_points(ray, 0.75, 3.25, 32, 32, model, rng);
    for (int i = 0; i < sr.importance.size(); ++i) {
      total += 1;
      if (std::abs(sr.importance(i) - 1.5) <= 0.1) hits += 1;
    }
  }
  CHECK(total == 4 * 32);
  CHECK(double(hits) / total >= 0.6);
}

TEST_CASE("alpha from sdf: hand values and non-invariance to shifts") {
  CHECK(alpha_from_sdf(0.4, 0.4, 10.0) == 0.0);
  CHECK(alpha_from_sdf(-0.2, 0.1, 10.0) == 0.0);  // increasing sdf clamps to 0
  const double expected = 1.0 - sigmoid(-10.0) / sigmoid(10.0);
  CHECK(alpha_from_sdf(1.0, -1.0, 10.0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.9999546).epsilon(1e-5));

  VecX sdf(4);
  sdf << 0.5, 0.2, -0.1, -0.4;
  const VecX a = alphas_from_sdf(sdf, 10.0);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(a(i) == doctest::Approx(alpha_from_sdf(sdf(i), sdf(i + 1), 10.0)).epsilon(1e-15));

  // The ratio form is not shift-invariant: occupancy depends on absolute sdf.
  const VecX b = alphas_from_sdf(sdf.array() + 0.3, 10.0);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("composite oracle cases") {
  const Vec3 sky(0.2, 0.4, 0.9);
  Mat3X colors(3, 3);
  colors.col(0) = Vec3(1, 0, 0);
  colors.col(1) = Vec3(0, 1, 0);
  colors.col(2) = Vec3(0, 0, 1);

  CompositeResult empty = composite(VecX::Zero(3), colors, sky);
  CHECK((empty.color - sky).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(empty.residual == 1.0);
  CHECK(empty.weights.cwiseAbs().maxCoeff() == 0.0);

  VecX opaque(3);
  opaque << 1.0, 0.5, 0.7;
  CompositeResult first = composite(opaque, colors, sky);
  CHECK((first.color - colors.col(0)).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(first.weights(0) == 1.0);
  CHECK(first.weights(1) == 0.0);
  CHECK(first.residual == 0.0);

  // Random case against an explicit transmittance recursion.
  HashRng rng(9, 0);
  const int K = 17;
  VecX alphas(K);
  Mat3X cols(3, K);
  for (int k = 0; k < K; ++k) {
    alphas(k) = rng.next_u01();
    cols.col(k) = Vec3(rng.next_u01(), rng.next_u01(), rng.next_u01());
  }
  CompositeResult cr = composite(alphas, cols, sky);
  Vec3 brute = Vec3::Zero();
  double t = 1.0, wsum = 0.0;
  for (int k = 0; k < K; ++k) {
    brute += t * alphas(k) * cols.col(k);
    CHECK(cr.weights(k) == doctest::Approx(t * alphas(k)).epsilon(1e-12));
    wsum += t * alphas(k);
    t *= 1.0 - alphas(k);
  }
  brute += t * sky;
  CHECK((cr.color - brute).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(cr.residual == doctest::Approx(t).epsilon(1e-12));
  CHECK(wsum + cr.residual == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("flat wall under uniform sky composites to pi times albedo") {
  // Analytic plane z = 0.2 with normal -z, marched from z = -1: the factored
  // color of every sample is a * (n.l)+ texel sum; the composite over a sharp
  // crossing recovers the Lambertian pi law.
  const int K = 60;
  VecX sdf(K + 1);
  for (int i = 0; i <= K; ++i) {
    const double z = -1.0 + 2.4 * i / K;
    sdf(i) = 0.2 - z;
  }
  const VecX alphas = alphas_from_sdf(sdf, 80.0);

  EnvMap uniform(16, 32);
  uniform.radiance.setOnes();
  const SolidAngleGrid dw = solid_angles(16, 32);
  const Vec3 albedo(0.6, 0.5, 0.4);
  const Vec3 c = shade_lambertian(albedo, 1.0, Vec3(0, 0, -1), uniform, dw);
  Mat3X cols(3, K);
  for (int k = 0; k < K; ++k) cols.col(k) = c;

  CompositeResult cr = composite(alphas, cols, Vec3::Zero());
  CHECK(cr.residual <= 1e-6);
  for (int i = 0; i < 3; ++i)
    CHECK(cr.color(i) == doctest::Approx(kPi * albedo(i)).epsilon(0.05));
}

TEST_CASE("rays that miss the bound sphere return the sky field exactly") {
  SceneModel model = SceneModel::create(11, small_model_config());
  const SkyDecoder dec = random_frozen_decoder(13);
  const FrameCodes& codes = model.codes_for("v0");
  const CameraSpec cam = camera_look_at(Vec3(0, 0, -4), Vec3::Zero(), 8, 8, 0.9);
  RenderOptions opts;
  opts.n_coarse = 12;
  opts.n_fine = 4;
  opts.seed = 21;
  const RenderResult res = render_image(model, dec, cam, codes, opts);
  CHECK(res.stats.sky_only_rays > 0);

  const Ray corner = ray_through_pixel(cam, 0, 0);
  REQUIRE(!ray_sphere_range(corner, opts.bound_radius).has_value());
  const Vec3 sky = eval_sky(model, corner.dir, codes.l_e);
  CHECK((res.rgb.rgb(0, 0) - sky).cwiseAbs().maxCoeff() <= 1e-6);  // float storage
  // Alpha map is empty there, and depth carries no surface.
  CHECK(res.alpha.at(0, 0, 0) == 0.0f);
}

TEST_CASE("reference pixel pipeline matches the batched renderer") {
  SceneModel model = SceneModel::create(17, small_model_config());
  const SkyDecoder dec = random_frozen_decoder(19);
  const FrameCodes& codes = model.codes_for("v1");
  const CameraSpec cam = camera_look_at(Vec3(0.6, 0.8, -2.5), Vec3::Zero(), 10, 10, 0.8);
  RenderOptions opts;
  opts.n_coarse = 16;
  opts.n_fine = 8;
  opts.seed = 33;
  const RenderResult res = render_image(model, dec, cam, codes, opts);
  double max_err = 0.0;
  for (int iy = 0; iy < 10; ++iy)
    for (int ix = 0; ix < 10; ++ix) {
      const Vec3 ref_c = ref::render_pixel(model, dec, cam, codes, ix, iy, opts);
      max_err = std::max(max_err, (res.rgb.rgb(ix, iy) - ref_c).cwiseAbs().maxCoeff());
    }
  CHECK(max_err <= 1e-5);
}

TEST_CASE("render is chunk-invariant and fills every layer") {
  SceneModel model = SceneModel::create(23, small_model_config());
  const SkyDecoder dec = random_frozen_decoder(29);
  const FrameCodes& codes = model.codes_for("v2");
  const CameraSpec cam = camera_look_at(Vec3(0, 1.0, -2.2), Vec3::Zero(), 9, 7, 0.85);
  RenderOptions opts;
  opts.n_coarse = 12;
  opts.n_fine = 6;
  opts.seed = 3;
  opts.chunk = 512;
  const RenderResult a = render_image(model, dec, cam, codes, opts);
  opts.chunk = 3;
  const RenderResult b = render_image(model, dec, cam, codes, opts);
  CHECK(mean_abs_diff(a.rgb, b.rgb) == 0.0);
  CHECK(mean_abs_diff(a.alpha, b.alpha) == 0.0);
  CHECK(mean_abs_diff(a.depth, b.depth) == 0.0);

  REQUIRE(a.rgb.width == 9);
  REQUIRE(a.rgb.height == 7);
  REQUIRE(a.albedo.same_shape(a.rgb));
  REQUIRE(a.normal.same_shape(a.rgb));
  REQUIRE(a.shadow.width == 9);
  REQUIRE(a.alpha.channels == 1);
  for (int iy = 0; iy < 7; ++iy)
    for (int ix = 0; ix < 9; ++ix) {
      CHECK(a.alpha.at(ix, iy, 0) >= 0.0f);
      CHECK(a.alpha.at(ix, iy, 0) <= 1.0f);
      CHECK(a.depth.at(ix, iy, 0) >= 0.0f);
    }
  CHECK(a.stats.mean_opacity >= 0.0);
  CHECK(a.stats.mean_opacity <= 1.0);
}

TEST_CASE("merge depths keeps order and size") {
  VecX a(3), b(3);  // each input sorted, with a duplicate across them
  a << 0.5, 1.0, 2.0;
  b << 0.25, 1.0, 1.5;
  const VecX m = merge_depths(a, b);
  REQUIRE(m.size() == 6);
  for (int i = 0; i + 1 < m.size(); ++i) CHECK(m(i) < m(i + 1));
  CHECK(m(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(m(5) == doctest::Approx(2.0).epsilon(1e-12));
}
