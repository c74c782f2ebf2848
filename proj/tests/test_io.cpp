// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "rerender/checkpoint.hpp"
#include "rerender/synthdata.hpp"

using namespace rerender;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.pos_freqs = 3;
  cfg.dir_freqs = 2;
  cfg.geom_width = 24;
  cfg.geom_hidden = 2;
  cfg.feature_dim = 12;
  cfg.app_width = 24;
  cfg.app_hidden = 2;
  cfg.shadow_width = 12;
  cfg.shadow_hidden = 2;
  cfg.sky_width = 12;
  cfg.sky_hidden = 2;
  cfg.dim_le = 6;
  cfg.dim_ls = 4;
  cfg.dim_lt = 4;
  return cfg;
}

bool dir_has_tmp_files(const std::string& dir) {
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().string().find(".tmp") != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("exr image round trip is lossless") {
  std::filesystem::create_directories("test_tmp/io");
  Image img(7, 5, 3);
  HashRng rng(61, 0);
  for (auto& v : img.data) v = static_cast<float>(10.0 * rng.next_u01() - 2.0);
  img.at(3, 2, 1) = 1234.5f;  // HDR value far outside [0,1]
  save_exr_image("test_tmp/io/a.exr", img);
  const Image back = load_exr_image("test_tmp/io/a.exr");
  REQUIRE(back.same_shape(img));
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("mask png round trip is exact") {
  Image mask(9, 4, 1);
  HashRng rng(62, 0);
  for (auto& v : mask.data) v = rng.next_u01() < 0.5 ? 0.0f : 1.0f;
  save_mask_png("test_tmp/io/m.png", mask);
  const Image back = load_mask_png("test_tmp/io/m.png");
  REQUIRE(back.same_shape(mask));
  for (size_t i = 0; i < mask.data.size(); ++i) CHECK(back.data[i] == mask.data[i]);
}

TEST_CASE("png save/load round trip within 8-bit tolerance") {
  Image img(6, 6, 3);
  HashRng rng(63, 0);
  for (auto& v : img.data) v = static_cast<float>(rng.next_u01());
  save_png("test_tmp/io/c.png", img);
  const Image back = load_png("test_tmp/io/c.png", true);
  REQUIRE(back.same_shape(img));
  CHECK(mean_abs_diff(img, back) <= 1.0 / 100.0);  // gamma-coded 8-bit quantization
}

TEST_CASE("camera json round trip") {
  const CameraSpec cam = camera_look_at(Vec3(1.2, -0.4, -2.6), Vec3(0.1, 0.2, 0), 48, 36, 0.82);
  const CameraSpec back = camera_from_json(camera_to_json(cam));
  CHECK(back.width == cam.width);
  CHECK(back.height == cam.height);
  CHECK(back.fx == doctest::Approx(cam.fx).epsilon(1e-12));
  CHECK(back.fy == doctest::Approx(cam.fy).epsilon(1e-12));
  CHECK(back.cx == doctest::Approx(cam.cx).epsilon(1e-12));
  CHECK(back.cy == doctest::Approx(cam.cy).epsilon(1e-12));
  CHECK((back.R - cam.R).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((back.t - cam.t).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("tensor file kind mismatch and missing tensors are rejected") {
  TensorFile tf;
  tf.kind = "scene_model";
  tf.put("x", MatX(MatX::Ones(2, 3)));
  save_tensor_file("test_tmp/io/t.rrck", tf);
  const TensorFile back = load_tensor_file("test_tmp/io/t.rrck");
  CHECK(back.kind == "scene_model");
  CHECK(back.has("x"));
  CHECK(!back.has("y"));
  CHECK_THROWS(back.at("y"));
  CHECK((back.at("x") - MatX::Ones(2, 3)).cwiseAbs().maxCoeff() == 0.0);

  // A realism loader pointed at a scene-model file must refuse it.
  CHECK_THROWS(load_realism("test_tmp/io/t.rrck"));
  CHECK_THROWS(load_tensor_file("test_tmp/io/no_such_file.rrck"));
}

TEST_CASE("scene model checkpoint restores every trainable piece") {
  SceneModel model = SceneModel::create(71, tiny_config());
  model.log_sharpness = 1.234;
  model.codes_for("f3").l_e.array() += 0.25;  // materialize + perturb a code
  model.codes_for("f9");
  save_scene_model("test_tmp/io/scene.rrck", model);
  const SceneModel back = load_scene_model("test_tmp/io/scene.rrck");

  CHECK(back.seed == model.seed);
  CHECK(back.cfg.app_width == model.cfg.app_width);
  CHECK(back.geometry_checksum() == model.geometry_checksum());
  CHECK(back.log_sharpness == model.log_sharpness);
  REQUIRE(back.codes.size() == 2);
  CHECK((back.codes_at("f3").l_e - model.codes_at("f3").l_e).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.codes_at("f9").l_s - model.codes_at("f9").l_s).cwiseAbs().maxCoeff() == 0.0);

  // Forward evaluations agree bitwise.
  const Vec3 x(0.3, -0.2, 0.4);
  CHECK(eval_sdf(back, x) == eval_sdf(model, x));
  CHECK((eval_albedo(back, x) - eval_albedo(model, x)).cwiseAbs().maxCoeff() == 0.0);

  CHECK(!dir_has_tmp_files("test_tmp/io"));
}

TEST_CASE("stage-1 heads checkpoint restores radiance and embeddings") {
  SceneModel scene = SceneModel::create(73, tiny_config());
  Stage1Model s1 = Stage1Model::create(scene, 74);
  s1.emb_a_for("v0").array() += 0.5;
  s1.emb_tau_for("v0");
  save_stage1_heads("test_tmp/io/heads.rrck", s1);

  SceneModel scene2 = SceneModel::create(73, tiny_config());
  Stage1Model restored = Stage1Model::create(scene2, 9999);
  load_stage1_heads("test_tmp/io/heads.rrck", restored);
  CHECK(restored.seed == s1.seed);
  CHECK(restored.dim_emb_a == s1.dim_emb_a);
  REQUIRE(restored.emb_a.count("v0") == 1);
  CHECK((restored.emb_a.at("v0") - s1.emb_a.at("v0")).cwiseAbs().maxCoeff() == 0.0);
  const auto& lin = s1.radiance.layers.back();
  const auto& rlin = restored.radiance.layers.back();
  CHECK((lin.W - rlin.W).cwiseAbs().maxCoeff() == 0.0);
  CHECK((lin.b - rlin.b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sky pretrain and realism checkpoints round trip") {
  Rng rng(75);
  SkyPretrainResult r;
  r.decoder.net.init({16, 24, 3 * 32 * 64}, rng, nn::Act::ReLU, nn::Act::None, 0.05);
  r.decoder.frozen = true;
  r.encoder.init({3 * 16 * 32, 24, 16}, rng, nn::Act::ReLU, nn::Act::None, 0.05);
  r.heldout_log_mae = 0.123;
  r.final_train_loss = 0.456;
  save_sky_pretrain("test_tmp/io/sky.rrck", r);
  const SkyPretrainResult back = load_sky_pretrain("test_tmp/io/sky.rrck");
  CHECK(back.heldout_log_mae == r.heldout_log_mae);
  CHECK(back.final_train_loss == r.final_train_loss);
  CHECK(back.decoder.frozen);
  const EnvMap a = decode_envmap(r.decoder, VecX::Zero(16));
  const EnvMap b = decode_envmap(back.decoder, VecX::Zero(16));
  CHECK((a.radiance - b.radiance).cwiseAbs().maxCoeff() == 0.0);

  const SkyDecoder dec_only = load_sky_decoder("test_tmp/io/sky.rrck");
  const EnvMap c = decode_envmap(dec_only, VecX::Zero(16));
  CHECK((a.radiance - c.radiance).cwiseAbs().maxCoeff() == 0.0);

  const RealismNet net = RealismNet::create(77);
  save_realism("test_tmp/io/real.rrck", net);
  RealismNet rback = load_realism("test_tmp/io/real.rrck");
  CHECK(rback.checksum() == net.checksum());
}
