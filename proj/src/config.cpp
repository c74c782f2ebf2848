// SPDX-License-Identifier: Apache-2.0
#include "rerender/config.hpp"

#include <exception>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rerender/core.hpp"

namespace rerender {

namespace {

using json = nlohmann::json;

/// Pulls known keys out of a JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name)
      : j_(j), name_(std::move(name)), exceptions_(std::uncaught_exceptions()) {
    require(j.is_object(), "config: section '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() != exceptions_) return;  // already unwinding
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail("config: unknown key '" + key + "' in section '" + name_ + "'");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) out = j_.at(key).get<T>();
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) { return j_.at(key); }

 private:
  const json& j_;
  std::string name_;
  int exceptions_;
  std::set<std::string> seen_;
};

json dataset_json(const DatasetSpec& d) {
  return {{"n_views", d.n_views},       {"image_size", d.image_size},
          {"occluder_prob", d.occluder_prob}, {"orbit_radius", d.orbit_radius},
          {"fov_deg", d.fov_deg},       {"test_every", d.test_every}};
}

json model_json(const ModelConfig& m) {
  return {{"pos_freqs", m.pos_freqs},     {"dir_freqs", m.dir_freqs},
          {"geom_width", m.geom_width},   {"geom_hidden", m.geom_hidden},
          {"feature_dim", m.feature_dim}, {"app_width", m.app_width},
          {"app_hidden", m.app_hidden},   {"shadow_width", m.shadow_width},
          {"shadow_hidden", m.shadow_hidden}, {"sky_width", m.sky_width},
          {"sky_hidden", m.sky_hidden},   {"dim_le", m.dim_le},
          {"dim_ls", m.dim_ls},           {"dim_lt", m.dim_lt},
          {"init_inv_sharpness", m.init_inv_sharpness}, {"query_radius", m.query_radius},
          {"code_init_std", m.code_init_std}};
}

json train_json(const TrainConfig& t) {
  return {{"lambda_c", t.lambda_c},       {"lambda_m", t.lambda_m},
          {"lambda_re", t.lambda_re},     {"lambda_u", t.lambda_u},
          {"lambda_cr", t.lambda_cr},     {"lambda_rs", t.lambda_rs},
          {"lambda_rt", t.lambda_rt},     {"beta_min", t.beta_min},
          {"steps", t.steps},             {"rays_per_batch", t.rays_per_batch},
          {"n_coarse", t.n_coarse},       {"n_fine", t.n_fine},
          {"lr", t.lr},                   {"lr_codes", t.lr_codes},
          {"bound_radius", t.bound_radius}, {"eikonal_samples", t.eikonal_samples},
          {"eikonal_radius", t.eikonal_radius}, {"fd_eps", t.fd_eps},
          {"prune_threshold", t.prune_threshold}, {"checksum_every", t.checksum_every},
          {"log_every", t.log_every}};
}

json render_json(const RenderOptions& r) {
  return {{"n_coarse", r.n_coarse},
          {"n_fine", r.n_fine},
          {"bound_radius", r.bound_radius},
          {"chunk", r.chunk}};
}

void read_dataset(const json& j, DatasetSpec& d) {
  Section s(j, "dataset");
  s.get("n_views", d.n_views);
  s.get("image_size", d.image_size);
  s.get("occluder_prob", d.occluder_prob);
  s.get("orbit_radius", d.orbit_radius);
  s.get("fov_deg", d.fov_deg);
  s.get("test_every", d.test_every);
}

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.get("pos_freqs", m.pos_freqs);
  s.get("dir_freqs", m.dir_freqs);
  s.get("geom_width", m.geom_width);
  s.get("geom_hidden", m.geom_hidden);
  s.get("feature_dim", m.feature_dim);
  s.get("app_width", m.app_width);
  s.get("app_hidden", m.app_hidden);
  s.get("shadow_width", m.shadow_width);
  s.get("shadow_hidden", m.shadow_hidden);
  s.get("sky_width", m.sky_width);
  s.get("sky_hidden", m.sky_hidden);
  s.get("dim_le", m.dim_le);
  s.get("dim_ls", m.dim_ls);
  s.get("dim_lt", m.dim_lt);
  s.get("init_inv_sharpness", m.init_inv_sharpness);
  s.get("query_radius", m.query_radius);
  s.get("code_init_std", m.code_init_std);
}

void read_train(const json& j, const std::string& name, TrainConfig& t) {
  Section s(j, name);
  s.get("lambda_c", t.lambda_c);
  s.get("lambda_m", t.lambda_m);
  s.get("lambda_re", t.lambda_re);
  s.get("lambda_u", t.lambda_u);
  s.get("lambda_cr", t.lambda_cr);
  s.get("lambda_rs", t.lambda_rs);
  s.get("lambda_rt", t.lambda_rt);
  s.get("beta_min", t.beta_min);
  s.get("steps", t.steps);
  s.get("rays_per_batch", t.rays_per_batch);
  s.get("n_coarse", t.n_coarse);
  s.get("n_fine", t.n_fine);
  s.get("lr", t.lr);
  s.get("lr_codes", t.lr_codes);
  s.get("bound_radius", t.bound_radius);
  s.get("eikonal_samples", t.eikonal_samples);
  s.get("eikonal_radius", t.eikonal_radius);
  s.get("fd_eps", t.fd_eps);
  s.get("prune_threshold", t.prune_threshold);
  s.get("checksum_every", t.checksum_every);
  s.get("log_every", t.log_every);
}

void read_render(const json& j, RenderOptions& r) {
  Section s(j, "render");
  s.get("n_coarse", r.n_coarse);
  s.get("n_fine", r.n_fine);
  s.get("bound_radius", r.bound_radius);
  s.get("chunk", r.chunk);
}

}  // namespace

void PipelineConfig::apply_seed(uint64_t master) {
  seed = master;
  scene_seed = hash_combine(master, 1);
  dataset.seed = hash_combine(master, 2);
  model_seed = hash_combine(master, 3);
  heads_seed = hash_combine(master, 4);
  sky_seed = hash_combine(master, 5);
  stage1.seed = hash_combine(master, 6);
  stage2.seed = hash_combine(master, 7);
  render.seed = hash_combine(master, 8);
  adapt.seed = hash_combine(master, 9);
  adapt.render = render;
  realism.seed = hash_combine(master, 10);
  finetune.seed = hash_combine(master, 11);
  photo3d.render = render;
}

void PipelineConfig::validate() const {
  dataset.validate();
  stage1.validate();
  stage2.validate();
  render.validate();
  require(scene_preset == "minimal-sphere" || scene_preset == "fountain-like" ||
              scene_preset == "facade-like",
          "config: unknown scene preset '" + scene_preset + "'");
  require(sky_samples >= 8, "config: sky_samples too small");
  require(widen >= 1.0, "config: widen must be >= 1");
  require(feather_px >= 1, "config: feather_px must be positive");
  require(eval_protocol == "full-view" || eval_protocol == "left-half" ||
              eval_protocol == "swap" || eval_protocol == "ablation",
          "config: unknown eval protocol '" + eval_protocol + "'");
}

std::string PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["scene"] = {{"preset", scene_preset}};
  j["dataset"] = dataset_json(dataset);
  j["model"] = model_json(model);
  j["stage1"] = train_json(stage1);
  j["stage2"] = train_json(stage2);
  j["stage2_opts"] = {{"use_tone", stage2_opts.use_tone}, {"use_shadow", stage2_opts.use_shadow}};
  j["sky"] = {{"steps", sky.steps},
              {"batch", sky.batch},
              {"lr", sky.lr},
              {"holdout_frac", sky.holdout_frac},
              {"log_eps", sky.log_eps},
              {"fail_threshold", sky.fail_threshold},
              {"samples", sky_samples}};
  j["render"] = render_json(render);
  j["adapt"] = {{"steps", adapt.steps},
                {"rays_per_batch", adapt.rays_per_batch},
                {"lr", adapt.lr},
                {"eval_every", adapt.eval_every},
                {"n_coarse", adapt.n_coarse},
                {"n_fine", adapt.n_fine},
                {"prune_threshold", adapt.prune_threshold}};
  j["realism"] = {{"n_images", realism.n_images},
                  {"image_size", realism.image_size},
                  {"steps", realism.steps},
                  {"lr", realism.lr},
                  {"batch_pixels", realism.batch_pixels}};
  j["finetune"] = {{"steps", finetune.steps},
                   {"lr", finetune.lr},
                   {"batch_pixels", finetune.batch_pixels}};
  j["extrapolate"] = {{"widen", widen}, {"feather_px", feather_px}, {"use_realism", use_realism}};
  j["photo3d"] = {{"n_frames", photo3d.n_frames},
                  {"orbit_deg_per_frame", photo3d.orbit_deg_per_frame},
                  {"dolly_per_frame", photo3d.dolly_per_frame}};
  j["eval"] = {{"protocol", eval_protocol}};
  j["derived_seeds"] = {{"scene", scene_seed}, {"dataset", dataset.seed},
                        {"model", model_seed}, {"heads", heads_seed},
                        {"sky", sky_seed},     {"stage1", stage1.seed},
                        {"stage2", stage2.seed}, {"render", render.seed},
                        {"adapt", adapt.seed}, {"realism", realism.seed},
                        {"finetune", finetune.seed}};
  return j.dump(2);
}

PipelineConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  PipelineConfig cfg;
  uint64_t master = 0;
  {
    Section root(j, "(root)");
    root.get("seed", master);
    if (root.has("scene")) {
      Section s(root.at("scene"), "scene");
      s.get("preset", cfg.scene_preset);
    }
    if (root.has("dataset")) read_dataset(root.at("dataset"), cfg.dataset);
    if (root.has("model")) read_model(root.at("model"), cfg.model);
    if (root.has("stage1")) read_train(root.at("stage1"), "stage1", cfg.stage1);
    if (root.has("stage2")) read_train(root.at("stage2"), "stage2", cfg.stage2);
    if (root.has("stage2_opts")) {
      Section s(root.at("stage2_opts"), "stage2_opts");
      s.get("use_tone", cfg.stage2_opts.use_tone);
      s.get("use_shadow", cfg.stage2_opts.use_shadow);
    }
    if (root.has("sky")) {
      Section s(root.at("sky"), "sky");
      s.get("steps", cfg.sky.steps);
      s.get("batch", cfg.sky.batch);
      s.get("lr", cfg.sky.lr);
      s.get("holdout_frac", cfg.sky.holdout_frac);
      s.get("log_eps", cfg.sky.log_eps);
      s.get("fail_threshold", cfg.sky.fail_threshold);
      s.get("samples", cfg.sky_samples);
    }
    if (root.has("render")) read_render(root.at("render"), cfg.render);
    if (root.has("adapt")) {
      Section s(root.at("adapt"), "adapt");
      s.get("steps", cfg.adapt.steps);
      s.get("rays_per_batch", cfg.adapt.rays_per_batch);
      s.get("lr", cfg.adapt.lr);
      s.get("eval_every", cfg.adapt.eval_every);
      s.get("n_coarse", cfg.adapt.n_coarse);
      s.get("n_fine", cfg.adapt.n_fine);
      s.get("prune_threshold", cfg.adapt.prune_threshold);
    }
    if (root.has("realism")) {
      Section s(root.at("realism"), "realism");
      s.get("n_images", cfg.realism.n_images);
      s.get("image_size", cfg.realism.image_size);
      s.get("steps", cfg.realism.steps);
      s.get("lr", cfg.realism.lr);
      s.get("batch_pixels", cfg.realism.batch_pixels);
    }
    if (root.has("finetune")) {
      Section s(root.at("finetune"), "finetune");
      s.get("steps", cfg.finetune.steps);
      s.get("lr", cfg.finetune.lr);
      s.get("batch_pixels", cfg.finetune.batch_pixels);
    }
    if (root.has("extrapolate")) {
      Section s(root.at("extrapolate"), "extrapolate");
      s.get("widen", cfg.widen);
      s.get("feather_px", cfg.feather_px);
      s.get("use_realism", cfg.use_realism);
    }
    if (root.has("photo3d")) {
      Section s(root.at("photo3d"), "photo3d");
      s.get("n_frames", cfg.photo3d.n_frames);
      s.get("orbit_deg_per_frame", cfg.photo3d.orbit_deg_per_frame);
      s.get("dolly_per_frame", cfg.photo3d.dolly_per_frame);
    }
    if (root.has("eval")) {
      Section s(root.at("eval"), "eval");
      s.get("protocol", cfg.eval_protocol);
    }
  }
  cfg.apply_seed(master);
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

}  // namespace rerender
