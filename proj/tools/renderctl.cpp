// SPDX-License-Identifier: Apache-2.0
// Pipeline driver: synthetic data, two-stage training, rendering, photo
// adaptation, extrapolation, 3D photos, and evaluation.
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rerender/checkpoint.hpp"
#include "rerender/config.hpp"
#include "rerender/eval.hpp"

namespace fs = std::filesystem;
using namespace rerender;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "runs/default";
  uint64_t seed = 0;
  bool seed_set = false;
};

PipelineConfig resolve_config(const CommonArgs& args) {
  PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  if (args.seed_set || args.config_path.empty()) cfg.apply_seed(args.seed);
  cfg.validate();
  return cfg;
}

/// Every command echoes its fully resolved config beside its outputs.
void echo_config(const PipelineConfig& cfg, const std::string& out_dir,
                 const std::string& command) {
  fs::create_directories(out_dir);
  nlohmann::json j = nlohmann::json::parse(cfg.to_json());
  j["command"] = command;
  write_text_file(out_dir + "/config_resolved.json", j.dump(2) + "\n");
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "run directory for inputs/outputs");
  cmd->add_option("--seed", args.seed, "master seed (overrides the config's)")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

std::string data_dir(const CommonArgs& a) { return a.out_dir + "/data"; }
std::string sky_path(const CommonArgs& a) { return a.out_dir + "/sky_decoder.rrck"; }
std::string stage1_scene_path(const CommonArgs& a) { return a.out_dir + "/stage1_scene.rrck"; }
std::string stage1_heads_path(const CommonArgs& a) { return a.out_dir + "/stage1_heads.rrck"; }
std::string distilled_dir(const CommonArgs& a) { return a.out_dir + "/distilled"; }
std::string model_path(const CommonArgs& a) { return a.out_dir + "/model.rrck"; }
std::string realism_path(const CommonArgs& a) { return a.out_dir + "/realism.rrck"; }

Dataset load_run_dataset(const CommonArgs& a) {
  Dataset ds = load_dataset(data_dir(a));
  validate_dataset(ds);
  return ds;
}

SkyDecoder load_run_sky(const CommonArgs& a) { return load_sky_decoder(sky_path(a)); }

DistillResult distill_handle(const CommonArgs& a, const Dataset& ds) {
  DistillResult d;
  d.dir = distilled_dir(a);
  for (int i : ds.train_indices()) d.frame_ids.push_back(ds.frames[i].id);
  return d;
}

int cmd_gen_data(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "gen-data");
  const SyntheticScene scene = make_scene(cfg.scene_preset, cfg.scene_seed);
  const Dataset ds = generate_dataset(scene, cfg.dataset, data_dir(args));
  std::cout << "wrote " << ds.frames.size() << " views to " << data_dir(args) << "\n";
  return 0;
}

int cmd_pretrain_sky(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "pretrain-sky");
  const SkyPretrainResult r = pretrain_sky_decoder(cfg.sky_samples, cfg.sky_seed, cfg.sky);
  save_sky_pretrain(sky_path(args), r);
  std::cout << "sky decoder held-out log MAE " << r.heldout_log_mae << " -> " << sky_path(args)
            << "\n";
  return 0;
}

int cmd_train_geometry(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "train-geometry");
  const Dataset ds = load_run_dataset(args);
  auto scene = std::make_unique<SceneModel>(SceneModel::create(cfg.model_seed, cfg.model));
  Stage1Model stage1 = Stage1Model::create(*scene, cfg.heads_seed);
  TrainConfig tc = cfg.stage1;
  tc.log_path = args.out_dir + "/stage1_log.jsonl";
  const TrainReport rep = train_geometry(stage1, ds, tc);
  save_scene_model(stage1_scene_path(args), *scene);
  save_stage1_heads(stage1_heads_path(args), stage1);
  std::cout << "stage 1 done: loss " << rep.final_loss << ", batch psnr " << rep.final_psnr_batch
            << " dB after " << rep.steps_run << " steps\n";
  return 0;
}

int cmd_distill(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "distill");
  const Dataset ds = load_run_dataset(args);
  auto scene = std::make_unique<SceneModel>(load_scene_model(stage1_scene_path(args)));
  Stage1Model stage1 = Stage1Model::create(*scene, cfg.heads_seed);
  load_stage1_heads(stage1_heads_path(args), stage1);
  const DistillResult d = distill_occlusion_free(stage1, ds, cfg.stage1, distilled_dir(args));
  std::cout << "distilled " << d.frame_ids.size() << " occlusion-free images to " << d.dir << "\n";
  return 0;
}

int cmd_train_render(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "train-render");
  const Dataset ds = load_run_dataset(args);
  auto model = std::make_unique<SceneModel>(load_scene_model(stage1_scene_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  const auto distilled = load_distilled(distill_handle(args, ds));
  TrainConfig tc = cfg.stage2;
  tc.log_path = args.out_dir + "/stage2_log.jsonl";
  const TrainReport rep = train_rerender(*model, decoder, distilled, ds, tc, cfg.stage2_opts);
  save_scene_model(model_path(args), *model);
  std::cout << "stage 2 done: loss " << rep.final_loss << ", batch psnr " << rep.final_psnr_batch
            << " dB after " << rep.steps_run << " steps\n";
  return 0;
}

int cmd_render(const CommonArgs& args, const std::string& frame_id) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "render");
  const Dataset ds = load_run_dataset(args);
  auto model = std::make_unique<SceneModel>(load_scene_model(model_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  const Frame& frame = ds.frame_by_id(frame_id);
  FrameCodes codes;
  if (model->codes.count(frame.id)) {
    codes = model->codes_at(frame.id);
  } else {
    codes = condition_codes(*model, ds, frame);  // held-out view
  }
  const RenderResult r = render_image(*model, decoder, frame.cam, codes, cfg.render);
  const std::string dir = args.out_dir + "/renders";
  fs::create_directories(dir);
  save_exr_image(dir + "/" + frame.id + ".exr", r.rgb);
  save_png(dir + "/" + frame.id + ".png", r.rgb);
  save_png(dir + "/" + frame.id + "_albedo.png", r.albedo);
  save_png(dir + "/" + frame.id + "_shadow.png", r.shadow, false);
  save_png(dir + "/" + frame.id + "_normal.png", r.normal, false);
  save_png(dir + "/" + frame.id + "_alpha.png", r.alpha, false);
  std::cout << "rendered " << frame.id << " (psnr vs gt "
            << compute_psnr(r.rgb, frame.image) << " dB) to " << dir << "\n";
  return 0;
}

/// Photo inputs for adapt/extrapolate/photo3d: a dataset frame id.
struct PhotoJob {
  CameraSpec cam;
  Image photo, mask;
  std::string id;
};

PhotoJob photo_job(const Dataset& ds, const std::string& frame_id, bool left_half_only) {
  const Frame& frame = ds.frame_by_id(frame_id);
  PhotoJob job;
  job.id = frame.id;
  job.cam = frame.cam;
  job.photo = frame.image;
  job.mask = left_half_only ? left_half_mask(frame) : Image(frame.cam.width, frame.cam.height, 1,
                                                            1.0f);
  if (!left_half_only && frame.mask_occluder.width > 0)
    for (int y = 0; y < job.mask.height; ++y)
      for (int x = 0; x < job.mask.width; ++x)
        if (frame.mask_occluder.at(x, y, 0) > 0.5f) job.mask.at(x, y, 0) = 0.0f;
  return job;
}

void write_codes_json(const std::string& path, const FrameCodes& codes, const AdaptResult& res) {
  nlohmann::json j;
  const auto vec = [](const VecX& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    return out;
  };
  j["l_e"] = vec(codes.l_e);
  j["l_s"] = vec(codes.l_s);
  j["l_t"] = vec(codes.l_t);
  j["initial_mse"] = res.initial_mse;
  j["final_mse"] = res.final_mse;
  j["best_step"] = res.best_step;
  j["mse_history"] = res.mse_history;
  write_text_file(path, j.dump(2) + "\n");
}

int cmd_adapt(const CommonArgs& args, const std::string& frame_id, bool left_half_only) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "adapt");
  const Dataset ds = load_run_dataset(args);
  auto model = std::make_unique<SceneModel>(load_scene_model(model_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  const PhotoJob job = photo_job(ds, frame_id, left_half_only);
  const AdaptResult res = adapt_photo(*model, decoder, job.cam, job.photo, job.mask, cfg.adapt);
  const std::string dir = args.out_dir + "/adapt_" + job.id;
  fs::create_directories(dir);
  write_codes_json(dir + "/codes.json", res.codes, res);
  const RenderResult r = render_image(*model, decoder, job.cam, res.codes, cfg.render);
  save_png(dir + "/render.png", r.rgb);
  save_exr_image(dir + "/render.exr", r.rgb);
  std::cout << "adapted to " << job.id << ": mse " << res.initial_mse << " -> " << res.final_mse
            << " (best step " << res.best_step << ")\n";
  return 0;
}

int cmd_extrapolate(const CommonArgs& args, const std::string& frame_id) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "extrapolate");
  const Dataset ds = load_run_dataset(args);
  auto model = std::make_unique<SceneModel>(load_scene_model(model_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  const PhotoJob job = photo_job(ds, frame_id, false);
  RealismNet realism;
  if (cfg.use_realism) {
    if (fs::exists(realism_path(args))) {
      realism = load_realism(realism_path(args));
    } else {
      realism = pretrain_realism(cfg.realism);
      save_realism(realism_path(args), realism);
    }
  }
  ExtrapolateOptions opts;
  opts.widen = cfg.widen;
  opts.feather_px = cfg.feather_px;
  opts.use_realism = cfg.use_realism;
  opts.adapt = cfg.adapt;
  opts.finetune = cfg.finetune;
  opts.render = cfg.render;
  const ExtrapolateResult res = extrapolate(*model, decoder, cfg.use_realism ? &realism : nullptr,
                                            job.cam, job.photo, job.mask, opts);
  const std::string dir = args.out_dir + "/extrapolate_" + job.id;
  fs::create_directories(dir);
  save_png(dir + "/composite.png", res.composite);
  save_exr_image(dir + "/composite.exr", res.composite);
  save_png(dir + "/wide_render.png", res.wide_render);
  save_png(dir + "/augmented.png", res.augmented);
  write_codes_json(dir + "/codes.json", res.adapt.codes, res.adapt);
  std::cout << "extrapolated " << job.id << " to " << res.wide_cam.width << "x"
            << res.wide_cam.height << " (adapt mse " << res.adapt.initial_mse << " -> "
            << res.adapt.final_mse << ")\n";
  return 0;
}

int cmd_photo3d(const CommonArgs& args, const std::string& frame_id) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "photo3d");
  const Dataset ds = load_run_dataset(args);
  auto model = std::make_unique<SceneModel>(load_scene_model(model_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  const PhotoJob job = photo_job(ds, frame_id, false);
  const AdaptResult adapted =
      adapt_photo(*model, decoder, job.cam, job.photo, job.mask, cfg.adapt);
  Photo3dOptions opts = cfg.photo3d;
  opts.render = cfg.render;
  opts.out_dir = args.out_dir + "/photo3d_" + job.id;
  const Photo3dResult res = render_3d_photo(*model, decoder, job.cam, adapted.codes, opts);
  std::cout << "wrote " << res.frame_paths.size() << " frames and " << res.manifest_path << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg, args.out_dir, "eval");
  const Dataset ds = load_run_dataset(args);
  // eval never mutates checkpoints: everything is loaded into memory copies.
  auto model = std::make_unique<SceneModel>(load_scene_model(model_path(args)));
  const SkyDecoder decoder = load_run_sky(args);
  RealismNet realism;
  const RealismNet* realism_ptr = nullptr;
  if (cfg.use_realism) {
    realism = fs::exists(realism_path(args)) ? load_realism(realism_path(args))
                                             : pretrain_realism(cfg.realism);
    realism_ptr = &realism;
  }
  EvalOptions opts;
  opts.render = cfg.render;
  opts.adapt = cfg.adapt;
  opts.finetune = cfg.finetune;
  opts.seed = cfg.seed;
  const std::string dir = args.out_dir + "/reports";
  fs::create_directories(dir);
  if (cfg.eval_protocol == "full-view" || cfg.eval_protocol == "left-half") {
    const MetricsReport rep =
        cfg.eval_protocol == "full-view"
            ? eval_full_view(*model, decoder, ds, realism_ptr, opts)
            : eval_left_half(*model, decoder, ds, realism_ptr, opts);
    write_text_file(dir + "/" + cfg.eval_protocol + ".json", rep.to_json() + "\n");
    write_text_file(dir + "/" + cfg.eval_protocol + ".csv", rep.to_csv());
    std::cout << cfg.eval_protocol << ": mean psnr " << rep.mean_psnr << " dB, mean ssim "
              << rep.mean_ssim;
    if (rep.has_aug) std::cout << " (augmented " << rep.mean_psnr_aug << " dB)";
    std::cout << " over " << rep.n_valid << " views (" << rep.n_failed << " failed)\n";
  } else if (cfg.eval_protocol == "swap") {
    const SyntheticScene scene = make_scene(ds.scene_preset, ds.scene_seed);
    const SwapReport rep = eval_code_swap(*model, decoder, scene, ds, opts);
    write_text_file(dir + "/swap.json", rep.to_json() + "\n");
    std::cout << "swap: " << rep.closer << "/" << rep.n_views
              << " views closer to the swapped condition\n";
  } else {  // ablation
    auto base = std::make_unique<SceneModel>(load_scene_model(stage1_scene_path(args)));
    const auto distilled = load_distilled(distill_handle(args, ds));
    const AblationReport rep =
        run_ablation(*base, decoder, distilled, ds, cfg.stage2, realism_ptr, opts);
    write_text_file(dir + "/ablation.json", rep.to_json() + "\n");
    std::cout << "ablation: full " << rep.full_psnr << " dB, realism gain " << rep.realism_gain_db
              << " dB\n";
    for (const AblationRun& r : rep.runs)
      std::cout << "  " << r.name << ": " << r.mean_psnr << " dB\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorized neural re-rendering pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string frame_id;
  bool left_half_only = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, args);
  CLI::App* sky = app.add_subcommand("pretrain-sky", "train the HDR sky decoder");
  add_common(sky, args);
  CLI::App* geo = app.add_subcommand("train-geometry", "stage 1: geometry + transients");
  add_common(geo, args);
  CLI::App* dis = app.add_subcommand("distill", "render occlusion-free supervision images");
  add_common(dis, args);
  CLI::App* ren = app.add_subcommand("train-render", "stage 2: factorized re-rendering");
  add_common(ren, args);
  CLI::App* rnd = app.add_subcommand("render", "render one dataset view");
  add_common(rnd, args);
  rnd->add_option("--frame", frame_id, "frame id")->required();
  CLI::App* adp = app.add_subcommand("adapt", "optimize codes against one photo");
  add_common(adp, args);
  adp->add_option("--frame", frame_id, "frame id")->required();
  adp->add_flag("--left-half", left_half_only, "optimize on the left half only");
  CLI::App* ext = app.add_subcommand("extrapolate", "widen a photo's field of view");
  add_common(ext, args);
  ext->add_option("--frame", frame_id, "frame id")->required();
  CLI::App* p3d = app.add_subcommand("photo3d", "render an orbit sequence from one photo");
  add_common(p3d, args);
  p3d->add_option("--frame", frame_id, "frame id")->required();
  CLI::App* evl = app.add_subcommand("eval", "run an evaluation protocol");
  add_common(evl, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (sky->parsed()) return cmd_pretrain_sky(args);
    if (geo->parsed()) return cmd_train_geometry(args);
    if (dis->parsed()) return cmd_distill(args);
    if (ren->parsed()) return cmd_train_render(args);
    if (rnd->parsed()) return cmd_render(args, frame_id);
    if (adp->parsed()) return cmd_adapt(args, frame_id, left_half_only);
    if (ext->parsed()) return cmd_extrapolate(args, frame_id);
    if (p3d->parsed()) return cmd_photo3d(args, frame_id);
    if (evl->parsed()) return cmd_eval(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
