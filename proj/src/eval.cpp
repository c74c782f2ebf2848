// SPDX-License-Identifier: Apache-2.0
#include "rerender/eval.hpp"

#include <cmath>
#include <exception>

#include <nlohmann/json.hpp>

#include "rerender/core.hpp"

namespace rerender {

namespace {

Image half_mask(const Frame& frame, bool left) {
  Image m(frame.cam.width, frame.cam.height, 1, 0.0f);
  const int split = frame.cam.width / 2;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const bool side = left ? (x < split) : (x >= split);
      const bool occluded =
          frame.mask_occluder.width > 0 && frame.mask_occluder.at(x, y, 0) > 0.5f;
      if (side && !occluded) m.at(x, y, 0) = 1.0f;
    }
  return m;
}

/// Fine-tunes a scratch copy of `net` so render |-> photo on the mask, then
/// augments the render at its own resolution.
Image augment_for_view(const RealismNet& net, const Image& render, const Image& photo,
                       const Image& mask, const RealismTrainOptions& ft) {
  RealismNet tuned = net;
  RealismPair pair;
  pair.input = render;
  pair.target = photo;
  pair.mask = mask;
  std::vector<RealismPair> pairs;
  pairs.push_back(std::move(pair));
  finetune_realism(tuned, pairs, ft);
  return augment_realism(tuned, render, render.width, render.height);
}

}  // namespace

FrameCodes condition_codes(const SceneModel& model, const Dataset& ds, const Frame& frame) {
  for (int i : ds.train_indices()) {
    const Frame& f = ds.frames[i];
    if (f.env_id == frame.env_id && f.shadow_id == frame.shadow_id && f.tone_id == frame.tone_id)
      return model.codes_at(f.id);
  }
  fail("condition_codes: no training frame shares the condition of " + frame.id);
}

Image left_half_mask(const Frame& frame) { return half_mask(frame, true); }
Image right_half_mask(const Frame& frame) { return half_mask(frame, false); }

MetricsReport eval_full_view(const SceneModel& model, const SkyDecoder& decoder, const Dataset& ds,
                             const RealismNet* realism, const EvalOptions& opts) {
  MetricsReport rep;
  rep.protocol = "full-view";
  rep.has_aug = realism != nullptr;
  const std::vector<int> test = ds.test_indices();
  require(!test.empty(), "eval_full_view: test split empty");
  for (int idx : test) {
    const Frame& frame = ds.frames[idx];
    ImageScore score;
    score.id = frame.id;
    try {
      const FrameCodes codes = condition_codes(model, ds, frame);
      const RenderResult r = render_image(model, decoder, frame.cam, codes, opts.render);
      score.psnr_full = compute_psnr(r.rgb, frame.image);
      score.ssim_full = compute_ssim(r.rgb, frame.image);
      score.psnr = score.psnr_full;
      score.ssim = score.ssim_full;
      if (realism != nullptr) {
        const Image aug =
            augment_for_view(*realism, r.rgb, frame.image, left_half_mask(frame), opts.finetune);
        score.psnr_aug = compute_psnr(aug, frame.image);
        score.ssim_aug = compute_ssim(aug, frame.image);
      }
    } catch (const std::exception& e) {
      score.valid = false;
      score.note = e.what();
    }
    rep.images.push_back(std::move(score));
  }
  rep.finalize();
  return rep;
}

MetricsReport eval_left_half(SceneModel& model, const SkyDecoder& decoder, const Dataset& ds,
                             const RealismNet* realism, const EvalOptions& opts) {
  MetricsReport rep;
  rep.protocol = "left-half";
  rep.has_aug = realism != nullptr;
  const std::vector<int> test = ds.test_indices();
  require(!test.empty(), "eval_left_half: test split empty");
  for (int idx : test) {
    const Frame& frame = ds.frames[idx];
    ImageScore score;
    score.id = frame.id;
    try {
      const Image lmask = left_half_mask(frame);
      const Image rmask = right_half_mask(frame);
      const AdaptResult ar = adapt_photo(model, decoder, frame.cam, frame.image, lmask, opts.adapt);
      score.adapt_initial_mse = ar.initial_mse;
      score.adapt_final_mse = ar.final_mse;
      const RenderResult r = render_image(model, decoder, frame.cam, ar.codes, opts.render);
      score.psnr = compute_psnr_masked(r.rgb, frame.image, rmask);
      score.ssim = compute_ssim(r.rgb, frame.image);  // window metric: full view
      score.psnr_full = compute_psnr(r.rgb, frame.image);
      score.ssim_full = score.ssim;
      if (realism != nullptr) {
        const Image aug = augment_for_view(*realism, r.rgb, frame.image, lmask, opts.finetune);
        score.psnr_aug = compute_psnr_masked(aug, frame.image, rmask);
        score.ssim_aug = compute_ssim(aug, frame.image);
      }
    } catch (const std::exception& e) {
      score.valid = false;
      score.note = e.what();
    }
    rep.images.push_back(std::move(score));
  }
  rep.finalize();
  return rep;
}

std::string SwapReport::to_json() const {
  nlohmann::json j;
  j["n_views"] = n_views;
  j["closer"] = closer;
  j["fraction"] = fraction;
  j["psnr_swapped"] = psnr_swapped;
  j["psnr_original"] = psnr_original;
  return j.dump(2);
}

SwapReport eval_code_swap(const SceneModel& model, const SkyDecoder& decoder,
                          const SyntheticScene& scene, const Dataset& ds,
                          const EvalOptions& opts) {
  require(scene.n_conditions() >= 2, "eval_code_swap: needs two illumination conditions");
  SwapReport rep;
  for (int idx : ds.test_indices()) {
    const Frame& frame = ds.frames[idx];
    const int other_env = (frame.env_id + 1) % scene.n_conditions();
    // Codes trained under the frame's own condition, l_e from the other one.
    FrameCodes codes = condition_codes(model, ds, frame);
    bool found = false;
    for (int i : ds.train_indices()) {
      if (ds.frames[i].env_id == other_env) {
        codes.l_e = model.codes_at(ds.frames[i].id).l_e;
        found = true;
        break;
      }
    }
    require(found, "eval_code_swap: no training frame under the swapped condition");
    const RenderResult r = render_image(model, decoder, frame.cam, codes, opts.render);
    const GtRender swapped_gt =
        render_ground_truth(scene, frame.cam, other_env, frame.shadow_id, frame.tone_id);
    const double p_swap = compute_psnr(r.rgb, swapped_gt.rgb);
    const double p_orig = compute_psnr(r.rgb, frame.image);
    rep.psnr_swapped.push_back(p_swap);
    rep.psnr_original.push_back(p_orig);
    ++rep.n_views;
    if (p_swap > p_orig) ++rep.closer;
  }
  require(rep.n_views > 0, "eval_code_swap: test split empty");
  rep.fraction = static_cast<double>(rep.closer) / rep.n_views;
  return rep;
}

std::string AblationReport::to_json() const {
  nlohmann::json j;
  j["full_psnr"] = full_psnr;
  j["realism_gain_db"] = realism_gain_db;
  nlohmann::json rs = nlohmann::json::array();
  for (const AblationRun& r : runs) {
    rs.push_back({{"name", r.name},
                  {"seed", r.seed},
                  {"mean_psnr", r.mean_psnr},
                  {"report", nlohmann::json::parse(r.report.to_json())}});
  }
  j["runs"] = rs;
  return j.dump(2);
}

AblationReport run_ablation(const SceneModel& base, const SkyDecoder& decoder,
                            const std::map<std::string, Image>& distilled, const Dataset& ds,
                            const TrainConfig& cfg, const RealismNet* realism,
                            const EvalOptions& opts) {
  struct Setup {
    std::string name;
    Stage2Options s2;
  };
  const Setup setups[] = {{"full", {true, true}},
                          {"no_tone", {false, true}},
                          {"no_shadow", {true, false}}};
  AblationReport rep;
  MetricsReport full_plain;
  for (const Setup& s : setups) {
    SceneModel trained = base;  // matched initialization for every run
    train_rerender(trained, decoder, distilled, ds, cfg, s.s2);
    AblationRun run;
    run.name = s.name;
    run.seed = cfg.seed;
    run.report = eval_full_view(trained, decoder, ds, realism, opts);
    run.mean_psnr = realism != nullptr ? run.report.mean_psnr_aug : run.report.mean_psnr;
    if (s.name == "full") {
      full_plain = run.report;
      rep.full_psnr = run.mean_psnr;
      rep.realism_gain_db =
          realism != nullptr ? run.report.mean_psnr_aug - run.report.mean_psnr : 0.0;
    }
    rep.runs.push_back(std::move(run));
  }
  // "w/o Realism Aug.": the full model's render scored without augmentation.
  AblationRun no_realism;
  no_realism.name = "no_realism";
  no_realism.seed = cfg.seed;
  no_realism.report = full_plain;
  no_realism.mean_psnr = full_plain.mean_psnr;
  rep.runs.push_back(std::move(no_realism));
  for (const AblationRun& r : rep.runs)
    require(r.seed == cfg.seed, "run_ablation: mismatched seeds between runs");
  return rep;
}

}  // namespace rerender
