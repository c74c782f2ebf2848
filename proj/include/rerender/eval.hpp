// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "rerender/adaptation.hpp"
#include "rerender/metrics.hpp"
#include "rerender/synthdata.hpp"
#include "rerender/training.hpp"

namespace rerender {

struct EvalOptions {
  RenderOptions render;
  AdaptOptions adapt;            // left-half code optimization
  RealismTrainOptions finetune;  // per-image realism fine-tune
  uint64_t seed = 0;
};

/// Codes of the training frame sharing the held-out frame's condition
/// triple (env, shadow, tone). Validation error when no such frame exists.
FrameCodes condition_codes(const SceneModel& model, const Dataset& ds, const Frame& frame);

/// 1 = supervised: left half of the view minus occluder pixels.
Image left_half_mask(const Frame& frame);
/// 1 = scored: right half minus occluder pixels.
Image right_half_mask(const Frame& frame);

/// Held-out views rendered with their condition's trained codes, scored
/// against ground truth; primary score = full view. Realism fine-tunes on
/// each view's left half only (test-time optimization, no full-view leak).
MetricsReport eval_full_view(const SceneModel& model, const SkyDecoder& decoder, const Dataset& ds,
                             const RealismNet* realism, const EvalOptions& opts);

/// Left-half protocol: adapt codes on the left half, render the full view,
/// score the right half (primary) and the full view. Per-image adaptation
/// failures are recorded and excluded from aggregates.
MetricsReport eval_left_half(SceneModel& model, const SkyDecoder& decoder, const Dataset& ds,
                             const RealismNet* realism, const EvalOptions& opts);

struct SwapReport {
  int n_views = 0;
  int closer = 0;  // renders closer (PSNR) to the swapped condition's GT
  double fraction = 0.0;
  std::vector<double> psnr_swapped, psnr_original;
  std::string to_json() const;
};

/// Swaps l_e between the scene's two illumination conditions on every test
/// view and checks which ground truth the result resembles.
SwapReport eval_code_swap(const SceneModel& model, const SkyDecoder& decoder,
                          const SyntheticScene& scene, const Dataset& ds,
                          const EvalOptions& opts);

struct AblationRun {
  std::string name;  // full | no_tone | no_shadow | no_realism
  uint64_t seed = 0;
  double mean_psnr = 0.0;  // headline score (augmented when realism is on)
  MetricsReport report;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  double full_psnr = 0.0;
  double realism_gain_db = 0.0;  // full model: augmented minus plain
  std::string to_json() const;
};

/// Retrains stage 2 with each component toggled off under one matched config
/// and seed, then scores every run on the test split. `base` must be the
/// post-stage-1 model (trained geometry, untrained appearance); it is copied
/// per run and never mutated.
AblationReport run_ablation(const SceneModel& base, const SkyDecoder& decoder,
                            const std::map<std::string, Image>& distilled, const Dataset& ds,
                            const TrainConfig& cfg, const RealismNet* realism,
                            const EvalOptions& opts);

}  // namespace rerender
