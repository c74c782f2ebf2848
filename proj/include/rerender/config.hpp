// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "rerender/adaptation.hpp"
#include "rerender/fields.hpp"
#include "rerender/lighting.hpp"
#include "rerender/synthdata.hpp"
#include "rerender/training.hpp"

namespace rerender {

/// One resolved configuration drives every pipeline command. All randomness
/// flows from the single master `seed`: section seeds are derived from it in
/// apply_seed and cannot be set individually.
struct PipelineConfig {
  std::string scene_preset = "fountain-like";
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig stage1, stage2;
  Stage2Options stage2_opts;
  SkyPretrainOptions sky;
  int sky_samples = 256;
  RenderOptions render;
  AdaptOptions adapt;
  RealismPretrainOptions realism;
  RealismTrainOptions finetune;
  double widen = 2.0;
  int feather_px = 16;
  bool use_realism = true;
  Photo3dOptions photo3d;
  std::string eval_protocol = "full-view";  // full-view | left-half | swap | ablation
  uint64_t seed = 0;
  // Derived (apply_seed).
  uint64_t scene_seed = 0, model_seed = 0, heads_seed = 0, sky_seed = 0;

  void apply_seed(uint64_t master);
  void validate() const;
  std::string to_json() const;
};

/// Defaults overridden by the JSON object in `text`; unknown keys are
/// validation errors. apply_seed runs with the file's "seed" (or 0).
PipelineConfig config_from_json_text(const std::string& text);
PipelineConfig load_config(const std::string& path);

}  // namespace rerender
