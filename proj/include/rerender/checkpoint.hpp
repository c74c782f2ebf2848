// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rerender/adaptation.hpp"
#include "rerender/training.hpp"

namespace rerender {

/// Container behind every checkpoint: "RRCK" magic, a JSON header (kind, meta,
/// tensor index), then raw float64 tensor payloads. Writes are atomic
/// (temp file + rename).
struct TensorFile {
  std::string kind;
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, MatX>> tensors;

  bool has(const std::string& name) const;
  const MatX& at(const std::string& name) const;
  void put(const std::string& name, const MatX& m);
  void put(const std::string& name, const VecX& v);
};

void save_tensor_file(const std::string& path, const TensorFile& tf);
TensorFile load_tensor_file(const std::string& path);

void put_mlp(TensorFile& tf, const std::string& prefix, const nn::Mlp& mlp);
/// Rebuilds the layer list from the stored shapes; activations are whatever
/// the caller already set on the Mlp.
void get_mlp(const TensorFile& tf, const std::string& prefix, nn::Mlp& mlp);

void save_scene_model(const std::string& path, const SceneModel& model);
SceneModel load_scene_model(const std::string& path);

/// Stage-1 heads and per-frame embeddings; the scene lives in its own file.
/// The final pipeline checkpoint deliberately drops these once distillation
/// has consumed them.
void save_stage1_heads(const std::string& path, const Stage1Model& model);
void load_stage1_heads(const std::string& path, Stage1Model& model);

void save_sky_pretrain(const std::string& path, const SkyPretrainResult& r);
SkyPretrainResult load_sky_pretrain(const std::string& path);
/// Decoder only, frozen; enough for rendering and stage 2.
SkyDecoder load_sky_decoder(const std::string& path);

void save_realism(const std::string& path, const RealismNet& net);
RealismNet load_realism(const std::string& path);

}  // namespace rerender
