// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>

#include "rerender/dataset.hpp"
#include "rerender/fields.hpp"
#include "rerender/lighting.hpp"
#include "rerender/renderer.hpp"

namespace rerender {

/// Stage-1 heads around the shared SDF geometry: NeRF-W-style static radiance
/// with per-frame appearance embedding, plus a transient density/color/
/// uncertainty field with its own embedding.
struct Stage1Model {
  SceneModel* scene = nullptr;  // owns geometry + sharpness
  nn::Mlp radiance;             // PE(x), PE(v), emb_a -> rgb
  nn::Mlp transient;            // PE(x), emb_tau -> (raw sigma, rgb, raw beta)
  nn::Mlp sky_head;             // PE(v), emb_a -> rgb background
  int dim_emb_a = 16, dim_emb_tau = 8;
  uint64_t seed = 0;
  std::map<std::string, VecX> emb_a, emb_tau;

  static Stage1Model create(SceneModel& scene, uint64_t seed);
  VecX& emb_a_for(const std::string& frame_id);
  VecX& emb_tau_for(const std::string& frame_id);
};

struct TrainConfig {
  // Stage-1 weights.
  double lambda_c = 1.0, lambda_m = 0.1, lambda_re = 0.1, lambda_u = 0.01;
  // Stage-2 weights.
  double lambda_cr = 2.0, lambda_rs = 0.01, lambda_rt = 0.1;
  double beta_min = 0.03;

  int steps = 2000;
  int rays_per_batch = 1024;
  int n_coarse = 24, n_fine = 12;
  double lr = 5e-4;          // cosine decay to 0
  double lr_codes = 5e-3;    // per-frame codes/embeddings
  double bound_radius = 1.25;
  int eikonal_samples = 64;
  double eikonal_radius = 1.2;
  double fd_eps = 1e-3;          // stencil for the training-time Eikonal term
  double prune_threshold = 1e-4;  // stage-2 only: skip color eval below this weight
  int checksum_every = 250;       // stage-2 frozen-geometry audit interval
  uint64_t seed = 0;
  int log_every = 25;
  std::string log_path;  // JSONL; empty = no log

  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss building blocks (spec-visible ops)

/// Mean BCE between static opacity and the sky mask (1 = non-sky).
double sky_mask_loss(const VecX& opacities, const VecX& mask_values);

/// Mean (|grad| - 1)^2 over n uniform points in a sphere; generic over the
/// gradient oracle so analytic wrappers can be scored too.
double eikonal_loss(const std::function<Vec3(const Vec3&)>& grad_fn, int n_points, uint64_t seed,
                    double radius);
double eikonal_loss(const SceneModel& model, int n_points, uint64_t seed, double radius = 1.2);

struct Stage2Options {
  bool use_tone = true;    // ablation: false pins Gamma = identity
  bool use_shadow = true;  // ablation: false pins s = 1
};

/// Gradients w.r.t. the per-frame codes from FactoredBatch::backward.
struct CodeGrads {
  VecX l_e, l_s, l_t;
};

/// One batch of rays through the factorized pipeline at fixed depth samples,
/// with an exact reverse pass into appearance/shadow/sky/tone/codes/sharpness
/// (geometry parameters are never touched). train_rerender drives it every
/// step; the gradient-integrity tests drive it against finite differences.
struct FactoredBatch {
  // Forward products.
  EnvMap env;
  ToneMap tone;
  Mat3X colors;             // final pixel per ray
  Mat3X sky_rgb;            // per ray
  VecX shadow_values;       // active samples, regularizer input
  std::vector<VecX> alphas;     // per ray, full interval list
  std::vector<VecX> weights;    // T_k * alpha_k
  std::vector<double> residuals;
  int active_samples = 0;

  void forward(const SceneModel& model, const SkyDecoder& decoder, const std::vector<Ray>& rays,
               const std::vector<VecX>& depths, const FrameCodes& codes, double prune_threshold,
               const Stage2Options& opts = {});
  /// d_colors: d loss / d pixel per ray. d_shadow: extra gradient on
  /// shadow_values (empty = none). dA_extra/db_extra: extra tone-matrix
  /// gradient (regularizer). Accumulates net and sharpness grads on the model
  /// and returns the code grads.
  CodeGrads backward(SceneModel& model, const Mat3X& d_colors, const VecX& d_shadow,
                     const Mat3& dA_extra, const Vec3& db_extra);

 private:
  const SkyDecoder* decoder_ = nullptr;
  Stage2Options opts_;
  std::vector<Ray> rays_;
  std::vector<VecX> depths_;
  FrameCodes codes_;
  SkyDecodeCache env_cache_;
  nn::MlpCache tone_cache_, app_cache_, shd_cache_, sky_cache_;
  GeometryEval geo_;
  std::vector<int> sample_base_;          // per-ray offset into the flat batch
  std::vector<std::vector<int>> active_;  // per-ray interval indices shaded
  std::vector<int> active_ray_, active_k_;
  Mat3X normals_active_, albedo_active_, irr_active_, cb_active_, gamma_pre_;
  MatX texw_active_;  // texels x active: (dir . n)+ dw
  Mat3X texdirs_;
  SolidAngleGrid dw_;
};

struct Stage1PixelPred {
  Vec3 color = Vec3::Zero();   // static+transient composite
  double beta = 0.0;           // >= beta_min
  double transient_density_mean = 0.0;
};

/// ||C - C_hat||^2 / (2 beta^2) + log(beta)/2 + lambda_u * mean transient
/// density, averaged over rays.
double stage1_photometric_loss(const std::vector<Stage1PixelPred>& preds,
                               const std::vector<Vec3>& targets, double lambda_u);

// ---------------------------------------------------------------------------
// Training entry points

struct TrainReport {
  double final_loss = 0.0;
  double final_psnr_batch = 0.0;
  int steps_run = 0;
};

/// Stage 1: geometry + radiance + transient + sky head on raw photos.
TrainReport train_geometry(Stage1Model& model, const Dataset& dataset, const TrainConfig& cfg);

/// Static-branch renders at every training pose, composited over the raw
/// photo by residual transmittance; written to <out_dir>/<frame_id>.exr.
struct DistillResult {
  std::vector<std::string> frame_ids;
  std::string dir;
};
DistillResult distill_occlusion_free(const Stage1Model& model, const Dataset& dataset,
                                     const TrainConfig& cfg, const std::string& out_dir);

/// Distilled images keyed by frame id, loaded back for stage 2.
std::map<std::string, Image> load_distilled(const DistillResult& distilled);

/// Stage 2: appearance/shadow/sky/tone/codes/sharpness against distilled
/// images; geometry strictly frozen (checksum-audited).
TrainReport train_rerender(SceneModel& model, const SkyDecoder& decoder,
                           const std::map<std::string, Image>& distilled, const Dataset& dataset,
                           const TrainConfig& cfg, const Stage2Options& opts = {});

}  // namespace rerender
