// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "rerender/core.hpp"
#include "rerender/encoding.hpp"
#include "rerender/lighting.hpp"
#include "rerender/nn.hpp"

namespace rerender {

/// Per-frame latent codes: environment (lighting), shadow, and tone.
struct FrameCodes {
  VecX l_e, l_s, l_t;
};

struct ModelConfig {
  int pos_freqs = 8, dir_freqs = 4;
  int geom_width = 128, geom_hidden = 4, feature_dim = 64;
  int app_width = 128, app_hidden = 3;
  int shadow_width = 64, shadow_hidden = 3;
  int sky_width = 64, sky_hidden = 3;
  int dim_le = 16, dim_ls = 8, dim_lt = 8;
  double init_inv_sharpness = 0.3;
  double query_radius = 1.5;
  double code_init_std = 0.01;
};

/// Factorized scene: SDF geometry with a feature head, intrinsic albedo,
/// lighting-conditioned shadow field, view-dependent sky, learned sharpness,
/// and the tone mapper. Frame codes are created lazily, deterministically from
/// (seed, frame id).
struct SceneModel {
  ModelConfig cfg;
  uint64_t seed = 0;
  EncodingSpec pos_enc, dir_enc;
  nn::Mlp geometry;    // PE(x) -> 1 + feature_dim (raw sdf before sphere offset)
  nn::Mlp appearance;  // PE(x), feature -> albedo in (0,1)
  nn::Mlp shadow;      // PE(x), l_s -> scalar in (0,1)
  nn::Mlp sky;         // PE(v), l_e -> radiance >= 0
  ToneMapper tone;     // l_t -> affine Gamma
  double log_sharpness = 0.0, g_log_sharpness = 0.0;
  std::map<std::string, FrameCodes> codes;

  static SceneModel create(uint64_t seed, const ModelConfig& cfg = {});

  double sharpness() const { return std::exp(log_sharpness); }
  /// sqrt(|x|^2 + 1e-6) - 0.5: the analytic sphere the zero-initialized
  /// geometry head starts from.
  static double sphere_offset(const Vec3& x);
  static Vec3 sphere_offset_grad(const Vec3& x);

  FrameCodes& codes_for(const std::string& frame_id);
  const FrameCodes& codes_at(const std::string& frame_id) const;

  /// Geometry network parameters only (what stage 2 must not touch).
  uint64_t geometry_checksum() const;
};

uint64_t params_checksum(const std::vector<const MatX*>& params);

/// Deterministic N(0, std) vector derived from (seed, key, tag); the scheme
/// behind lazily created frame codes and embeddings.
VecX hashed_gaussian(int dim, double stddev, uint64_t seed, const std::string& key, int tag);

// ---------------------------------------------------------------------------
// Batched evaluation (training / rendering hot path)

struct GeometryEval {
  MatX enc;           // encoded positions (geometry input)
  nn::MlpCache cache;
  VecX sdf;           // with sphere offset
  MatX feature;       // feature_dim x N
  Mat3X grad;         // d sdf / d x, only if requested
};

GeometryEval eval_geometry_batch(const SceneModel& model, const Mat3X& xs, bool want_grad);
Mat3X eval_albedo_batch(const SceneModel& model, const MatX& enc, const MatX& feature,
                        nn::MlpCache* cache = nullptr);
VecX eval_shadow_batch(const SceneModel& model, const MatX& enc, const VecX& l_s,
                       nn::MlpCache* cache = nullptr);
Mat3X eval_sky_batch(const SceneModel& model, const Mat3X& dirs, const VecX& l_e,
                     nn::MlpCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Single-point ops

/// Signed distance at x. Domain error if |x| exceeds the query radius.
double eval_sdf(const SceneModel& model, const Vec3& x);
/// Normalized SDF gradient. Numeric error if the gradient is degenerate
/// (norm below 1e-8).
Vec3 eval_normal(const SceneModel& model, const Vec3& x);
Vec3 eval_albedo(const SceneModel& model, const Vec3& x);
double eval_shadow(const SceneModel& model, const Vec3& x, const VecX& l_s);
/// Sky radiance toward view direction v (unit length required).
Vec3 eval_sky(const SceneModel& model, const Vec3& v, const VecX& l_e);

}  // namespace rerender
