// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "rerender/core.hpp"
#include "rerender/nn.hpp"

namespace rerender {

/// Equirectangular HDR radiance map, row 0 = zenith. One column per texel
/// (index row*width + col).
struct EnvMap {
  int height = 0, width = 0;
  Mat3X radiance;

  EnvMap() = default;
  EnvMap(int h, int w) : height(h), width(w), radiance(Mat3X::Zero(3, h * w)) {}
  Vec3 texel(int i, int j) const { return radiance.col(i * width + j); }
};

struct SolidAngleGrid {
  int height = 0, width = 0;
  VecX dw;
};

/// dw[i][j] = (2*pi/W) * (cos(theta_top) - cos(theta_bottom)); sums to 4*pi by
/// telescoping.
SolidAngleGrid solid_angles(int h, int w);

Vec3 texel_direction(int i, int j, int h, int w);
Mat3X texel_directions(int h, int w);
/// Inverse of texel_direction up to quantization: the texel containing dir.
std::pair<int, int> direction_to_texel(const Vec3& dir, int h, int w);
Vec3 envmap_lookup_bilinear(const EnvMap& env, const Vec3& dir);
Vec3 envmap_energy(const EnvMap& env, const SolidAngleGrid& dw);

/// Solid-angle-weighted block average; preserves total energy exactly.
EnvMap downscale_envmap(const EnvMap& env, int factor);
/// Adjoint of downscale_envmap (for gradients w.r.t. the native map).
Mat3X downscale_envmap_backward(int native_h, int native_w, int factor, const Mat3X& d_coarse);

void save_envmap_exr(const std::string& path, const EnvMap& env);
EnvMap load_envmap_exr(const std::string& path);

// ---------------------------------------------------------------------------
// Tone mapping

struct ToneMap {
  Mat3 A = Mat3::Identity();
  Vec3 b = Vec3::Zero();
};

Vec3 tone_apply(const ToneMap& t, const Vec3& c);
double tone_regularizer(const ToneMap& t);
double shadow_regularizer(const VecX& shadow_samples);

/// Lightweight net mapping a per-frame tone code to the 3x4 affine matrix.
/// Final layer zero-initialized with identity bias: decodes to Gamma = id
/// before training.
struct ToneMapper {
  nn::Mlp net;  // l_t -> 12 (A row-major, then b)
  static ToneMapper create(int code_dim, Rng& rng);
};

ToneMap tone_decode(const ToneMapper& mapper, const VecX& l_t);
ToneMap tone_decode_cached(const ToneMapper& mapper, const VecX& l_t, nn::MlpCache* cache);
/// Backward through the decode; accumulates net grads, returns d l_t.
VecX tone_decode_backward(ToneMapper& mapper, const nn::MlpCache& cache, const Mat3& dA,
                          const Vec3& db);
ToneMap tone_from_vec12(const VecX& v);

// ---------------------------------------------------------------------------
// Procedural skies (pretraining dataset for the HDR decoder)

struct ProceduralSkyParams {
  Vec3 sun_direction = Vec3(0, 1, 0);  // unit, upper hemisphere
  double sun_intensity = 0.0;
  double sun_angular_radius = 0.1;  // radians
  Vec3 zenith_color = Vec3::Zero();
  Vec3 horizon_color = Vec3::Zero();
  double ambient = 0.0;
};

EnvMap procedural_sky(const ProceduralSkyParams& params, int h, int w);
ProceduralSkyParams sample_sky_params(Rng& rng);

// ---------------------------------------------------------------------------
// Data-driven HDR sky decoder

/// Decoder from environment code to non-negative HDR map. The net emits
/// log-radiance; decoding exponentiates (the "exponential output activation")
/// and downscales to the 16x32 shading resolution.
struct SkyDecoder {
  nn::Mlp net;
  int latent_dim = 16;
  int native_h = 32, native_w = 64;
  int out_h = 16, out_w = 32;
  bool frozen = false;
};

struct SkyDecodeCache {
  nn::MlpCache mlp;
  MatX log_native;  // preactivation (log radiance), 1 x (3*native texels) reshaped
};

EnvMap decode_envmap(const SkyDecoder& decoder, const VecX& l_e);
EnvMap decode_envmap_cached(const SkyDecoder& decoder, const VecX& l_e, SkyDecodeCache* cache);
/// d(loss)/d(l_e) given d(loss)/d(16x32 radiance); decoder stays frozen.
VecX decode_envmap_backward(const SkyDecoder& decoder, const SkyDecodeCache& cache,
                            const Mat3X& d_coarse);

struct SkyPretrainOptions {
  int steps = 2500;
  int batch = 16;
  double lr = 1e-3;
  double holdout_frac = 0.1;
  double log_eps = 1e-3;
  double fail_threshold = 0.15;  // held-out log-radiance MAE
};

struct SkyPretrainResult {
  SkyDecoder decoder;
  nn::Mlp encoder;  // 16x32 log map -> latent
  double heldout_log_mae = 0.0;
  double final_train_loss = 0.0;
};

/// Trains the sky autoencoder on procedural skies and returns the frozen
/// decoder. Throws on non-convergence (held-out MAE above threshold).
SkyPretrainResult pretrain_sky_decoder(int n_samples, uint64_t seed,
                                       const SkyPretrainOptions& opts = {});

VecX encode_sky(const nn::Mlp& encoder, const EnvMap& native_env, double log_eps = 1e-3);

// ---------------------------------------------------------------------------
// Lambertian shading

/// c^b = albedo * shadow * sum_texels L(w) * max(w.n, 0) * dw(w).
Vec3 shade_lambertian(const Vec3& albedo, double shadow, const Vec3& normal, const EnvMap& env,
                      const SolidAngleGrid& dw);

/// Irradiance E(n) = sum L (w.n)+ dw for a batch of normals (c^b = a*s*E).
/// dirs must be texel_directions(env.height, env.width).
Mat3X shade_irradiance_batch(const EnvMap& env, const SolidAngleGrid& dw, const Mat3X& dirs,
                             const Mat3X& normals);

}  // namespace rerender
