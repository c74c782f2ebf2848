// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "rerender/camera.hpp"
#include "rerender/fields.hpp"
#include "rerender/image.hpp"
#include "rerender/lighting.hpp"

namespace rerender {

struct RenderOptions {
  int n_coarse = 64;
  int n_fine = 32;
  double bound_radius = 1.25;  // rays are sampled inside this sphere
  uint64_t seed = 0;
  int chunk = 512;

  void validate() const;
};

/// [t_near, t_far] of the ray inside the bounding sphere, if it hits.
std::optional<std::pair<double, double>> ray_sphere_range(const Ray& ray, double radius);

/// count stratified depths in [near, far): one per equal bin, strictly
/// increasing.
VecX stratified_depths(double near, double far, int count, HashRng& rng);

/// n extra depths distributed by the coarse interval weights (inverse CDF,
/// stratified). depths has K+1 entries, weights K.
VecX importance_depths(const VecX& depths, const VecX& weights, int n, HashRng& rng);

/// Sorted union, nudged to be strictly increasing (size preserved).
VecX merge_depths(const VecX& a, const VecX& b);

struct SampleResult {
  VecX depths;      // n_coarse + n_importance, strictly increasing
  VecX importance;  // the importance subset alone
};

/// Stratified coarse depths plus one importance round driven by the coarse
/// alpha weights of the current geometry.
SampleResult sample_points(const Ray& ray, double near, double far, int n_coarse,
                           int n_importance, const SceneModel& model, HashRng& rng);

/// alpha_k = max((Phi_s(sdf_k) - Phi_s(sdf_{k+1})) / Phi_s(sdf_k), 0).
double alpha_from_sdf(double sdf_a, double sdf_b, double sharpness);
/// Vector form: K+1 SDF samples -> K alphas.
VecX alphas_from_sdf(const VecX& sdf, double sharpness);

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  VecX weights;           // T_k * alpha_k
  double residual = 1.0;  // transmittance left for the sky
};

/// C = sum_k T_k alpha_k c_k + (prod_k (1 - alpha_k)) * sky.
CompositeResult composite(const VecX& alphas, const Mat3X& colors, const Vec3& sky);

struct RenderStats {
  int sky_only_rays = 0;
  int flagged_pixels = 0;  // degenerate normal at a contributing sample
  double mean_opacity = 0.0;
};

struct RenderResult {
  Image rgb;     // tone-mapped surface + sky, linear HDR
  Image albedo;  // opacity-weighted intrinsic layers
  Image shadow;
  Image normal;
  Image depth;
  Image alpha;
  Image diag;    // diagnostics mask, 1 where a pixel was flagged
  RenderStats stats;
};

/// Full-frame factored render. Deterministic for a fixed seed regardless of
/// chunk size (per-pixel counter RNG).
RenderResult render_image(const SceneModel& model, const SkyDecoder& decoder,
                          const CameraSpec& cam, const FrameCodes& codes,
                          const RenderOptions& opts);

namespace ref {

/// Straight-line scalar reference of the full pixel pipeline (no Eigen matrix
/// products, no batching, no OpenMP). Shares only the depth sampling helpers
/// so both paths draw identical samples.
Vec3 render_pixel(const SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                  const FrameCodes& codes, int ix, int iy, const RenderOptions& opts);

}  // namespace ref

}  // namespace rerender
