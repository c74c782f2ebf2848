// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rerender/dataset.hpp"
#include "rerender/lighting.hpp"

namespace rerender {

/// Analytic SDF primitive. All exact distances (1-Lipschitz); smooth-min
/// blending introduces a bounded deviation inside blend bands only.
struct Primitive {
  enum class Type { Sphere, Box, RoundedBox, PlaneY } type = Type::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Ones();   // box half extents
  double radius = 1.0;        // sphere radius / rounding radius
  double plane_y = 0.0;
  bool smooth = false;        // blend into the running union with smooth-min
};

struct SdfVal {
  double d = 0.0;
  Vec3 g = Vec3::Zero();
};

SdfVal primitive_sdf(const Primitive& p, const Vec3& x);
SdfVal smooth_min(const SdfVal& a, const SdfVal& b, double k);

/// Textured nuisance sphere placed per view, mimicking tourists.
struct OccluderSpec {
  Vec3 color_a = Vec3(0.9, 0.2, 0.2);
  Vec3 color_b = Vec3(0.95, 0.85, 0.2);
  double stripe_freq = 10.0;
  double base_radius = 0.2;
};

struct PlacedOccluder {
  int lib_index = 0;
  Vec3 pos = Vec3::Zero();
  double radius = 0.2;
};

/// Procedural ground-truth world: analytic geometry, albedo texture, soft
/// shadow bands per condition, and per-condition envmaps/tone maps.
struct SyntheticScene {
  std::string preset;
  uint64_t seed = 0;
  std::vector<Primitive> primitives;
  double smooth_k = 0.05;
  // Albedo texture parameters.
  Vec3 albedo_base = Vec3::Constant(0.8);
  double albedo_amp = 0.0;
  Vec3 albedo_freq = Vec3::Zero();
  Vec3 albedo_phase = Vec3::Zero();
  // Shadow band per condition: s = 1 - strength * exp(-((x-p).u)^2 / w^2).
  struct ShadowBand {
    Vec3 dir = Vec3::UnitX();
    Vec3 origin = Vec3::Zero();
    double width = 0.35, strength = 0.4;
  };
  std::vector<ShadowBand> shadow_bands;
  std::vector<EnvMap> gt_envmaps;    // 16x32, shading + sky lookup
  std::vector<ToneMap> gt_tonemaps;
  std::vector<OccluderSpec> occluder_library;
  Vec3 centroid = Vec3::Zero();

  SdfVal sdf(const Vec3& x) const;
  Vec3 albedo(const Vec3& x) const;
  double shadow(const Vec3& x, int shadow_id) const;
  int n_conditions() const { return static_cast<int>(gt_envmaps.size()); }
  uint64_t hash() const;
};

SyntheticScene make_scene(const std::string& preset, uint64_t seed);

struct GtRender {
  Image rgb;            // linear, sky untonemapped (matches the model family)
  Image mask_sky;       // 1 = non-sky, from occluder-free geometry
  Image mask_occluder;  // 1 = occluder visible
  Image depth;          // visible-surface depth, 0 for sky
  Image invalid;        // sphere tracing failed to converge
};

/// Sphere-traced exact render with the same Lambertian quadrature the neural
/// renderer uses. Occluders (if any) are painted over but never affect the
/// sky mask.
GtRender render_ground_truth(const SyntheticScene& scene, const CameraSpec& cam, int env_id,
                             int shadow_id, int tone_id,
                             const std::vector<PlacedOccluder>& occluders = {});
GtRender render_ground_truth(const SyntheticScene& scene, const CameraSpec& cam,
                             int condition_id);

struct DatasetSpec {
  int n_views = 40;
  int image_size = 64;
  double occluder_prob = 0.5;
  double orbit_radius = 3.0;
  double fov_deg = 50.0;
  int test_every = 8;  // every k-th view is held out (and kept occluder-free)
  uint64_t seed = 0;

  uint64_t hash() const;
  void validate() const;
};

/// Camera for view v of the deterministic orbit-ring distribution.
CameraSpec dataset_camera(const SyntheticScene& scene, const DatasetSpec& spec, int view);
/// Condition assignment is round-robin over the scene's conditions.
int dataset_condition(const SyntheticScene& scene, int view);
/// Occluder placements for view v (empty for test views or misses the
/// probability draw).
std::vector<PlacedOccluder> dataset_occluders(const SyntheticScene& scene,
                                              const DatasetSpec& spec, int view);

/// Renders and writes the full dataset; returns it loaded.
Dataset generate_dataset(const SyntheticScene& scene, const DatasetSpec& spec,
                         const std::string& out_dir);

}  // namespace rerender
