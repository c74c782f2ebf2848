// SPDX-License-Identifier: Apache-2.0
#include "rerender/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include <nlohmann/json.hpp>

namespace rerender {

namespace fs = std::filesystem;
using nlohmann::json;

SdfVal primitive_sdf(const Primitive& p, const Vec3& x) {
  SdfVal v;
  switch (p.type) {
    case Primitive::Type::Sphere: {
      const Vec3 d = x - p.center;
      const double n = d.norm();
      v.d = n - p.radius;
      v.g = n > 1e-12 ? Vec3(d / n) : Vec3(0, 1, 0);
      break;
    }
    case Primitive::Type::Box:
    case Primitive::Type::RoundedBox: {
      const double r = p.type == Primitive::Type::RoundedBox ? p.radius : 0.0;
      const Vec3 d = x - p.center;
      const Vec3 q = d.cwiseAbs() - p.half;
      const Vec3 qp = q.cwiseMax(0.0);
      const double outside = qp.norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      v.d = outside + inside - r;
      if (outside > 1e-12) {
        Vec3 g = qp / outside;
        for (int c = 0; c < 3; ++c) g[c] *= d[c] >= 0 ? 1.0 : -1.0;
        v.g = g;
      } else {
        // Inside: gradient points along the axis of least penetration.
        int axis = 0;
        q.maxCoeff(&axis);
        v.g = Vec3::Zero();
        v.g[axis] = d[axis] >= 0 ? 1.0 : -1.0;
      }
      break;
    }
    case Primitive::Type::PlaneY:
      v.d = x.y() - p.plane_y;
      v.g = Vec3(0, 1, 0);
      break;
  }
  return v;
}

SdfVal smooth_min(const SdfVal& a, const SdfVal& b, double k) {
  const double h = std::clamp(0.5 + 0.5 * (b.d - a.d) / k, 0.0, 1.0);
  SdfVal v;
  v.d = b.d + (a.d - b.d) * h - k * h * (1.0 - h);
  if (h <= 0.0 || h >= 1.0) {
    v.g = h >= 1.0 ? a.g : b.g;
  } else {
    const double dh = 0.5 / k;  // dh/db = +dh, dh/da = -dh
    const double common = (a.d - b.d) - k * (1.0 - 2.0 * h);
    const double da = h - common * dh;
    const double db = (1.0 - h) + common * dh;
    v.g = da * a.g + db * b.g;
  }
  return v;
}

SdfVal SyntheticScene::sdf(const Vec3& x) const {
  require(!primitives.empty(), "SyntheticScene: no primitives");
  SdfVal acc = primitive_sdf(primitives[0], x);
  for (size_t i = 1; i < primitives.size(); ++i) {
    const SdfVal v = primitive_sdf(primitives[i], x);
    if (primitives[i].smooth) {
      acc = smooth_min(acc, v, smooth_k);
    } else if (v.d < acc.d) {
      acc = v;
    }
  }
  return acc;
}

Vec3 SyntheticScene::albedo(const Vec3& x) const {
  Vec3 a;
  for (int c = 0; c < 3; ++c) {
    const double tex = std::sin(albedo_freq[0] * x.x() + albedo_phase[c]) *
                       std::sin(albedo_freq[1] * x.y() + 1.7 * albedo_phase[c]) *
                       std::sin(albedo_freq[2] * x.z() + 0.6 * albedo_phase[c]);
    a[c] = clamp01(albedo_base[c] + albedo_amp * tex);
  }
  return a;
}

double SyntheticScene::shadow(const Vec3& x, int shadow_id) const {
  require(shadow_id >= 0 && shadow_id < static_cast<int>(shadow_bands.size()),
          "SyntheticScene: invalid shadow condition");
  const ShadowBand& b = shadow_bands[shadow_id];
  const double d = (x - b.origin).dot(b.dir);
  return 1.0 - b.strength * std::exp(-(d * d) / (b.width * b.width));
}

namespace {

uint64_t hash_doubles(uint64_t h, const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    static_assert(sizeof(double) == sizeof(uint64_t));
    std::memcpy(&bits, &p[i], sizeof(bits));
    h = hash_combine(h, bits);
  }
  return h;
}

}  // namespace

uint64_t SyntheticScene::hash() const {
  uint64_t h = hash_u64(seed);
  for (char c : preset) h = hash_combine(h, static_cast<uint64_t>(c));
  for (const Primitive& p : primitives) {
    h = hash_combine(h, static_cast<uint64_t>(p.type));
    h = hash_doubles(h, p.center.data(), 3);
    h = hash_doubles(h, p.half.data(), 3);
    h = hash_doubles(h, &p.radius, 1);
    h = hash_doubles(h, &p.plane_y, 1);
    h = hash_combine(h, p.smooth ? 1 : 0);
  }
  h = hash_doubles(h, albedo_base.data(), 3);
  h = hash_doubles(h, &albedo_amp, 1);
  h = hash_doubles(h, albedo_freq.data(), 3);
  for (const ShadowBand& b : shadow_bands) {
    h = hash_doubles(h, b.dir.data(), 3);
    h = hash_doubles(h, b.origin.data(), 3);
    h = hash_doubles(h, &b.width, 1);
    h = hash_doubles(h, &b.strength, 1);
  }
  for (const EnvMap& e : gt_envmaps) h = hash_doubles(h, e.radiance.data(), e.radiance.size());
  for (const ToneMap& t : gt_tonemaps) {
    h = hash_doubles(h, t.A.data(), 9);
    h = hash_doubles(h, t.b.data(), 3);
  }
  for (const OccluderSpec& o : occluder_library) {
    h = hash_doubles(h, o.color_a.data(), 3);
    h = hash_doubles(h, o.color_b.data(), 3);
    h = hash_doubles(h, &o.stripe_freq, 1);
    h = hash_doubles(h, &o.base_radius, 1);
  }
  return h;
}

// ---------------------------------------------------------------------------

SyntheticScene make_scene(const std::string& preset, uint64_t seed) {
  require(preset == "minimal-sphere" || preset == "fountain-like" || preset == "facade-like",
          "make_scene: unknown preset '" + preset + "'");
  SyntheticScene sc;
  sc.preset = preset;
  sc.seed = seed;
  Rng rng(hash_combine(seed, 0xdecafull));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  if (preset == "minimal-sphere") {
    Primitive s;
    s.type = Primitive::Type::Sphere;
    s.center = Vec3::Zero();
    s.radius = 1.0;
    sc.primitives = {s};
    sc.albedo_base = Vec3::Constant(0.8);
    sc.albedo_amp = 0.0;
    sc.centroid = Vec3::Zero();
  } else if (preset == "fountain-like") {
    Primitive column;  // central pillar
    column.type = Primitive::Type::RoundedBox;
    column.center = Vec3(0, -0.05, 0);
    column.half = Vec3(0.12, 0.42, 0.12);
    column.radius = 0.04;
    Primitive bowl;  // cap sphere, blended into the pillar
    bowl.type = Primitive::Type::Sphere;
    bowl.center = Vec3(0, 0.40, 0);
    bowl.radius = 0.26;
    bowl.smooth = true;
    Primitive basin;  // wide base, blended
    basin.type = Primitive::Type::RoundedBox;
    basin.center = Vec3(0, -0.44, 0);
    basin.half = Vec3(0.5, 0.08, 0.5);
    basin.radius = 0.05;
    basin.smooth = true;
    Primitive ground;  // finite slab standing in for the ground plane
    ground.type = Primitive::Type::Box;
    ground.center = Vec3(0, -0.58, 0);
    ground.half = Vec3(0.72, 0.05, 0.72);
    sc.primitives = {column, bowl, basin, ground};
    sc.albedo_base = Vec3(0.55, 0.5, 0.45);
    sc.albedo_amp = 0.22;
    sc.albedo_freq = Vec3(6.0 + 3.0 * u(rng), 7.0 + 3.0 * u(rng), 6.0 + 3.0 * u(rng));
    sc.albedo_phase = Vec3(2 * kPi * u(rng), 2 * kPi * u(rng), 2 * kPi * u(rng));
    sc.centroid = Vec3(0, -0.1, 0);
  } else {  // facade-like
    Primitive block;  // main building mass
    block.type = Primitive::Type::RoundedBox;
    block.center = Vec3(0, -0.05, 0.18);
    block.half = Vec3(0.55, 0.48, 0.16);
    block.radius = 0.05;
    Primitive porch;  // protruding entrance, blended
    porch.type = Primitive::Type::RoundedBox;
    porch.center = Vec3(0, -0.32, -0.08);
    porch.half = Vec3(0.2, 0.2, 0.1);
    porch.radius = 0.04;
    porch.smooth = true;
    Primitive ground;
    ground.type = Primitive::Type::Box;
    ground.center = Vec3(0, -0.60, 0);
    ground.half = Vec3(0.72, 0.05, 0.72);
    sc.primitives = {block, porch, ground};
    sc.albedo_base = Vec3(0.6, 0.55, 0.48);
    sc.albedo_amp = 0.25;
    sc.albedo_freq = Vec3(8.0 + 4.0 * u(rng), 9.0 + 4.0 * u(rng), 8.0 + 4.0 * u(rng));
    sc.albedo_phase = Vec3(2 * kPi * u(rng), 2 * kPi * u(rng), 2 * kPi * u(rng));
    sc.centroid = Vec3(0, -0.1, 0);
  }

  // Two illumination conditions: warm high sun vs cooler low sun from the
  // opposite side. Deterministic parameters, jittered slightly by seed.
  {
    ProceduralSkyParams p0;
    const double az0 = kPi * (0.2 + 0.1 * u(rng));
    const double el0 = kPi / 180.0 * (48.0 + 8.0 * u(rng));
    p0.sun_direction = Vec3(std::cos(el0) * std::cos(az0), std::sin(el0),
                            std::cos(el0) * std::sin(az0));
    p0.sun_intensity = 25.0;
    p0.sun_angular_radius = 0.09;
    p0.zenith_color = Vec3(0.10, 0.22, 0.45);
    p0.horizon_color = Vec3(0.5, 0.55, 0.6);
    p0.ambient = 0.06;
    ProceduralSkyParams p1;
    const double az1 = az0 + kPi * (0.9 + 0.2 * u(rng));
    const double el1 = kPi / 180.0 * (22.0 + 6.0 * u(rng));
    p1.sun_direction = Vec3(std::cos(el1) * std::cos(az1), std::sin(el1),
                            std::cos(el1) * std::sin(az1));
    p1.sun_intensity = 12.0;
    p1.sun_angular_radius = 0.11;
    p1.zenith_color = Vec3(0.22, 0.14, 0.20);
    p1.horizon_color = Vec3(0.75, 0.45, 0.28);
    p1.ambient = 0.05;
    sc.gt_envmaps = {procedural_sky(p0, 16, 32), procedural_sky(p1, 16, 32)};
  }
  {
    ToneMap t0;  // near-neutral
    t0.A = Vec3(1.04, 1.0, 0.96).asDiagonal();
    t0.b = Vec3(0.01, 0.0, 0.0);
    ToneMap t1;  // warm, brighter exposure
    t1.A = Vec3(1.18, 1.04, 0.88).asDiagonal();
    t1.A(0, 1) = 0.03;
    t1.b = Vec3(0.02, 0.01, -0.01);
    sc.gt_tonemaps = {t0, t1};
  }
  {
    SyntheticScene::ShadowBand b0;
    b0.dir = Vec3(std::cos(0.3), 0, std::sin(0.3));
    b0.origin = Vec3(0.25, 0, 0);
    b0.width = 0.4;
    b0.strength = 0.45;
    SyntheticScene::ShadowBand b1;
    b1.dir = Vec3(std::cos(1.9), 0, std::sin(1.9));
    b1.origin = Vec3(-0.2, 0, 0.2);
    b1.width = 0.55;
    b1.strength = 0.3;
    sc.shadow_bands = {b0, b1};
  }
  {
    OccluderSpec o0;
    o0.color_a = Vec3(0.9, 0.15, 0.15);
    o0.color_b = Vec3(0.95, 0.9, 0.2);
    o0.stripe_freq = 14.0;
    o0.base_radius = 0.2;
    OccluderSpec o1;
    o1.color_a = Vec3(0.15, 0.3, 0.9);
    o1.color_b = Vec3(0.2, 0.9, 0.5);
    o1.stripe_freq = 9.0;
    o1.base_radius = 0.16;
    sc.occluder_library = {o0, o1};
  }
  return sc;
}

// ---------------------------------------------------------------------------

namespace {

struct OccluderHit {
  double t = 0.0;
  int index = -1;  // into the placed list
};

std::optional<OccluderHit> intersect_occluders(const Ray& ray,
                                               const std::vector<PlacedOccluder>& occ) {
  OccluderHit best;
  best.t = 1e30;
  for (int i = 0; i < static_cast<int>(occ.size()); ++i) {
    const Vec3 oc = ray.origin - occ[i].pos;
    const double b = oc.dot(ray.dir);
    const double c = oc.squaredNorm() - occ[i].radius * occ[i].radius;
    const double disc = b * b - c;
    if (disc <= 0) continue;
    const double t = -b - std::sqrt(disc);
    if (t > 1e-4 && t < best.t) {
      best.t = t;
      best.index = i;
    }
  }
  if (best.index < 0) return std::nullopt;
  return best;
}

Vec3 occluder_color(const OccluderSpec& spec, const Vec3& p, const Vec3& sun_dir,
                    const Vec3& normal) {
  const double stripes = std::sin(spec.stripe_freq * p.y() + 3.0 * p.x());
  const Vec3 base = stripes > 0 ? spec.color_a : spec.color_b;
  const double lit = 0.55 + 0.45 * std::max(normal.dot(sun_dir), 0.0);
  return base * lit;
}

struct TraceResult {
  bool hit = false, valid = true;
  double t = 0.0;
  Vec3 pos = Vec3::Zero(), normal = Vec3::Zero();
};

TraceResult sphere_trace(const SyntheticScene& scene, const Ray& ray, double t_max) {
  TraceResult r;
  double t = 1e-3;
  for (int step = 0; step < 512; ++step) {
    const Vec3 p = ray.origin + t * ray.dir;
    const SdfVal v = scene.sdf(p);
    if (v.d < 1e-6) {
      r.hit = true;
      r.t = t;
      r.pos = p;
      r.normal = v.g.normalized();
      return r;
    }
    t += v.d;
    if (t > t_max) return r;  // sky
  }
  r.valid = false;  // did not converge
  return r;
}

}  // namespace

GtRender render_ground_truth(const SyntheticScene& scene, const CameraSpec& cam, int env_id,
                             int shadow_id, int tone_id,
                             const std::vector<PlacedOccluder>& occluders) {
  validate_camera(cam);
  require(env_id >= 0 && env_id < static_cast<int>(scene.gt_envmaps.size()),
          "render_ground_truth: invalid env condition");
  require(tone_id >= 0 && tone_id < static_cast<int>(scene.gt_tonemaps.size()),
          "render_ground_truth: invalid tone condition");
  const EnvMap& env = scene.gt_envmaps[env_id];
  const SolidAngleGrid dw = solid_angles(env.height, env.width);
  const ToneMap& tone = scene.gt_tonemaps[tone_id];
  // Brightest texel direction doubles as the sun direction for occluder shading.
  int sun_texel = 0;
  env.radiance.colwise().sum().maxCoeff(&sun_texel);
  const Vec3 sun_dir = texel_direction(sun_texel / env.width, sun_texel % env.width, env.height,
                                       env.width);

  const int w = cam.width, h = cam.height;
  GtRender out;
  out.rgb = Image(w, h, 3);
  out.mask_sky = Image(w, h, 1);
  out.mask_occluder = Image(w, h, 1);
  out.depth = Image(w, h, 1);
  out.invalid = Image(w, h, 1);
  const double t_max = cam.t.norm() + 3.0;

#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const Ray ray = ray_through_pixel(cam, ix, iy);
      const TraceResult tr = sphere_trace(scene, ray, t_max);
      if (!tr.valid) out.invalid.at(ix, iy, 0) = 1.0f;
      if (tr.hit) out.mask_sky.at(ix, iy, 0) = 1.0f;  // non-sky from geometry only

      const auto occ = intersect_occluders(ray, occluders);
      if (occ && (!tr.hit || occ->t < tr.t)) {
        const PlacedOccluder& po = occluders[occ->index];
        const Vec3 p = ray.origin + occ->t * ray.dir;
        const Vec3 n = (p - po.pos).normalized();
        const Vec3 c =
            occluder_color(scene.occluder_library[po.lib_index], p, sun_dir, n);
        out.rgb.set_rgb(ix, iy, tone_apply(tone, c));
        out.mask_occluder.at(ix, iy, 0) = 1.0f;
        out.depth.at(ix, iy, 0) = static_cast<float>(occ->t);
        continue;
      }
      if (tr.hit) {
        const double s = scene.shadow(tr.pos, shadow_id);
        const Vec3 cb = shade_lambertian(scene.albedo(tr.pos), s, tr.normal, env, dw);
        out.rgb.set_rgb(ix, iy, tone_apply(tone, cb));
        out.depth.at(ix, iy, 0) = static_cast<float>(tr.t);
      } else {
        // Sky straight from the envmap; not tone mapped, matching Eq. (1).
        out.rgb.set_rgb(ix, iy, envmap_lookup_bilinear(env, ray.dir));
      }
    }
  }
  return out;
}

GtRender render_ground_truth(const SyntheticScene& scene, const CameraSpec& cam,
                             int condition_id) {
  require(condition_id >= 0 && condition_id < scene.n_conditions(),
          "render_ground_truth: invalid condition id");
  const int tone_id = condition_id % static_cast<int>(scene.gt_tonemaps.size());
  const int shadow_id = condition_id % static_cast<int>(scene.shadow_bands.size());
  return render_ground_truth(scene, cam, condition_id, shadow_id, tone_id);
}

// ---------------------------------------------------------------------------

uint64_t DatasetSpec::hash() const {
  uint64_t h = hash_u64(seed);
  h = hash_combine(h, static_cast<uint64_t>(n_views));
  h = hash_combine(h, static_cast<uint64_t>(image_size));
  h = hash_doubles(h, &occluder_prob, 1);
  h = hash_doubles(h, &orbit_radius, 1);
  h = hash_doubles(h, &fov_deg, 1);
  h = hash_combine(h, static_cast<uint64_t>(test_every));
  return h;
}

void DatasetSpec::validate() const {
  require(n_views >= 10, "DatasetSpec: need at least 10 views");
  require(image_size >= 16, "DatasetSpec: image size too small");
  require(occluder_prob >= 0.0 && occluder_prob <= 1.0,
          "DatasetSpec: occluder probability must be in [0,1]");
  require(orbit_radius > 1.5, "DatasetSpec: orbit must be outside the scene sphere");
  require(fov_deg > 10 && fov_deg < 120, "DatasetSpec: fov out of range");
  require(test_every >= 2, "DatasetSpec: test_every must be at least 2");
}

CameraSpec dataset_camera(const SyntheticScene& scene, const DatasetSpec& spec, int view) {
  HashRng rng(hash_combine(spec.seed, 0xca3aull), static_cast<uint64_t>(view));
  const double az = 2.0 * kPi * (view + 0.35 * (rng.next_u01() - 0.5)) / spec.n_views;
  const double height = 0.5 + 0.6 * rng.next_u01();
  const double radius = spec.orbit_radius * (0.95 + 0.1 * rng.next_u01());
  const Vec3 eye = scene.centroid +
                   Vec3(radius * std::cos(az), height, radius * std::sin(az));
  const Vec3 target = scene.centroid + 0.05 * Vec3(rng.next_u01() - 0.5, rng.next_u01() - 0.5,
                                                   rng.next_u01() - 0.5);
  return camera_look_at(eye, target, spec.image_size, spec.image_size,
                        spec.fov_deg * kPi / 180.0);
}

int dataset_condition(const SyntheticScene& scene, int view) {
  return view % scene.n_conditions();
}

std::vector<PlacedOccluder> dataset_occluders(const SyntheticScene& scene,
                                              const DatasetSpec& spec, int view) {
  if (spec.test_every > 0 && view % spec.test_every == 0) return {};  // test views stay clean
  HashRng rng(hash_combine(spec.seed, 0x0cc1ull), static_cast<uint64_t>(view));
  if (rng.next_u01() >= spec.occluder_prob) return {};
  const CameraSpec cam = dataset_camera(scene, spec, view);
  PlacedOccluder po;
  po.lib_index = static_cast<int>(rng.next_u64() % scene.occluder_library.size());
  // Drop the occluder on the eye-to-centroid segment so it covers geometry.
  const double f = 0.30 + 0.10 * rng.next_u01();  // fraction from centroid toward eye
  const Vec3 lateral(0.25 * (rng.next_u01() - 0.5), 0.25 * (rng.next_u01() - 0.5),
                     0.25 * (rng.next_u01() - 0.5));
  po.pos = scene.centroid + f * (cam.t - scene.centroid) + lateral;
  po.radius = scene.occluder_library[po.lib_index].base_radius * (0.9 + 0.3 * rng.next_u01());
  return {po};
}

Dataset generate_dataset(const SyntheticScene& scene, const DatasetSpec& spec,
                         const std::string& out_dir) {
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks_sky");
  fs::create_directories(fs::path(out_dir) / "masks_occluder");

  json cam_frames = json::array();
  json man_frames = json::object();
  for (int v = 0; v < spec.n_views; ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04d", v);
    const CameraSpec cam = dataset_camera(scene, spec, v);
    // Every pose must see the scene.
    const Vec3 c = project(cam, scene.centroid);
    require(c.x() >= 0 && c.x() < cam.width && c.y() >= 0 && c.y() < cam.height,
            "generate_dataset: pose does not see the scene centroid");

    const int cond = dataset_condition(scene, v);
    const int tone_id = cond % static_cast<int>(scene.gt_tonemaps.size());
    const int shadow_id = cond % static_cast<int>(scene.shadow_bands.size());
    const auto occluders = dataset_occluders(scene, spec, v);
    const GtRender gt = render_ground_truth(scene, cam, cond, shadow_id, tone_id, occluders);

    save_exr_image((fs::path(out_dir) / "images" / (std::string(name) + ".exr")).string(),
                   gt.rgb);
    save_mask_png((fs::path(out_dir) / "masks_sky" / (std::string(name) + ".png")).string(),
                  gt.mask_sky);
    save_mask_png(
        (fs::path(out_dir) / "masks_occluder" / (std::string(name) + ".png")).string(),
        gt.mask_occluder);

    json cj = json::parse(camera_to_json(cam));
    cj["id"] = name;
    cam_frames.push_back(cj);
    man_frames[name] = {{"env_id", cond},
                       {"shadow_id", shadow_id},
                       {"tone_id", tone_id},
                       {"test", spec.test_every > 0 && v % spec.test_every == 0},
                       {"occluders", occluders.size()}};
  }

  {
    std::ofstream out(fs::path(out_dir) / "cameras.json");
    out << json{{"frames", cam_frames}}.dump(1) << "\n";
  }
  {
    json manifest{{"scene_preset", scene.preset},
                  {"scene_seed", scene.seed},
                  {"scene_hash", scene.hash()},
                  {"spec_hash", spec.hash()},
                  {"n_conditions", scene.n_conditions()},
                  {"frames", man_frames}};
    std::ofstream out(fs::path(out_dir) / "gt_manifest.json");
    out << manifest.dump(1) << "\n";
  }
  return load_dataset(out_dir);
}

}  // namespace rerender
