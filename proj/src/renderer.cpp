// SPDX-License-Identifier: Apache-2.0
#include "rerender/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rerender {

void RenderOptions::validate() const {
  require(n_coarse >= 2, "RenderOptions: need at least 2 coarse samples");
  require(n_fine >= 0, "RenderOptions: n_fine must be non-negative");
  require(bound_radius > 0, "RenderOptions: bound radius must be positive");
  require(chunk >= 1, "RenderOptions: chunk must be positive");
}

std::optional<std::pair<double, double>> ray_sphere_range(const Ray& ray, double radius) {
  // |o + t d|^2 = r^2 with unit d.
  const double b = ray.origin.dot(ray.dir);
  const double c = ray.origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t0 = -b - sq, t1 = -b + sq;
  t0 = std::max(t0, 1e-4);
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

VecX stratified_depths(double near, double far, int count, HashRng& rng) {
  VecX t(count);
  const double step = (far - near) / count;
  for (int i = 0; i < count; ++i) t[i] = near + step * (i + rng.next_u01());
  return t;
}

VecX importance_depths(const VecX& depths, const VecX& weights, int n, HashRng& rng) {
  const int k = static_cast<int>(weights.size());
  require(depths.size() == k + 1, "importance_depths: need K+1 depths for K weights");
  // CDF over intervals; small floor keeps it valid when all weights vanish.
  std::vector<double> cdf(k + 1, 0.0);
  for (int i = 0; i < k; ++i) cdf[i + 1] = cdf[i] + weights[i] + 1e-5;
  const double total = cdf[k];
  VecX out(n);
  for (int i = 0; i < n; ++i) {
    const double u = (i + rng.next_u01()) / n * total;
    int lo = static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) - 1;
    lo = std::clamp(lo, 0, k - 1);
    const double seg = cdf[lo + 1] - cdf[lo];
    const double frac = seg > 0 ? (u - cdf[lo]) / seg : 0.5;
    out[i] = depths[lo] + frac * (depths[lo + 1] - depths[lo]);
  }
  return out;
}

VecX merge_depths(const VecX& a, const VecX& b) {
  VecX out(a.size() + b.size());
  std::merge(a.data(), a.data() + a.size(), b.data(), b.data() + b.size(), out.data());
  for (int i = 1; i < out.size(); ++i)
    if (out[i] <= out[i - 1]) out[i] = out[i - 1] + 1e-9;
  return out;
}

double alpha_from_sdf(double sdf_a, double sdf_b, double sharpness) {
  const double pa = sigmoid(sharpness * sdf_a);
  const double pb = sigmoid(sharpness * sdf_b);
  return std::max((pa - pb) / std::max(pa, 1e-300), 0.0);
}

VecX alphas_from_sdf(const VecX& sdf, double sharpness) {
  require(sdf.size() >= 2, "alphas_from_sdf: need at least 2 SDF samples");
  VecX a(sdf.size() - 1);
  for (int k = 0; k + 1 < sdf.size(); ++k) a[k] = alpha_from_sdf(sdf[k], sdf[k + 1], sharpness);
  return a;
}

CompositeResult composite(const VecX& alphas, const Mat3X& colors, const Vec3& sky) {
  require(colors.cols() == alphas.size(), "composite: alphas/colors size mismatch");
  CompositeResult r;
  r.weights.resize(alphas.size());
  double t = 1.0;
  for (int k = 0; k < alphas.size(); ++k) {
    require(alphas[k] >= 0.0 && alphas[k] <= 1.0, "composite: alpha outside [0,1]");
    r.weights[k] = t * alphas[k];
    r.color += r.weights[k] * colors.col(k);
    t *= 1.0 - alphas[k];
  }
  r.residual = t;
  r.color += t * sky;
  return r;
}

// ---------------------------------------------------------------------------

SampleResult sample_points(const Ray& ray, double near, double far, int n_coarse,
                           int n_importance, const SceneModel& model, HashRng& rng) {
  require(near < far, "sample_points: near must be below far");
  require(n_coarse >= 2, "sample_points: need at least 2 coarse samples");
  SampleResult res;
  VecX coarse = stratified_depths(near, far, n_coarse, rng);
  if (n_importance == 0) {
    res.depths = std::move(coarse);
    res.importance.resize(0);
    return res;
  }
  // Coarse probe: SDF only, to get alpha weights for the importance round.
  Mat3X xs(3, coarse.size());
  for (int i = 0; i < coarse.size(); ++i) xs.col(i) = ray.origin + coarse[i] * ray.dir;
  const GeometryEval ev = eval_geometry_batch(model, xs, false);
  const VecX alphas = alphas_from_sdf(ev.sdf, model.sharpness());
  VecX weights(alphas.size());
  double t = 1.0;
  for (int i = 0; i < alphas.size(); ++i) {
    weights[i] = t * alphas[i];
    t *= 1.0 - alphas[i];
  }
  res.importance = importance_depths(coarse, weights, n_importance, rng);
  res.depths = merge_depths(coarse, res.importance);
  return res;
}

RenderResult render_image(const SceneModel& model, const SkyDecoder& decoder,
                          const CameraSpec& cam, const FrameCodes& codes,
                          const RenderOptions& opts) {
  opts.validate();
  require(cam.width > 0 && cam.height > 0, "render_image: empty camera");
  const int w = cam.width, h = cam.height, n_px = w * h;
  const EnvMap env = decode_envmap(decoder, codes.l_e);
  const SolidAngleGrid dw = solid_angles(env.height, env.width);
  const Mat3X texdirs = texel_directions(env.height, env.width);
  const ToneMap tone = tone_decode(model.tone, codes.l_t);
  const double s = model.sharpness();

  RenderResult res;
  res.rgb = Image(w, h, 3);
  res.albedo = Image(w, h, 3);
  res.shadow = Image(w, h, 1);
  res.normal = Image(w, h, 3);
  res.depth = Image(w, h, 1);
  res.alpha = Image(w, h, 1);
  res.diag = Image(w, h, 1);

  double opacity_sum = 0.0;
  int missed = 0, flagged = 0;

  for (int chunk_start = 0; chunk_start < n_px; chunk_start += opts.chunk) {
    const int chunk_n = std::min(opts.chunk, n_px - chunk_start);
    // Per-pixel setup: rays, bounds, depth samples.
    std::vector<Ray> rays(chunk_n);
    std::vector<char> hit(chunk_n, 0);
    std::vector<VecX> depths(chunk_n);
#pragma omp parallel for schedule(static)
    for (int p = 0; p < chunk_n; ++p) {
      const int idx = chunk_start + p;
      rays[p] = ray_through_pixel(cam, idx % w, idx / w);
      auto range = ray_sphere_range(rays[p], opts.bound_radius);
      if (!range) continue;
      hit[p] = 1;
      HashRng rng(opts.seed, static_cast<uint64_t>(idx));
      depths[p] = sample_points(rays[p], range->first, range->second, opts.n_coarse, opts.n_fine,
                                model, rng)
                      .depths;
    }

    std::vector<int> hits;
    for (int p = 0; p < chunk_n; ++p)
      if (hit[p]) hits.push_back(p);
    const int nh = static_cast<int>(hits.size());
    const int ns = opts.n_coarse + opts.n_fine;  // samples per hit ray
    const int ni = ns - 1;                       // intervals per hit ray

    Mat3X sky_dirs(3, chunk_n);
    for (int p = 0; p < chunk_n; ++p) sky_dirs.col(p) = rays[p].dir;
    const Mat3X sky_rgb = eval_sky_batch(model, sky_dirs, codes.l_e);

    MatX alb, irr;
    VecX shd;
    std::vector<VecX> alphas(chunk_n);
    std::vector<char> degenerate(nh * ni, 0);
    Mat3X normals;
    GeometryEval geo;
    if (nh > 0) {
      Mat3X xs(3, nh * ns);
      for (int q = 0; q < nh; ++q) {
        const int p = hits[q];
        for (int k = 0; k < ns; ++k) xs.col(q * ns + k) = rays[p].origin + depths[p][k] * rays[p].dir;
      }
      geo = eval_geometry_batch(model, xs, true);
      // Interval-start subset for appearance, shadow and shading.
      MatX enc_s(geo.enc.rows(), nh * ni);
      MatX feat_s(geo.feature.rows(), nh * ni);
      normals.resize(3, nh * ni);
      for (int q = 0; q < nh; ++q) {
        for (int k = 0; k < ni; ++k) {
          const int src = q * ns + k, dst = q * ni + k;
          enc_s.col(dst) = geo.enc.col(src);
          feat_s.col(dst) = geo.feature.col(src);
          const Vec3 g = geo.grad.col(src);
          if (g.norm() < 1e-8) degenerate[dst] = 1;
          // Degenerate gradients keep the raw direction; the pixel is flagged
          // in the diagnostics mask instead of erroring out.
          normals.col(dst) = g / std::max(g.norm(), 1e-12);
        }
      }
      alb = eval_albedo_batch(model, enc_s, feat_s);
      shd = eval_shadow_batch(model, enc_s, codes.l_s);
      irr = shade_irradiance_batch(env, dw, texdirs, normals);
#pragma omp parallel for schedule(static)
      for (int q = 0; q < nh; ++q) {
        const int p = hits[q];
        alphas[p].resize(ni);
        for (int k = 0; k < ni; ++k)
          alphas[p][k] = alpha_from_sdf(geo.sdf[q * ns + k], geo.sdf[q * ns + k + 1], s);
      }
    }

#pragma omp parallel for schedule(static) reduction(+ : opacity_sum, missed, flagged)
    for (int p = 0; p < chunk_n; ++p) {
      const int idx = chunk_start + p;
      const int ix = idx % w, iy = idx / w;
      const Vec3 sky = sky_rgb.col(p);
      if (!hit[p]) {
        res.rgb.set_rgb(ix, iy, sky);
        ++missed;
        continue;
      }
      const int q = static_cast<int>(std::lower_bound(hits.begin(), hits.end(), p) - hits.begin());
      Mat3X gammas(3, ni);
      Vec3 alb_acc = Vec3::Zero(), nrm_acc = Vec3::Zero();
      double shd_acc = 0.0, depth_acc = 0.0;
      for (int k = 0; k < ni; ++k) {
        const int c = q * ni + k;
        const Vec3 cb = alb.col(c).cwiseProduct(shd[c] * irr.col(c));
        gammas.col(k) = tone_apply(tone, cb);
      }
      const CompositeResult cr = composite(alphas[p], gammas, sky);
      bool flag = false;
      for (int k = 0; k < ni; ++k) {
        const int c = q * ni + k;
        alb_acc += cr.weights[k] * alb.col(c);
        shd_acc += cr.weights[k] * shd[c];
        nrm_acc += cr.weights[k] * normals.col(c);
        depth_acc += cr.weights[k] * depths[p][k];
        if (degenerate[c] && cr.weights[k] > 1e-3) flag = true;
      }
      const double opacity = 1.0 - cr.residual;
      res.rgb.set_rgb(ix, iy, cr.color);
      res.albedo.set_rgb(ix, iy, alb_acc);
      res.normal.set_rgb(ix, iy, nrm_acc);
      res.shadow.at(ix, iy, 0) = static_cast<float>(shd_acc);
      res.depth.at(ix, iy, 0) = static_cast<float>(opacity > 1e-9 ? depth_acc / opacity : 0.0);
      res.alpha.at(ix, iy, 0) = static_cast<float>(opacity);
      if (flag) {
        res.diag.at(ix, iy, 0) = 1.0f;
        ++flagged;
      }
      opacity_sum += opacity;
    }
  }
  res.stats.sky_only_rays = missed;
  res.stats.flagged_pixels = flagged;
  res.stats.mean_opacity = opacity_sum / n_px;
  return res;
}

// ---------------------------------------------------------------------------
// Serial scalar reference

namespace ref {
namespace {

double act_scalar(nn::Act a, double z) {
  switch (a) {
    case nn::Act::None: return z;
    case nn::Act::ReLU: return z > 0 ? z : 0.0;
    case nn::Act::Softplus: return z > 30.0 ? z : std::log1p(std::exp(z));
    case nn::Act::Sigmoid: return sigmoid(z);
    case nn::Act::Exp: return std::exp(std::min(z, 30.0));
    case nn::Act::Tanh: return std::tanh(z);
  }
  return z;
}

std::vector<double> mlp_forward(const nn::Mlp& net, const std::vector<double>& input) {
  std::vector<double> h = input;
  for (size_t l = 0; l < net.layers.size(); ++l) {
    const nn::Linear& lin = net.layers[l];
    const nn::Act act = (l + 1 == net.layers.size()) ? net.output : net.hidden;
    std::vector<double> out(lin.W.rows());
    for (int i = 0; i < lin.W.rows(); ++i) {
      double z = lin.b(i);
      for (int j = 0; j < lin.W.cols(); ++j) z += lin.W(i, j) * h[j];
      out[i] = act_scalar(act, z);
    }
    h = std::move(out);
  }
  return h;
}

std::vector<double> encode(const Vec3& x, const EncodingSpec& spec) {
  std::vector<double> out;
  if (spec.include_input)
    for (int c = 0; c < 3; ++c) out.push_back(x[c]);
  double f = kPi;
  for (int l = 0; l < spec.num_freqs; ++l, f *= 2.0) {
    for (int c = 0; c < 3; ++c) out.push_back(std::sin(f * x[c]));
    for (int c = 0; c < 3; ++c) out.push_back(std::cos(f * x[c]));
  }
  return out;
}

struct GeomOut {
  double sdf;
  std::vector<double> feature;
};

GeomOut geometry(const SceneModel& model, const Vec3& x) {
  std::vector<double> out = mlp_forward(model.geometry, encode(x, model.pos_enc));
  GeomOut g;
  g.sdf = out[0] + SceneModel::sphere_offset(x);
  g.feature.assign(out.begin() + 1, out.end());
  return g;
}

Vec3 geometry_normal(const SceneModel& model, const Vec3& x) {
  // Central differences: the reference path must not depend on the batched
  // analytic gradient it is meant to check.
  const double eps = 1e-5;
  Vec3 g;
  for (int c = 0; c < 3; ++c) {
    Vec3 xp = x, xm = x;
    xp[c] += eps;
    xm[c] -= eps;
    g[c] = (geometry(model, xp).sdf - geometry(model, xm).sdf) / (2 * eps);
  }
  return g / std::max(g.norm(), 1e-12);
}

}  // namespace

Vec3 render_pixel(const SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                  const FrameCodes& codes, int ix, int iy, const RenderOptions& opts) {
  opts.validate();
  const Ray ray = ray_through_pixel(cam, ix, iy);
  const EnvMap env = decode_envmap(decoder, codes.l_e);
  const SolidAngleGrid dw = solid_angles(env.height, env.width);
  const ToneMap tone = tone_decode(model.tone, codes.l_t);

  std::vector<double> sky_in = encode(ray.dir, model.dir_enc);
  for (int i = 0; i < codes.l_e.size(); ++i) sky_in.push_back(codes.l_e[i]);
  const std::vector<double> sky_out = mlp_forward(model.sky, sky_in);
  const Vec3 sky(sky_out[0], sky_out[1], sky_out[2]);

  auto range = ray_sphere_range(ray, opts.bound_radius);
  if (!range) return sky;
  HashRng rng(opts.seed, static_cast<uint64_t>(iy * cam.width + ix));
  const VecX depths =
      sample_points(ray, range->first, range->second, opts.n_coarse, opts.n_fine, model, rng)
          .depths;

  const int ns = static_cast<int>(depths.size());
  const double s = model.sharpness();
  std::vector<GeomOut> geo(ns);
  for (int k = 0; k < ns; ++k) geo[k] = geometry(model, ray.origin + depths[k] * ray.dir);

  Vec3 color = Vec3::Zero();
  double t = 1.0;
  for (int k = 0; k + 1 < ns; ++k) {
    const double alpha = alpha_from_sdf(geo[k].sdf, geo[k + 1].sdf, s);
    const Vec3 x = ray.origin + depths[k] * ray.dir;
    const Vec3 n = geometry_normal(model, x);

    std::vector<double> app_in = encode(x, model.pos_enc);
    app_in.insert(app_in.end(), geo[k].feature.begin(), geo[k].feature.end());
    const std::vector<double> alb = mlp_forward(model.appearance, app_in);

    std::vector<double> shd_in = encode(x, model.pos_enc);
    for (int i = 0; i < codes.l_s.size(); ++i) shd_in.push_back(codes.l_s[i]);
    const double shd = mlp_forward(model.shadow, shd_in)[0];

    Vec3 irradiance = Vec3::Zero();
    for (int i = 0; i < env.height; ++i) {
      for (int j = 0; j < env.width; ++j) {
        const double cosine = texel_direction(i, j, env.height, env.width).dot(n);
        if (cosine > 0)
          irradiance += env.radiance.col(i * env.width + j) * cosine * dw.dw[i * env.width + j];
      }
    }
    const Vec3 cb = Vec3(alb[0], alb[1], alb[2]).cwiseProduct(shd * irradiance);
    color += t * alpha * tone_apply(tone, cb);
    t *= 1.0 - alpha;
  }
  return color + t * sky;
}

}  // namespace ref

}  // namespace rerender
