// SPDX-License-Identifier: Apache-2.0
#include "rerender/lighting.hpp"

#include <algorithm>
#include <cmath>

#include "rerender/exr.hpp"

namespace rerender {

SolidAngleGrid solid_angles(int h, int w) {
  require(h >= 1 && w >= 1, "solid_angles: resolution must be positive");
  SolidAngleGrid g;
  g.height = h;
  g.width = w;
  g.dw.resize(h * w);
  const double dphi = 2.0 * kPi / w;
  for (int i = 0; i < h; ++i) {
    const double cos_top = std::cos(kPi * i / h);
    const double cos_bot = std::cos(kPi * (i + 1) / h);
    const double band = dphi * (cos_top - cos_bot);
    for (int j = 0; j < w; ++j) g.dw[i * w + j] = band;
  }
  return g;
}

Vec3 texel_direction(int i, int j, int h, int w) {
  const double theta = kPi * (i + 0.5) / h;  // from +y (zenith)
  const double phi = 2.0 * kPi * (j + 0.5) / w;
  const double st = std::sin(theta);
  return Vec3(st * std::cos(phi), std::cos(theta), st * std::sin(phi));
}

Mat3X texel_directions(int h, int w) {
  Mat3X dirs(3, h * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) dirs.col(i * w + j) = texel_direction(i, j, h, w);
  return dirs;
}

std::pair<int, int> direction_to_texel(const Vec3& dir, int h, int w) {
  const double theta = std::acos(std::clamp(dir.y(), -1.0, 1.0));
  double phi = std::atan2(dir.z(), dir.x());
  if (phi < 0) phi += 2.0 * kPi;
  int i = std::clamp(static_cast<int>(theta / kPi * h), 0, h - 1);
  int j = std::clamp(static_cast<int>(phi / (2.0 * kPi) * w), 0, w - 1);
  return {i, j};
}

Vec3 envmap_lookup_bilinear(const EnvMap& env, const Vec3& dir) {
  const int h = env.height, w = env.width;
  const double theta = std::acos(std::clamp(dir.y(), -1.0, 1.0));
  double phi = std::atan2(dir.z(), dir.x());
  if (phi < 0) phi += 2.0 * kPi;
  // Continuous texel coordinates with centers at +0.5; phi wraps, theta clamps.
  const double fy = theta / kPi * h - 0.5;
  const double fx = phi / (2.0 * kPi) * w - 0.5;
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const double wy = fy - y0, wx = fx - x0;
  Vec3 out = Vec3::Zero();
  for (int dy = 0; dy < 2; ++dy) {
    const int yi = std::clamp(y0 + dy, 0, h - 1);
    for (int dx = 0; dx < 2; ++dx) {
      const int xi = ((x0 + dx) % w + w) % w;
      const double wgt = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
      out += wgt * env.radiance.col(yi * w + xi);
    }
  }
  return out;
}

Vec3 envmap_energy(const EnvMap& env, const SolidAngleGrid& dw) {
  require(env.height == dw.height && env.width == dw.width,
          "envmap_energy: resolution mismatch");
  return env.radiance * dw.dw;
}

EnvMap downscale_envmap(const EnvMap& env, int factor) {
  require(factor >= 1 && env.height % factor == 0 && env.width % factor == 0,
          "downscale_envmap: factor must divide resolution");
  const int h = env.height / factor, w = env.width / factor;
  const SolidAngleGrid fine = solid_angles(env.height, env.width);
  EnvMap out(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      Vec3 acc = Vec3::Zero();
      double wsum = 0.0;
      for (int di = 0; di < factor; ++di) {
        for (int dj = 0; dj < factor; ++dj) {
          const int idx = (i * factor + di) * env.width + (j * factor + dj);
          acc += fine.dw[idx] * env.radiance.col(idx);
          wsum += fine.dw[idx];
        }
      }
      out.radiance.col(i * w + j) = acc / wsum;
    }
  }
  return out;
}

Mat3X downscale_envmap_backward(int native_h, int native_w, int factor, const Mat3X& d_coarse) {
  const int h = native_h / factor, w = native_w / factor;
  require(d_coarse.cols() == h * w, "downscale_envmap_backward: gradient shape mismatch");
  const SolidAngleGrid fine = solid_angles(native_h, native_w);
  Mat3X d_native = Mat3X::Zero(3, native_h * native_w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double wsum = 0.0;
      for (int di = 0; di < factor; ++di)
        for (int dj = 0; dj < factor; ++dj)
          wsum += fine.dw[(i * factor + di) * native_w + (j * factor + dj)];
      const Vec3 g = d_coarse.col(i * w + j) / wsum;
      for (int di = 0; di < factor; ++di) {
        for (int dj = 0; dj < factor; ++dj) {
          const int idx = (i * factor + di) * native_w + (j * factor + dj);
          d_native.col(idx) = fine.dw[idx] * g;
        }
      }
    }
  }
  return d_native;
}

void save_envmap_exr(const std::string& path, const EnvMap& env) {
  const int n = env.height * env.width;
  std::vector<float> r(n), g(n), b(n);
  for (int k = 0; k < n; ++k) {
    r[k] = static_cast<float>(env.radiance(0, k));
    g[k] = static_cast<float>(env.radiance(1, k));
    b[k] = static_cast<float>(env.radiance(2, k));
  }
  write_exr(path, env.width, env.height, {{"R", r.data()}, {"G", g.data()}, {"B", b.data()}});
}

EnvMap load_envmap_exr(const std::string& path) {
  ExrImage img = read_exr(path);
  require(img.channels.count("R") && img.channels.count("G") && img.channels.count("B"),
          "load_envmap_exr: need R,G,B channels in " + path);
  EnvMap env(img.height, img.width);
  const auto& r = img.channels.at("R");
  const auto& g = img.channels.at("G");
  const auto& b = img.channels.at("B");
  for (int k = 0; k < img.width * img.height; ++k)
    env.radiance.col(k) = Vec3(r[k], g[k], b[k]);
  return env;
}

// ---------------------------------------------------------------------------

Vec3 tone_apply(const ToneMap& t, const Vec3& c) {
  // Clamp at 0 only: HDR-safe, no upper bound before display conversion.
  return (t.A * c + t.b).cwiseMax(0.0);
}

double tone_regularizer(const ToneMap& t) {
  return (t.A - Mat3::Identity()).squaredNorm() + t.b.squaredNorm();
}

double shadow_regularizer(const VecX& shadow_samples) {
  double acc = 0.0;
  for (int i = 0; i < shadow_samples.size(); ++i) {
    const double d = shadow_samples[i] - 1.0;
    acc += d * d;
  }
  return acc;
}

ToneMapper ToneMapper::create(int code_dim, Rng& rng) {
  require(code_dim >= 1, "ToneMapper: code_dim must be positive");
  ToneMapper m;
  m.net.init({code_dim, 32, 12}, rng, nn::Act::ReLU, nn::Act::None);
  // Zero final layer + identity bias: Gamma == id at init regardless of l_t.
  m.net.layers.back().W.setZero();
  VecX b = VecX::Zero(12);
  b[0] = b[4] = b[8] = 1.0;  // diag of A
  m.net.layers.back().b = b;
  return m;
}

ToneMap tone_from_vec12(const VecX& v) {
  require(v.size() == 12, "tone_from_vec12: expected 12 values");
  ToneMap t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.A(r, c) = v[r * 3 + c];
  t.b = Vec3(v[9], v[10], v[11]);
  return t;
}

ToneMap tone_decode(const ToneMapper& mapper, const VecX& l_t) {
  return tone_decode_cached(mapper, l_t, nullptr);
}

ToneMap tone_decode_cached(const ToneMapper& mapper, const VecX& l_t, nn::MlpCache* cache) {
  require(l_t.size() == mapper.net.layers.front().W.cols(),
          "tone_decode: code dimension mismatch");
  MatX out = mapper.net.forward(l_t, cache);
  return tone_from_vec12(out.col(0));
}

VecX tone_decode_backward(ToneMapper& mapper, const nn::MlpCache& cache, const Mat3& dA,
                          const Vec3& db) {
  VecX d_out(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) d_out[r * 3 + c] = dA(r, c);
  d_out.segment<3>(9) = db;
  MatX d_in = mapper.net.backward(d_out, cache);
  return d_in.col(0);
}

// ---------------------------------------------------------------------------

EnvMap procedural_sky(const ProceduralSkyParams& p, int h, int w) {
  require(std::abs(p.sun_direction.norm() - 1.0) < 1e-6,
          "procedural_sky: sun_direction must be unit length");
  require(p.sun_direction.y() > 0, "procedural_sky: sun must be above the horizon");
  require(p.sun_intensity >= 0 && p.ambient >= 0 && p.sun_angular_radius > 0 &&
              p.zenith_color.minCoeff() >= 0 && p.horizon_color.minCoeff() >= 0,
          "procedural_sky: radiometric parameters must be non-negative");
  EnvMap env(h, w);
  const auto [sun_i, sun_j] = direction_to_texel(p.sun_direction, h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const Vec3 dir = texel_direction(i, j, h, w);
      Vec3 c = Vec3::Constant(p.ambient);
      if (dir.y() >= 0) c += p.horizon_color + (p.zenith_color - p.horizon_color) * dir.y();
      const double ang = std::acos(std::clamp(dir.dot(p.sun_direction), -1.0, 1.0));
      const bool in_disc = ang <= p.sun_angular_radius;
      // The containing texel always receives the sun so narrow suns are never
      // lost to quantization.
      if (in_disc || (i == sun_i && j == sun_j)) c += Vec3::Constant(p.sun_intensity);
      env.radiance.col(i * w + j) = c;
    }
  }
  return env;
}

ProceduralSkyParams sample_sky_params(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ProceduralSkyParams p;
  const double elev = (5.0 + 70.0 * u(rng)) * kPi / 180.0;
  const double az = 2.0 * kPi * u(rng);
  p.sun_direction =
      Vec3(std::cos(elev) * std::cos(az), std::sin(elev), std::cos(elev) * std::sin(az));
  p.sun_intensity = std::exp(std::log(5.0) + u(rng) * (std::log(60.0) - std::log(5.0)));
  p.sun_angular_radius = 0.04 + 0.10 * u(rng);
  const double warm = u(rng);  // 0 = clear blue, 1 = warm sunset
  p.zenith_color = (1.0 - warm) * Vec3(0.10, 0.20, 0.45) + warm * Vec3(0.25, 0.15, 0.20);
  p.zenith_color *= 0.5 + 1.5 * u(rng);
  p.horizon_color = (1.0 - warm) * Vec3(0.45, 0.50, 0.55) + warm * Vec3(0.80, 0.45, 0.25);
  p.horizon_color *= 0.5 + 1.5 * u(rng);
  p.ambient = 0.02 + 0.13 * u(rng);
  return p;
}

// ---------------------------------------------------------------------------

namespace {

// log radiance of an env map flattened channel-major per texel (r,g,b,r,g,b,..)
// to match the decoder output layout.
VecX flatten_log(const EnvMap& env, double eps) {
  VecX v(3 * env.height * env.width);
  for (int k = 0; k < env.height * env.width; ++k)
    for (int c = 0; c < 3; ++c) v[3 * k + c] = std::log(env.radiance(c, k) + eps);
  return v;
}

Mat3X unflatten_exp(const VecX& z, int h, int w) {
  Mat3X rad(3, h * w);
  for (int k = 0; k < h * w; ++k)
    for (int c = 0; c < 3; ++c) rad(c, k) = std::exp(std::min(z[3 * k + c], 30.0));
  return rad;
}

}  // namespace

EnvMap decode_envmap(const SkyDecoder& decoder, const VecX& l_e) {
  return decode_envmap_cached(decoder, l_e, nullptr);
}

EnvMap decode_envmap_cached(const SkyDecoder& decoder, const VecX& l_e, SkyDecodeCache* cache) {
  require(decoder.frozen, "decode_envmap: decoder must be pretrained and frozen");
  require(l_e.size() == decoder.latent_dim, "decode_envmap: code dimension mismatch");
  nn::MlpCache local;
  nn::MlpCache* mc = cache ? &cache->mlp : &local;
  MatX z = decoder.net.forward(l_e, mc);
  EnvMap native(decoder.native_h, decoder.native_w);
  native.radiance = unflatten_exp(z.col(0), decoder.native_h, decoder.native_w);
  if (cache) cache->log_native = z;
  const int factor = decoder.native_h / decoder.out_h;
  require(decoder.native_w / decoder.out_w == factor, "decode_envmap: inconsistent resolutions");
  return factor == 1 ? native : downscale_envmap(native, factor);
}

VecX decode_envmap_backward(const SkyDecoder& decoder, const SkyDecodeCache& cache,
                            const Mat3X& d_coarse) {
  const int factor = decoder.native_h / decoder.out_h;
  Mat3X d_native = factor == 1 ? d_coarse
                               : downscale_envmap_backward(decoder.native_h, decoder.native_w,
                                                           factor, d_coarse);
  // Chain through exp: d z = d radiance * radiance.
  const int n = decoder.native_h * decoder.native_w;
  VecX dz(3 * n);
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) {
      const double rad = std::exp(std::min(cache.log_native(3 * k + c, 0), 30.0));
      dz[3 * k + c] = d_native(c, k) * rad;
    }
  // Frozen decoder: only the input gradient is wanted; use a scratch copy so
  // parameter gradient buffers of the shared decoder are never touched.
  nn::Mlp scratch = decoder.net;
  scratch.zero_grad();
  MatX d_in = scratch.backward(dz, cache.mlp);
  return d_in.col(0);
}

SkyPretrainResult pretrain_sky_decoder(int n_samples, uint64_t seed,
                                       const SkyPretrainOptions& opts) {
  require(n_samples >= 20, "pretrain_sky_decoder: need at least 20 samples");
  Rng rng(seed);
  SkyDecoder dec;
  const int native_n = 3 * dec.native_h * dec.native_w;
  const int coarse_n = 3 * dec.out_h * dec.out_w;

  // Dataset: input = log coarse map, target = log native map.
  MatX inputs(coarse_n, n_samples), targets(native_n, n_samples);
  for (int s = 0; s < n_samples; ++s) {
    const ProceduralSkyParams p = sample_sky_params(rng);
    const EnvMap native = procedural_sky(p, dec.native_h, dec.native_w);
    const EnvMap coarse = downscale_envmap(native, dec.native_h / dec.out_h);
    inputs.col(s) = flatten_log(coarse, opts.log_eps);
    targets.col(s) = flatten_log(native, opts.log_eps);
  }
  const int n_hold = std::max(2, static_cast<int>(n_samples * opts.holdout_frac));
  const int n_train = n_samples - n_hold;

  SkyPretrainResult res;
  res.encoder.init({coarse_n, 256, 64, dec.latent_dim}, rng, nn::Act::ReLU, nn::Act::None);
  dec.net.init({dec.latent_dim, 64, 256, native_n}, rng, nn::Act::ReLU, nn::Act::None);

  nn::Adam adam;
  adam.add(res.encoder);
  adam.add(dec.net);
  std::uniform_int_distribution<int> pick(0, n_train - 1);
  double last_loss = 0.0;
  for (int step = 0; step < opts.steps; ++step) {
    MatX x(coarse_n, opts.batch), t(native_n, opts.batch);
    for (int b = 0; b < opts.batch; ++b) {
      const int s = pick(rng);
      x.col(b) = inputs.col(s);
      t.col(b) = targets.col(s);
    }
    nn::MlpCache ec, dc;
    MatX latent = res.encoder.forward(x, &ec);
    MatX z = dec.net.forward(latent, &dc);
    MatX diff = z - t;
    last_loss = diff.squaredNorm() / diff.size();
    MatX dz = diff * (2.0 / diff.size());
    adam.zero_grads();
    MatX dlatent = dec.net.backward(dz, dc);
    res.encoder.backward(dlatent, ec);
    adam.step(nn::cosine_lr(opts.lr, step, opts.steps));
  }
  res.final_train_loss = last_loss;

  // Held-out reconstruction quality in log-radiance space.
  double mae = 0.0;
  for (int s = n_train; s < n_samples; ++s) {
    MatX latent = res.encoder.forward(inputs.col(s), nullptr);
    MatX z = dec.net.forward(latent, nullptr);
    mae += (z.col(0) - targets.col(s)).cwiseAbs().mean();
  }
  res.heldout_log_mae = mae / n_hold;
  if (res.heldout_log_mae > opts.fail_threshold)
    fail("pretrain_sky_decoder: held-out log MAE " + std::to_string(res.heldout_log_mae) +
         " exceeds threshold " + std::to_string(opts.fail_threshold));
  dec.frozen = true;
  res.decoder = std::move(dec);
  return res;
}

VecX encode_sky(const nn::Mlp& encoder, const EnvMap& native_env, double log_eps) {
  const int factor = native_env.height / 16;
  const EnvMap coarse = factor == 1 ? native_env : downscale_envmap(native_env, factor);
  require(coarse.height == 16 && coarse.width == 32, "encode_sky: expected 32x64 or 16x32 input");
  return encoder.forward(flatten_log(coarse, log_eps), nullptr).col(0);
}

// ---------------------------------------------------------------------------

Vec3 shade_lambertian(const Vec3& albedo, double shadow, const Vec3& normal, const EnvMap& env,
                      const SolidAngleGrid& dw) {
  require(env.height == dw.height && env.width == dw.width,
          "shade_lambertian: env map and solid angle grid resolution mismatch");
  Vec3 irradiance = Vec3::Zero();
  for (int i = 0; i < env.height; ++i) {
    for (int j = 0; j < env.width; ++j) {
      const int k = i * env.width + j;
      const double cosine = texel_direction(i, j, env.height, env.width).dot(normal);
      if (cosine > 0) irradiance += env.radiance.col(k) * (cosine * dw.dw[k]);
    }
  }
  return albedo.cwiseProduct(shadow * irradiance);
}

Mat3X shade_irradiance_batch(const EnvMap& env, const SolidAngleGrid& dw, const Mat3X& dirs,
                             const Mat3X& normals) {
  require(env.height == dw.height && env.width == dw.width,
          "shade_irradiance_batch: resolution mismatch");
  require(dirs.cols() == env.radiance.cols(), "shade_irradiance_batch: dirs mismatch");
  // weights(t, n) = max(dir_t . normal_n, 0) * dw_t; E = L * weights.
  MatX weights = (dirs.transpose() * normals).cwiseMax(0.0);
  weights.array().colwise() *= dw.dw.array();
  return env.radiance * weights;
}

}  // namespace rerender
