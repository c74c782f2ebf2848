// SPDX-License-Identifier: Apache-2.0
#include "rerender/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rerender/exr.hpp"

namespace rerender {

namespace {

// Seed-stream tags so the independent draws of one step never collide.
constexpr uint64_t kTagPixels = 0xA11CE5;
constexpr uint64_t kTagDepths = 0xDE9705;
constexpr uint64_t kTagEikonal = 0xE14;
constexpr uint64_t kTagDistill = 0xD157;
constexpr int kTagEmbA = 11, kTagEmbTau = 12;

double psnr_of_mse(double mse) {
  if (mse <= 1e-12) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Uniform point in a ball: Gaussian direction, cube-root radius.
Vec3 ball_point(HashRng& rng, double radius) {
  const double u1 = std::max(rng.next_u01(), 1e-12);
  const double u2 = rng.next_u01();
  const double u3 = std::max(rng.next_u01(), 1e-12);
  const double u4 = rng.next_u01();
  Vec3 d(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2),
         std::sqrt(-2.0 * std::log(u1)) * std::sin(2.0 * kPi * u2),
         std::sqrt(-2.0 * std::log(u3)) * std::cos(2.0 * kPi * u4));
  const double n = std::max(d.norm(), 1e-12);
  const double r = radius * std::cbrt(rng.next_u01());
  return (r / n) * d;
}

// d alpha / d (sdf_a, sdf_b, log s) for alpha = max(1 - Phi(s b)/Phi(s a), 0).
// Returns the log-sharpness part; sdf grads are accumulated when wanted.
double alpha_backward(double d_alpha, double sdf_a, double sdf_b, double s, double* d_sdf_a,
                      double* d_sdf_b) {
  const double pa = sigmoid(s * sdf_a);
  const double pb = sigmoid(s * sdf_b);
  if (pa - pb <= 0.0) return 0.0;  // clamped at zero: subgradient 0
  const double d_pa = d_alpha * pb / (pa * pa);
  const double d_pb = -d_alpha / pa;
  const double da = d_pa * pa * (1.0 - pa);
  const double db = d_pb * pb * (1.0 - pb);
  if (d_sdf_a) *d_sdf_a += da * s;
  if (d_sdf_b) *d_sdf_b += db * s;
  return (da * sdf_a + db * sdf_b) * s;
}

}  // namespace

void TrainConfig::validate() const {
  require(steps >= 1, "TrainConfig: steps must be positive");
  require(rays_per_batch >= 1, "TrainConfig: rays_per_batch must be positive");
  require(n_coarse >= 2, "TrainConfig: n_coarse must be at least 2");
  require(n_fine >= 0, "TrainConfig: n_fine must be non-negative");
  require(lr > 0.0 && lr_codes > 0.0, "TrainConfig: learning rates must be positive");
  require(bound_radius > 0.0, "TrainConfig: bound_radius must be positive");
  require(fd_eps > 0.0, "TrainConfig: fd_eps must be positive");
  require(beta_min > 0.0, "TrainConfig: beta_min must be positive");
  require(eikonal_samples >= 1, "TrainConfig: eikonal_samples must be positive");
  require(eikonal_radius > 0.0, "TrainConfig: eikonal_radius must be positive");
  require(prune_threshold >= 0.0, "TrainConfig: prune_threshold must be non-negative");
  require(checksum_every >= 1, "TrainConfig: checksum_every must be positive");
  require(lambda_c >= 0.0 && lambda_m >= 0.0 && lambda_re >= 0.0 && lambda_u >= 0.0 &&
              lambda_cr >= 0.0 && lambda_rs >= 0.0 && lambda_rt >= 0.0,
          "TrainConfig: loss weights must be non-negative");
}

// ---------------------------------------------------------------------------
// Stage-1 model

Stage1Model Stage1Model::create(SceneModel& scene, uint64_t seed) {
  Stage1Model m;
  m.scene = &scene;
  m.seed = seed;
  Rng rng(hash_combine(seed, 0x57a6e1));
  const int dp = scene.pos_enc.out_dim();
  const int dv = scene.dir_enc.out_dim();
  m.radiance.init({dp + dv + m.dim_emb_a, 128, 128, 128, 3}, rng, nn::Act::Softplus,
                  nn::Act::Softplus);
  m.transient.init({dp + m.dim_emb_tau, 64, 64, 64, 5}, rng, nn::Act::Softplus, nn::Act::None);
  m.sky_head.init({dv + m.dim_emb_a, 64, 64, 3}, rng, nn::Act::Softplus, nn::Act::Softplus);
  return m;
}

VecX& Stage1Model::emb_a_for(const std::string& frame_id) {
  auto it = emb_a.find(frame_id);
  if (it != emb_a.end()) return it->second;
  return emb_a.emplace(frame_id, hashed_gaussian(dim_emb_a, 0.01, seed, frame_id, kTagEmbA))
      .first->second;
}

VecX& Stage1Model::emb_tau_for(const std::string& frame_id) {
  auto it = emb_tau.find(frame_id);
  if (it != emb_tau.end()) return it->second;
  return emb_tau.emplace(frame_id, hashed_gaussian(dim_emb_tau, 0.01, seed, frame_id, kTagEmbTau))
      .first->second;
}

// ---------------------------------------------------------------------------
// Loss building blocks

double sky_mask_loss(const VecX& opacities, const VecX& mask_values) {
  require(opacities.size() == mask_values.size() && opacities.size() > 0,
          "sky_mask_loss: size mismatch or empty input");
  const double eps = 1e-6;
  double total = 0.0;
  for (int i = 0; i < opacities.size(); ++i) {
    const double o = std::clamp(opacities[i], eps, 1.0 - eps);
    const double m = mask_values[i];
    total += -(m * std::log(o) + (1.0 - m) * std::log(1.0 - o));
  }
  return total / static_cast<double>(opacities.size());
}

double eikonal_loss(const std::function<Vec3(const Vec3&)>& grad_fn, int n_points, uint64_t seed,
                    double radius) {
  require(n_points >= 1, "eikonal_loss: n_points must be positive");
  HashRng rng(seed, kTagEikonal);
  double total = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const Vec3 p = ball_point(rng, radius);
    const double dev = grad_fn(p).norm() - 1.0;
    total += dev * dev;
  }
  return total / static_cast<double>(n_points);
}

double eikonal_loss(const SceneModel& model, int n_points, uint64_t seed, double radius) {
  require(n_points >= 1, "eikonal_loss: n_points must be positive");
  HashRng rng(seed, kTagEikonal);
  Mat3X pts(3, n_points);
  for (int i = 0; i < n_points; ++i) pts.col(i) = ball_point(rng, radius);
  const GeometryEval g = eval_geometry_batch(model, pts, /*want_grad=*/true);
  double total = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double dev = g.grad.col(i).norm() - 1.0;
    total += dev * dev;
  }
  return total / static_cast<double>(n_points);
}

double stage1_photometric_loss(const std::vector<Stage1PixelPred>& preds,
                               const std::vector<Vec3>& targets, double lambda_u) {
  require(preds.size() == targets.size() && !preds.empty(),
          "stage1_photometric_loss: size mismatch or empty input");
  double total = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const Stage1PixelPred& p = preds[i];
    require(p.beta > 0.0, "stage1_photometric_loss: beta must be positive");
    const double r2 = (targets[i] - p.color).squaredNorm();
    total += r2 / (2.0 * p.beta * p.beta) + 0.5 * std::log(p.beta) +
             lambda_u * p.transient_density_mean;
  }
  return total / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// FactoredBatch: stage-2 forward + exact reverse pass

void FactoredBatch::forward(const SceneModel& model, const SkyDecoder& decoder,
                            const std::vector<Ray>& rays, const std::vector<VecX>& depths,
                            const FrameCodes& codes, double prune_threshold,
                            const Stage2Options& opts) {
  require(!rays.empty(), "FactoredBatch: empty ray batch");
  require(rays.size() == depths.size(), "FactoredBatch: rays/depths size mismatch");
  require(decoder.frozen, "FactoredBatch: sky decoder must be frozen");
  decoder_ = &decoder;
  opts_ = opts;
  rays_ = rays;
  depths_ = depths;
  codes_ = codes;
  const int nr = static_cast<int>(rays.size());

  sample_base_.assign(nr + 1, 0);
  for (int i = 0; i < nr; ++i) {
    const auto n = depths[i].size();
    require(n == 0 || n >= 2, "FactoredBatch: a ray needs 0 or >= 2 depth samples");
    for (Eigen::Index k = 0; k + 1 < n; ++k)
      require(depths[i][k] < depths[i][k + 1], "FactoredBatch: depths must be increasing");
    sample_base_[i + 1] = sample_base_[i] + static_cast<int>(n);
  }
  const int total = sample_base_[nr];

  Mat3X xs(3, total);
  for (int i = 0; i < nr; ++i)
    for (int k = 0; k < depths[i].size(); ++k)
      xs.col(sample_base_[i] + k) = rays[i].origin + depths[i][k] * rays[i].dir;
  geo_ = eval_geometry_batch(model, xs, /*want_grad=*/true);

  const double s = model.sharpness();
  alphas.assign(nr, VecX());
  weights.assign(nr, VecX());
  residuals.assign(nr, 1.0);
  active_.assign(nr, {});
  active_ray_.clear();
  active_k_.clear();
  for (int i = 0; i < nr; ++i) {
    const int ns = static_cast<int>(depths[i].size());
    if (ns == 0) continue;
    alphas[i] = alphas_from_sdf(geo_.sdf.segment(sample_base_[i], ns), s);
    const int K = ns - 1;
    weights[i].resize(K);
    double T = 1.0;
    for (int k = 0; k < K; ++k) {
      weights[i][k] = T * alphas[i][k];
      T *= 1.0 - alphas[i][k];
      if (weights[i][k] >= prune_threshold && weights[i][k] > 0.0) {
        active_[i].push_back(k);
        active_ray_.push_back(i);
        active_k_.push_back(k);
      }
    }
    residuals[i] = T;
  }
  active_samples = static_cast<int>(active_ray_.size());

  env = decode_envmap_cached(decoder, codes.l_e, &env_cache_);
  tone = opts.use_tone ? tone_decode_cached(model.tone, codes.l_t, &tone_cache_) : ToneMap{};

  Mat3X dirs(3, nr);
  for (int i = 0; i < nr; ++i) dirs.col(i) = rays[i].dir;
  sky_rgb = eval_sky_batch(model, dirs, codes.l_e, &sky_cache_);

  const int M = active_samples;
  texdirs_ = texel_directions(env.height, env.width);
  dw_ = solid_angles(env.height, env.width);
  shadow_values = VecX::Ones(M);
  if (M > 0) {
    MatX enc_a(geo_.enc.rows(), M);
    MatX feat_a(geo_.feature.rows(), M);
    normals_active_.resize(3, M);
    for (int m = 0; m < M; ++m) {
      const int col = sample_base_[active_ray_[m]] + active_k_[m];
      enc_a.col(m) = geo_.enc.col(col);
      feat_a.col(m) = geo_.feature.col(col);
      const Vec3 g = geo_.grad.col(col);
      normals_active_.col(m) = g / std::max(g.norm(), 1e-12);
    }
    albedo_active_ = eval_albedo_batch(model, enc_a, feat_a, &app_cache_);
    if (opts.use_shadow)
      shadow_values = eval_shadow_batch(model, enc_a, codes.l_s, &shd_cache_);
    texw_active_ = (texdirs_.transpose() * normals_active_).cwiseMax(0.0);
    texw_active_.array().colwise() *= dw_.dw.array();
    irr_active_ = env.radiance * texw_active_;
    cb_active_ = albedo_active_.cwiseProduct(irr_active_);
    cb_active_.array().rowwise() *= shadow_values.transpose().array();
    gamma_pre_ = (tone.A * cb_active_).colwise() + tone.b;
  } else {
    gamma_pre_.resize(3, 0);
  }

  colors.resize(3, nr);
  for (int i = 0; i < nr; ++i) colors.col(i) = residuals[i] * sky_rgb.col(i);
  for (int m = 0; m < M; ++m) {
    const int i = active_ray_[m];
    colors.col(i) += weights[i][active_k_[m]] * gamma_pre_.col(m).cwiseMax(0.0);
  }
}

CodeGrads FactoredBatch::backward(SceneModel& model, const Mat3X& d_colors, const VecX& d_shadow,
                                  const Mat3& dA_extra, const Vec3& db_extra) {
  const int nr = static_cast<int>(rays_.size());
  require(d_colors.cols() == nr, "FactoredBatch::backward: d_colors size mismatch");
  const int M = active_samples;
  require(d_shadow.size() == 0 || d_shadow.size() == M,
          "FactoredBatch::backward: d_shadow size mismatch");
  CodeGrads cg;
  cg.l_e = VecX::Zero(model.cfg.dim_le);
  cg.l_s = VecX::Zero(model.cfg.dim_ls);
  cg.l_t = VecX::Zero(model.cfg.dim_lt);

  // Per-active gamma (clamped) gradient and the alpha/sharpness chain.
  Mat3X d_gamma = Mat3X::Zero(3, std::max(M, 1));
  Mat3X d_sky_cols(3, nr);
  const double s = model.sharpness();
  double d_log_s = 0.0;
  std::vector<int> active_pos(nr, 0);  // running cursor into the flat active list
  int cursor = 0;
  for (int i = 0; i < nr; ++i) {
    active_pos[i] = cursor;
    cursor += static_cast<int>(active_[i].size());
  }
  for (int i = 0; i < nr; ++i) {
    const Vec3 dC = d_colors.col(i);
    d_sky_cols.col(i) = residuals[i] * dC;
    const int ns = static_cast<int>(depths_[i].size());
    if (ns == 0) continue;
    const int K = ns - 1;
    // Direct gamma terms.
    for (size_t a = 0; a < active_[i].size(); ++a) {
      const int m = active_pos[i] + static_cast<int>(a);
      d_gamma.col(m) += weights[i][active_[i][a]] * dC;
    }
    // Transmittance chain, iterated back to front. gam is zero for pruned
    // intervals: they still carry the chain but add no direct color.
    VecX Tarr(K + 1);
    Tarr[0] = 1.0;
    for (int k = 0; k < K; ++k) Tarr[k + 1] = Tarr[k] * (1.0 - alphas[i][k]);
    double G = dC.dot(sky_rgb.col(i));
    int a_idx = static_cast<int>(active_[i].size()) - 1;
    for (int k = K - 1; k >= 0; --k) {
      Vec3 gam = Vec3::Zero();
      if (a_idx >= 0 && active_[i][a_idx] == k) {
        gam = gamma_pre_.col(active_pos[i] + a_idx).cwiseMax(0.0);
        --a_idx;
      }
      const double d_alpha = Tarr[k] * dC.dot(gam) - G * Tarr[k];
      G = dC.dot(alphas[i][k] * gam) + G * (1.0 - alphas[i][k]);
      const int base = sample_base_[i];
      d_log_s += alpha_backward(d_alpha, geo_.sdf[base + k], geo_.sdf[base + k + 1], s, nullptr,
                                nullptr);
    }
  }
  model.g_log_sharpness += d_log_s;

  // Sky MLP: bottom rows of the input are l_e.
  {
    const MatX d_in = model.sky.backward(d_sky_cols, sky_cache_);
    cg.l_e += d_in.bottomRows(model.cfg.dim_le).rowwise().sum();
  }

  Mat3 dA = dA_extra;
  Vec3 db = db_extra;
  if (M > 0) {
    // Tone clamp gates the gradient where the preactivation went negative.
    Mat3X d_gpre = d_gamma.leftCols(M);
    for (int m = 0; m < M; ++m)
      for (int c = 0; c < 3; ++c)
        if (gamma_pre_(c, m) <= 0.0) d_gpre(c, m) = 0.0;
    Mat3X d_cb;
    if (opts_.use_tone) {
      dA += d_gpre * cb_active_.transpose();
      db += d_gpre.rowwise().sum();
      d_cb = tone.A.transpose() * d_gpre;
    } else {
      d_cb = d_gpre;
    }
    // cb = albedo * (shadow * irradiance), elementwise per column.
    Mat3X se = irr_active_;
    se.array().rowwise() *= shadow_values.transpose().array();
    const Mat3X d_albedo = d_cb.cwiseProduct(se);
    const Mat3X ai = albedo_active_.cwiseProduct(irr_active_);
    VecX d_shd = (d_cb.cwiseProduct(ai)).colwise().sum().transpose();
    Mat3X d_irr = d_cb.cwiseProduct(albedo_active_);
    d_irr.array().rowwise() *= shadow_values.transpose().array();

    model.appearance.backward(d_albedo, app_cache_);
    if (opts_.use_shadow) {
      if (d_shadow.size() == M) d_shd += d_shadow;
      const MatX d_in = model.shadow.backward(d_shd.transpose(), shd_cache_);
      cg.l_s += d_in.bottomRows(model.cfg.dim_ls).rowwise().sum();
    }
    const Mat3X d_env = d_irr * texw_active_.transpose();
    cg.l_e += decode_envmap_backward(*decoder_, env_cache_, d_env);
  }
  if (opts_.use_tone) cg.l_t += tone_decode_backward(model.tone, tone_cache_, dA, db);
  return cg;
}

// ---------------------------------------------------------------------------
// Stage 1: geometry + radiance + transient + sky head on the raw photos

namespace {

struct StepLog {
  std::ofstream out;

  void open(const std::string& path) {
    if (path.empty()) return;
    out.open(path, std::ios::trunc);
    require(out.good(), "train: cannot open log file '" + path + "'");
  }
  void line(const std::string& s) {
    if (out.is_open()) out << s << "\n";
  }
};

[[noreturn]] void abort_training(const std::string& who, const std::string& log_path, int step,
                                 const std::string& detail) {
  if (!log_path.empty()) {
    std::ofstream dump(log_path + ".abort.json", std::ios::trunc);
    dump << "{\"stage\":\"" << who << "\",\"step\":" << step << ",\"detail\":\"" << detail
         << "\"}\n";
  }
  fail(who + ": non-finite loss at step " + std::to_string(step) + " (" + detail + ")");
}

}  // namespace

TrainReport train_geometry(Stage1Model& model, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  require(model.scene != nullptr, "train_geometry: model has no scene");
  SceneModel& scene = *model.scene;
  const std::vector<int> train_idx = dataset.train_indices();
  require(static_cast<int>(train_idx.size()) >= 10,
          "train_geometry: needs at least 10 training views, got " +
              std::to_string(train_idx.size()));

  MatX ls_p(1, 1), ls_g(1, 1);
  ls_p(0, 0) = scene.log_sharpness;
  ls_g.setZero();
  nn::Adam adam;
  adam.add(scene.geometry);
  adam.add(model.radiance);
  adam.add(model.transient);
  adam.add(model.sky_head);
  adam.add(&ls_p, &ls_g);
  std::map<std::string, nn::Adam> emb_opt;
  std::map<std::string, VecX> g_emb_a, g_emb_tau;

  StepLog log;
  log.open(cfg.log_path);

  const int ns = cfg.n_coarse + cfg.n_fine;
  const int ni = ns - 1;
  const int dp = scene.pos_enc.out_dim();
  const int dv = scene.dir_enc.out_dim();
  const int B = cfg.rays_per_batch;
  const double s_floor = 1e-12;
  TrainReport report;

  for (int step = 0; step < cfg.steps; ++step) {
    const Frame& frame = dataset.frames[train_idx[step % train_idx.size()]];
    VecX& ea = model.emb_a_for(frame.id);
    VecX& et = model.emb_tau_for(frame.id);
    if (!emb_opt.count(frame.id)) {
      g_emb_a[frame.id] = VecX::Zero(model.dim_emb_a);
      g_emb_tau[frame.id] = VecX::Zero(model.dim_emb_tau);
      nn::Adam& opt = emb_opt[frame.id];
      opt.add(&ea, &g_emb_a[frame.id]);
      opt.add(&et, &g_emb_tau[frame.id]);
    }
    scene.geometry.zero_grad();
    model.radiance.zero_grad();
    model.transient.zero_grad();
    model.sky_head.zero_grad();
    ls_g.setZero();
    g_emb_a[frame.id].setZero();
    g_emb_tau[frame.id].setZero();

    // Rays for this step: deterministic per (seed, step).
    HashRng pix_rng(hash_combine(cfg.seed, kTagPixels), step);
    std::vector<int> pix(B);
    const uint64_t n_pixels = static_cast<uint64_t>(frame.cam.width) * frame.cam.height;
    for (int i = 0; i < B; ++i) pix[i] = static_cast<int>(pix_rng.next_u64() % n_pixels);
    const std::vector<Ray> rays = generate_rays(frame.cam, pix);

    std::vector<VecX> depths(B);
    std::vector<int> base(B + 1, 0), ibase(B + 1, 0);
    for (int i = 0; i < B; ++i) {
      if (auto range = ray_sphere_range(rays[i], cfg.bound_radius)) {
        HashRng dr(hash_combine(hash_combine(cfg.seed, kTagDepths), step), i);
        depths[i] =
            sample_points(rays[i], range->first, range->second, cfg.n_coarse, cfg.n_fine, scene, dr)
                .depths;
      }
      base[i + 1] = base[i] + static_cast<int>(depths[i].size());
      ibase[i + 1] = ibase[i] + std::max(static_cast<int>(depths[i].size()) - 1, 0);
    }
    const int S = base[B], I = ibase[B];

    Mat3X xs(3, S);
    for (int i = 0; i < B; ++i)
      for (int k = 0; k < depths[i].size(); ++k)
        xs.col(base[i] + k) = rays[i].origin + depths[i][k] * rays[i].dir;
    GeometryEval geo = eval_geometry_batch(scene, xs, /*want_grad=*/false);

    MatX venc(dv, B);
    for (int i = 0; i < B; ++i) venc.col(i) = positional_encode(rays[i].dir, scene.dir_enc);

    MatX rad_in(dp + dv + model.dim_emb_a, I);
    MatX tr_in(dp + model.dim_emb_tau, I);
    MatX sky_in(dv + model.dim_emb_a, B);
    for (int i = 0; i < B; ++i) {
      sky_in.col(i) << venc.col(i), ea;
      const int K = ibase[i + 1] - ibase[i];
      for (int k = 0; k < K; ++k) {
        rad_in.col(ibase[i] + k) << geo.enc.col(base[i] + k), venc.col(i), ea;
        tr_in.col(ibase[i] + k) << geo.enc.col(base[i] + k), et;
      }
    }
    nn::MlpCache rad_c, tr_c, skyh_c;
    const MatX cs_all = model.radiance.forward(rad_in, &rad_c);  // softplus rgb
    const MatX tr_raw = model.transient.forward(tr_in, &tr_c);   // raw 5
    const MatX sky_all = model.sky_head.forward(sky_in, &skyh_c);

    // Per-ray composite + hand-derived reverse pass.
    VecX d_sdf = VecX::Zero(S);
    MatX d_rad = MatX::Zero(3, I);
    MatX d_traw = MatX::Zero(5, I);
    MatX d_skyh = MatX::Zero(3, B);
    double d_log_s = 0.0;
    const double sharp = scene.sharpness();
    const double bce_eps = 1e-6;

    std::vector<Stage1PixelPred> preds(B);
    std::vector<Vec3> targets(B);
    VecX opac(B), mask_v(B);
    for (int i = 0; i < B; ++i) {
      const int px = pix[i] % frame.cam.width, py = pix[i] / frame.cam.width;
      targets[i] = frame.image.rgb(px, py);
      mask_v[i] = frame.mask_sky.at(px, py, 0);
    }

    for (int i = 0; i < B; ++i) {
      const int K = ibase[i + 1] - ibase[i];
      const Vec3 sky = sky_all.col(i);
      if (K == 0) {
        preds[i] = {sky, cfg.beta_min, 0.0};
        opac[i] = 0.0;
        continue;
      }
      const VecX alpha_s = alphas_from_sdf(geo.sdf.segment(base[i], K + 1), sharp);
      VecX sig(K), beta_k(K), alpha_t(K), delta(K);
      Mat3X ct(3, K);
      for (int k = 0; k < K; ++k) {
        const int m = ibase[i] + k;
        sig[k] = softplus(tr_raw(0, m));
        for (int c = 0; c < 3; ++c) ct(c, k) = softplus(tr_raw(1 + c, m));
        beta_k[k] = softplus(tr_raw(4, m));
        delta[k] = depths[i][k + 1] - depths[i][k];
        alpha_t[k] = 1.0 - std::exp(-sig[k] * delta[k]);
      }
      VecX Tc(K + 1), Ss(K + 1);
      Tc[0] = Ss[0] = 1.0;
      Vec3 chat = Vec3::Zero();
      double beta_pix = cfg.beta_min, opacity = 0.0;
      for (int k = 0; k < K; ++k) {
        chat += Tc[k] * (alpha_s[k] * cs_all.col(ibase[i] + k) + alpha_t[k] * ct.col(k));
        beta_pix += Tc[k] * alpha_t[k] * beta_k[k];
        opacity += Ss[k] * alpha_s[k];
        Tc[k + 1] = Tc[k] * (1.0 - alpha_s[k]) * (1.0 - alpha_t[k]);
        Ss[k + 1] = Ss[k] * (1.0 - alpha_s[k]);
      }
      chat += Tc[K] * sky;
      preds[i] = {chat, beta_pix, sig.mean()};
      opac[i] = opacity;

      // Loss partials for this ray.
      const Vec3 resid = chat - targets[i];
      const Vec3 dC = (cfg.lambda_c / B) * resid / (beta_pix * beta_pix);
      const double d_beta = (cfg.lambda_c / B) * (-resid.squaredNorm() / std::pow(beta_pix, 3) +
                                                  0.5 / beta_pix);
      double dO = 0.0;
      if (opacity > bce_eps && opacity < 1.0 - bce_eps)
        dO = (cfg.lambda_m / B) * (-mask_v[i] / opacity + (1.0 - mask_v[i]) / (1.0 - opacity));
      const double d_sig_u = (cfg.lambda_c / B) * cfg.lambda_u / K;

      double G = dC.dot(sky);
      double msuf = 0.0;
      for (int k = K - 1; k >= 0; --k) {
        const int m = ibase[i] + k;
        const Vec3 cs = cs_all.col(m);
        d_rad.col(m) += Tc[k] * alpha_s[k] * dC;
        const Vec3 d_ct = Tc[k] * alpha_t[k] * dC;
        for (int c = 0; c < 3; ++c) d_traw(1 + c, m) += d_ct[c] * sigmoid(tr_raw(1 + c, m));
        d_traw(4, m) += d_beta * Tc[k] * alpha_t[k] * sigmoid(tr_raw(4, m));
        double d_alpha_s = Tc[k] * dC.dot(cs) - G * Tc[k] * (1.0 - alpha_t[k]);
        const double d_alpha_t =
            Tc[k] * dC.dot(ct.col(k)) + d_beta * Tc[k] * beta_k[k] - G * Tc[k] * (1.0 - alpha_s[k]);
        G = dC.dot(alpha_s[k] * cs + alpha_t[k] * ct.col(k)) + d_beta * alpha_t[k] * beta_k[k] +
            G * (1.0 - alpha_s[k]) * (1.0 - alpha_t[k]);
        d_alpha_s += dO * (Ss[k] - msuf / (1.0 - alpha_s[k]));
        msuf += alpha_s[k] * Ss[k];
        const double d_sig =
            d_alpha_t * delta[k] * std::exp(-sig[k] * delta[k]) + d_sig_u;
        d_traw(0, m) += d_sig * sigmoid(tr_raw(0, m));
        d_log_s += alpha_backward(d_alpha_s, geo.sdf[base[i] + k], geo.sdf[base[i] + k + 1], sharp,
                                  &d_sdf[base[i] + k], &d_sdf[base[i] + k + 1]);
      }
      d_skyh.col(i) += Tc[K] * dC;
    }
    // Sky-only rays: photometric gradient straight into the sky head.
    for (int i = 0; i < B; ++i) {
      if (ibase[i + 1] - ibase[i] > 0) continue;
      d_skyh.col(i) +=
          (cfg.lambda_c / B) * (preds[i].color - targets[i]) / (cfg.beta_min * cfg.beta_min);
    }

    const double l_photo = stage1_photometric_loss(preds, targets, cfg.lambda_u);
    const double l_mask = sky_mask_loss(opac, mask_v);

    if (I > 0) {
      const MatX d_in_rad = model.radiance.backward(d_rad, rad_c);
      g_emb_a[frame.id] += d_in_rad.bottomRows(model.dim_emb_a).rowwise().sum();
      const MatX d_in_tr = model.transient.backward(d_traw, tr_c);
      g_emb_tau[frame.id] += d_in_tr.bottomRows(model.dim_emb_tau).rowwise().sum();
    }
    const MatX d_in_sky = model.sky_head.backward(d_skyh, skyh_c);
    g_emb_a[frame.id] += d_in_sky.bottomRows(model.dim_emb_a).rowwise().sum();
    if (S > 0) {
      MatX dY_geo = MatX::Zero(1 + scene.cfg.feature_dim, S);
      dY_geo.row(0) = d_sdf.transpose();
      scene.geometry.backward(dY_geo, geo.cache);
    }

    // Eikonal term on a fresh uniform batch, via the same first-order stencil
    // the loss reports.
    double l_eik = 0.0;
    {
      const int n = cfg.eikonal_samples;
      const double eps = cfg.fd_eps;
      HashRng erng(hash_combine(cfg.seed, kTagEikonal), step);
      Mat3X stencil(3, 6 * n);
      for (int j = 0; j < n; ++j) {
        const Vec3 p = ball_point(erng, cfg.eikonal_radius);
        for (int c = 0; c < 3; ++c) {
          Vec3 e = Vec3::Zero();
          e[c] = eps;
          stencil.col(j * 6 + 2 * c) = p + e;
          stencil.col(j * 6 + 2 * c + 1) = p - e;
        }
      }
      GeometryEval ge = eval_geometry_batch(scene, stencil, /*want_grad=*/false);
      VecX d_sdf_st = VecX::Zero(6 * n);
      for (int j = 0; j < n; ++j) {
        Vec3 g;
        for (int c = 0; c < 3; ++c)
          g[c] = (ge.sdf[j * 6 + 2 * c] - ge.sdf[j * 6 + 2 * c + 1]) / (2.0 * eps);
        const double nrm = g.norm();
        const double dev = nrm - 1.0;
        l_eik += dev * dev / n;
        if (nrm > s_floor) {
          const Vec3 dg = (cfg.lambda_re * 2.0 * dev / (n * nrm)) * g;
          for (int c = 0; c < 3; ++c) {
            d_sdf_st[j * 6 + 2 * c] += dg[c] / (2.0 * eps);
            d_sdf_st[j * 6 + 2 * c + 1] -= dg[c] / (2.0 * eps);
          }
        }
      }
      MatX dY_geo = MatX::Zero(1 + scene.cfg.feature_dim, 6 * n);
      dY_geo.row(0) = d_sdf_st.transpose();
      scene.geometry.backward(dY_geo, ge.cache);
    }

    const double total =
        cfg.lambda_c * l_photo + cfg.lambda_m * l_mask + cfg.lambda_re * l_eik;
    if (!std::isfinite(total))
      abort_training("train_geometry", cfg.log_path, step,
                     "photo=" + fmt_double(l_photo) + " mask=" + fmt_double(l_mask) +
                         " eik=" + fmt_double(l_eik));

    adam.step(nn::cosine_lr(cfg.lr, step, cfg.steps));
    scene.log_sharpness = ls_p(0, 0);
    emb_opt[frame.id].step(nn::cosine_lr(cfg.lr_codes, step, cfg.steps));

    double mse = 0.0;
    for (int i = 0; i < B; ++i) {
      const Vec3 a = preds[i].color.cwiseMax(0.0).cwiseMin(1.0);
      const Vec3 b = targets[i].cwiseMax(0.0).cwiseMin(1.0);
      mse += (a - b).squaredNorm() / (3.0 * B);
    }
    report = {total, psnr_of_mse(mse), step + 1};
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
      log.line("{\"step\":" + std::to_string(step) + ",\"frame\":\"" + frame.id +
               "\",\"loss\":" + fmt_double(total) + ",\"photo\":" + fmt_double(l_photo) +
               ",\"mask\":" + fmt_double(l_mask) + ",\"eik\":" + fmt_double(l_eik) +
               ",\"psnr\":" + fmt_double(report.final_psnr_batch) + "}");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Distillation

DistillResult distill_occlusion_free(const Stage1Model& model, const Dataset& dataset,
                                     const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  require(model.scene != nullptr, "distill_occlusion_free: model has no scene");
  const SceneModel& scene = *model.scene;
  std::filesystem::create_directories(out_dir);
  DistillResult res;
  res.dir = out_dir;

  const int ns = cfg.n_coarse + cfg.n_fine;
  const int dp = scene.pos_enc.out_dim();
  const int dv = scene.dir_enc.out_dim();
  const std::vector<int> train_idx = dataset.train_indices();
  for (int fi : train_idx) {
    const Frame& frame = dataset.frames[fi];
    auto it = model.emb_a.find(frame.id);
    require(it != model.emb_a.end(),
            "distill_occlusion_free: missing appearance embedding for frame '" + frame.id + "'");
    const VecX& ea = it->second;
    const int w = frame.cam.width, h = frame.cam.height;
    Image out(w, h, 3);

#pragma omp parallel for schedule(dynamic, 1)
    for (int py = 0; py < h; ++py) {
      // Row batch: gather samples for rays that cross the bound.
      std::vector<int> cols(w, -1);
      std::vector<VecX> dvec(w);
      std::vector<Ray> rrow(w);
      int n_hit = 0;
      for (int px = 0; px < w; ++px) {
        rrow[px] = ray_through_pixel(frame.cam, px, py);
        if (auto range = ray_sphere_range(rrow[px], cfg.bound_radius)) {
          HashRng dr(hash_combine(hash_combine(cfg.seed, kTagDistill), static_cast<uint64_t>(fi)),
                     static_cast<uint64_t>(py) * w + px);
          dvec[px] = sample_points(rrow[px], range->first, range->second, cfg.n_coarse, cfg.n_fine,
                                   scene, dr)
                         .depths;
          cols[px] = n_hit++;
        }
      }
      if (n_hit == 0) {
        for (int px = 0; px < w; ++px) out.set_rgb(px, py, frame.image.rgb(px, py));
        continue;
      }
      Mat3X xs(3, n_hit * ns);
      MatX rad_in(dp + dv + model.dim_emb_a, n_hit * (ns - 1));
      for (int px = 0; px < w; ++px) {
        if (cols[px] < 0) continue;
        for (int k = 0; k < ns; ++k)
          xs.col(cols[px] * ns + k) = rrow[px].origin + dvec[px][k] * rrow[px].dir;
      }
      const GeometryEval geo = eval_geometry_batch(scene, xs, /*want_grad=*/false);
      for (int px = 0; px < w; ++px) {
        if (cols[px] < 0) continue;
        const VecX ve = positional_encode(rrow[px].dir, scene.dir_enc);
        for (int k = 0; k + 1 < ns; ++k)
          rad_in.col(cols[px] * (ns - 1) + k) << geo.enc.col(cols[px] * ns + k), ve, ea;
      }
      const MatX cs = model.radiance.forward(rad_in, nullptr);
      for (int px = 0; px < w; ++px) {
        if (cols[px] < 0) {
          out.set_rgb(px, py, frame.image.rgb(px, py));
          continue;
        }
        const VecX alpha =
            alphas_from_sdf(geo.sdf.segment(cols[px] * ns, ns), scene.sharpness());
        Vec3 c = Vec3::Zero();
        double T = 1.0;
        for (int k = 0; k + 1 < ns; ++k) {
          c += T * alpha[k] * Vec3(cs.col(cols[px] * (ns - 1) + k));
          T *= 1.0 - alpha[k];
        }
        c += T * frame.image.rgb(px, py);  // photo fills whatever the static field leaves
        out.set_rgb(px, py, c);
      }
    }
    save_exr_image(out_dir + "/" + frame.id + ".exr", out);
    res.frame_ids.push_back(frame.id);
  }
  return res;
}

std::map<std::string, Image> load_distilled(const DistillResult& distilled) {
  std::map<std::string, Image> out;
  for (const std::string& id : distilled.frame_ids)
    out[id] = load_exr_image(distilled.dir + "/" + id + ".exr");
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: factorized re-rendering against distilled targets

TrainReport train_rerender(SceneModel& model, const SkyDecoder& decoder,
                           const std::map<std::string, Image>& distilled, const Dataset& dataset,
                           const TrainConfig& cfg, const Stage2Options& opts) {
  cfg.validate();
  require(decoder.frozen, "train_rerender: sky decoder must be frozen");
  const std::vector<int> train_idx = dataset.train_indices();
  require(static_cast<int>(train_idx.size()) >= 10,
          "train_rerender: needs at least 10 training views, got " +
              std::to_string(train_idx.size()));
  for (int fi : train_idx) {
    const Frame& frame = dataset.frames[fi];
    auto it = distilled.find(frame.id);
    require(it != distilled.end(),
            "train_rerender: missing distilled image for frame '" + frame.id + "'");
    require(it->second.width == frame.cam.width && it->second.height == frame.cam.height,
            "train_rerender: distilled image resolution mismatch for frame '" + frame.id + "'");
  }
  const uint64_t geo_sum = model.geometry_checksum();

  MatX ls_p(1, 1), ls_g(1, 1);
  ls_p(0, 0) = model.log_sharpness;
  ls_g.setZero();
  nn::Adam adam;
  adam.add(model.appearance);
  if (opts.use_shadow) adam.add(model.shadow);
  adam.add(model.sky);
  if (opts.use_tone) adam.add(model.tone.net);
  adam.add(&ls_p, &ls_g);
  std::map<std::string, nn::Adam> code_opt;
  std::map<std::string, CodeGrads> code_grads;

  StepLog log;
  log.open(cfg.log_path);
  const int B = cfg.rays_per_batch;
  TrainReport report;

  for (int step = 0; step < cfg.steps; ++step) {
    const Frame& frame = dataset.frames[train_idx[step % train_idx.size()]];
    const Image& target_img = distilled.at(frame.id);
    FrameCodes& codes = model.codes_for(frame.id);
    if (!code_opt.count(frame.id)) {
      CodeGrads& g = code_grads[frame.id];
      g.l_e = VecX::Zero(model.cfg.dim_le);
      g.l_s = VecX::Zero(model.cfg.dim_ls);
      g.l_t = VecX::Zero(model.cfg.dim_lt);
      nn::Adam& opt = code_opt[frame.id];
      opt.add(&codes.l_e, &g.l_e);
      opt.add(&codes.l_s, &g.l_s);
      opt.add(&codes.l_t, &g.l_t);
    }
    model.appearance.zero_grad();
    model.shadow.zero_grad();
    model.sky.zero_grad();
    model.tone.net.zero_grad();
    model.g_log_sharpness = 0.0;
    ls_g.setZero();
    CodeGrads& cgrad = code_grads[frame.id];

    HashRng pix_rng(hash_combine(cfg.seed, kTagPixels ^ 0x2), step);
    std::vector<int> pix(B);
    const uint64_t n_pixels = static_cast<uint64_t>(frame.cam.width) * frame.cam.height;
    for (int i = 0; i < B; ++i) pix[i] = static_cast<int>(pix_rng.next_u64() % n_pixels);
    const std::vector<Ray> rays = generate_rays(frame.cam, pix);
    std::vector<VecX> depths(B);
    Mat3X targets(3, B);
    for (int i = 0; i < B; ++i) {
      if (auto range = ray_sphere_range(rays[i], cfg.bound_radius)) {
        HashRng dr(hash_combine(hash_combine(cfg.seed, kTagDepths ^ 0x2), step), i);
        depths[i] =
            sample_points(rays[i], range->first, range->second, cfg.n_coarse, cfg.n_fine, model, dr)
                .depths;
      }
      targets.col(i) = target_img.rgb(pix[i] % frame.cam.width, pix[i] / frame.cam.width);
    }

    FactoredBatch fb;
    fb.forward(model, decoder, rays, depths, codes, cfg.prune_threshold, opts);

    const Mat3X diff = fb.colors - targets;
    const double mse = diff.squaredNorm() / (3.0 * B);
    const Mat3X d_colors = (cfg.lambda_cr * 2.0 / (3.0 * B)) * diff;

    const int M = fb.active_samples;
    double l_rs = 0.0;
    VecX d_shadow;
    if (opts.use_shadow && M > 0) {
      l_rs = (fb.shadow_values.array() - 1.0).square().mean();
      d_shadow = cfg.lambda_rs * 2.0 / M * (fb.shadow_values.array() - 1.0).matrix();
    }
    double l_rt = 0.0;
    Mat3 dA_extra = Mat3::Zero();
    Vec3 db_extra = Vec3::Zero();
    if (opts.use_tone) {
      l_rt = tone_regularizer(fb.tone);
      dA_extra = cfg.lambda_rt * 2.0 * (fb.tone.A - Mat3::Identity());
      db_extra = cfg.lambda_rt * 2.0 * fb.tone.b;
    }

    const CodeGrads cg = fb.backward(model, d_colors, d_shadow, dA_extra, db_extra);
    cgrad.l_e = cg.l_e;
    cgrad.l_s = cg.l_s;
    cgrad.l_t = cg.l_t;
    ls_g(0, 0) = model.g_log_sharpness;

    const double total = cfg.lambda_cr * mse + cfg.lambda_rs * l_rs + cfg.lambda_rt * l_rt;
    if (!std::isfinite(total))
      abort_training("train_rerender", cfg.log_path, step,
                     "cr=" + fmt_double(mse) + " rs=" + fmt_double(l_rs) +
                         " rt=" + fmt_double(l_rt));

    adam.step(nn::cosine_lr(cfg.lr, step, cfg.steps));
    model.log_sharpness = ls_p(0, 0);
    code_opt[frame.id].step(nn::cosine_lr(cfg.lr_codes, step, cfg.steps));

    if ((step + 1) % cfg.checksum_every == 0 && model.geometry_checksum() != geo_sum)
      fail("train_rerender: frozen geometry was modified (checksum mismatch at step " +
           std::to_string(step) + ")");

    double mse_c = 0.0;
    for (int i = 0; i < B; ++i) {
      const Vec3 a = Vec3(fb.colors.col(i)).cwiseMax(0.0).cwiseMin(1.0);
      const Vec3 b = Vec3(targets.col(i)).cwiseMax(0.0).cwiseMin(1.0);
      mse_c += (a - b).squaredNorm() / (3.0 * B);
    }
    report = {total, psnr_of_mse(mse_c), step + 1};
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
      log.line("{\"step\":" + std::to_string(step) + ",\"frame\":\"" + frame.id +
               "\",\"loss\":" + fmt_double(total) + ",\"cr\":" + fmt_double(mse) +
               ",\"rs\":" + fmt_double(l_rs) + ",\"rt\":" + fmt_double(l_rt) +
               ",\"psnr\":" + fmt_double(report.final_psnr_batch) + "}");
  }
  if (model.geometry_checksum() != geo_sum)
    fail("train_rerender: frozen geometry was modified (final checksum mismatch)");
  return report;
}

}  // namespace rerender
