// SPDX-License-Identifier: Apache-2.0
#include "rerender/fields.hpp"

#include <cmath>
#include <cstring>

namespace rerender {

namespace {

uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

}  // namespace

VecX hashed_gaussian(int dim, double stddev, uint64_t seed, const std::string& key, int tag) {
  HashRng rng(hash_combine(seed, fnv1a(key.data(), key.size())), tag);
  VecX v(dim);
  for (int i = 0; i < dim; ++i) {
    // Box-Muller; clamp away from 0 to keep the log finite.
    const double u1 = std::max(rng.next_u01(), 1e-12);
    const double u2 = rng.next_u01();
    v[i] = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
  return v;
}

double SceneModel::sphere_offset(const Vec3& x) {
  return std::sqrt(x.squaredNorm() + 1e-6) - 0.5;
}

Vec3 SceneModel::sphere_offset_grad(const Vec3& x) {
  return x / std::sqrt(x.squaredNorm() + 1e-6);
}

SceneModel SceneModel::create(uint64_t seed, const ModelConfig& cfg) {
  SceneModel m;
  m.cfg = cfg;
  m.seed = seed;
  m.pos_enc = {cfg.pos_freqs, true};
  m.dir_enc = {cfg.dir_freqs, true};
  Rng rng(seed);

  const int pdim = m.pos_enc.out_dim();
  std::vector<int> gdims{pdim};
  for (int i = 0; i < cfg.geom_hidden; ++i) gdims.push_back(cfg.geom_width);
  gdims.push_back(1 + cfg.feature_dim);
  m.geometry.init(gdims, rng, nn::Act::Softplus, nn::Act::None);
  // Zero head: the initial SDF is exactly the analytic sphere offset.
  m.geometry.layers.back().W.setZero();
  m.geometry.layers.back().b.setZero();

  std::vector<int> adims{pdim + cfg.feature_dim};
  for (int i = 0; i < cfg.app_hidden; ++i) adims.push_back(cfg.app_width);
  adims.push_back(3);
  m.appearance.init(adims, rng, nn::Act::Softplus, nn::Act::Sigmoid);

  std::vector<int> sdims{pdim + cfg.dim_ls};
  for (int i = 0; i < cfg.shadow_hidden; ++i) sdims.push_back(cfg.shadow_width);
  sdims.push_back(1);
  m.shadow.init(sdims, rng, nn::Act::Softplus, nn::Act::Sigmoid);
  // Bias toward shadow-free (sigmoid(3) ~ 0.95), matching the prior pulled in
  // by the shadow regularizer.
  m.shadow.layers.back().b.array() += 3.0;

  std::vector<int> kdims{m.dir_enc.out_dim() + cfg.dim_le};
  for (int i = 0; i < cfg.sky_hidden; ++i) kdims.push_back(cfg.sky_width);
  kdims.push_back(3);
  m.sky.init(kdims, rng, nn::Act::Softplus, nn::Act::Softplus);

  m.tone = ToneMapper::create(cfg.dim_lt, rng);
  m.log_sharpness = std::log(1.0 / cfg.init_inv_sharpness);
  return m;
}

FrameCodes& SceneModel::codes_for(const std::string& frame_id) {
  auto it = codes.find(frame_id);
  if (it != codes.end()) return it->second;
  FrameCodes c;
  c.l_e = hashed_gaussian(cfg.dim_le, cfg.code_init_std, seed, frame_id, 1);
  c.l_s = hashed_gaussian(cfg.dim_ls, cfg.code_init_std, seed, frame_id, 2);
  c.l_t = hashed_gaussian(cfg.dim_lt, cfg.code_init_std, seed, frame_id, 3);
  return codes.emplace(frame_id, std::move(c)).first->second;
}

const FrameCodes& SceneModel::codes_at(const std::string& frame_id) const {
  auto it = codes.find(frame_id);
  require(it != codes.end(), "SceneModel: no codes for frame '" + frame_id + "'");
  return it->second;
}

uint64_t params_checksum(const std::vector<const MatX*>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const MatX* p : params)
    h = fnv1a(p->data(), sizeof(double) * p->size(), h);
  return h;
}

uint64_t SceneModel::geometry_checksum() const {
  std::vector<const MatX*> ps;
  for (const auto& l : geometry.layers) {
    ps.push_back(&l.W);
    ps.push_back(&l.b);
  }
  return params_checksum(ps);
}

// ---------------------------------------------------------------------------

GeometryEval eval_geometry_batch(const SceneModel& model, const Mat3X& xs, bool want_grad) {
  GeometryEval ev;
  ev.enc = positional_encode_batch(xs, model.pos_enc);
  MatX out = model.geometry.forward(ev.enc, &ev.cache);
  const int n = static_cast<int>(xs.cols());
  ev.sdf.resize(n);
  ev.feature = out.bottomRows(out.rows() - 1);
  for (int i = 0; i < n; ++i) ev.sdf[i] = out(0, i) + SceneModel::sphere_offset(xs.col(i));
  if (want_grad) {
    MatX d_enc = model.geometry.input_gradient(ev.cache, 0);
    ev.grad = encoding_backward(model.pos_enc, xs, d_enc);
    for (int i = 0; i < n; ++i) ev.grad.col(i) += SceneModel::sphere_offset_grad(xs.col(i));
  }
  return ev;
}

Mat3X eval_albedo_batch(const SceneModel& model, const MatX& enc, const MatX& feature,
                        nn::MlpCache* cache) {
  MatX in(enc.rows() + feature.rows(), enc.cols());
  in.topRows(enc.rows()) = enc;
  in.bottomRows(feature.rows()) = feature;
  return model.appearance.forward(in, cache);
}

VecX eval_shadow_batch(const SceneModel& model, const MatX& enc, const VecX& l_s,
                       nn::MlpCache* cache) {
  require(l_s.size() == model.cfg.dim_ls, "eval_shadow: shadow code dimension mismatch");
  MatX in(enc.rows() + l_s.size(), enc.cols());
  in.topRows(enc.rows()) = enc;
  in.bottomRows(l_s.size()).colwise() = l_s;
  return model.shadow.forward(in, cache).row(0).transpose();
}

Mat3X eval_sky_batch(const SceneModel& model, const Mat3X& dirs, const VecX& l_e,
                     nn::MlpCache* cache) {
  require(l_e.size() == model.cfg.dim_le, "eval_sky: environment code dimension mismatch");
  MatX enc = positional_encode_batch(dirs, model.dir_enc);
  MatX in(enc.rows() + l_e.size(), enc.cols());
  in.topRows(enc.rows()) = enc;
  in.bottomRows(l_e.size()).colwise() = l_e;
  return model.sky.forward(in, cache);
}

// ---------------------------------------------------------------------------

static void check_domain(const SceneModel& model, const Vec3& x) {
  require(x.norm() <= model.cfg.query_radius,
          "field query outside domain (|x| > query radius)");
}

double eval_sdf(const SceneModel& model, const Vec3& x) {
  check_domain(model, x);
  return eval_geometry_batch(model, x, false).sdf[0];
}

Vec3 eval_normal(const SceneModel& model, const Vec3& x) {
  check_domain(model, x);
  GeometryEval ev = eval_geometry_batch(model, x, true);
  const double norm = ev.grad.col(0).norm();
  if (norm < 1e-8) fail("eval_normal: degenerate SDF gradient");
  return ev.grad.col(0) / norm;
}

Vec3 eval_albedo(const SceneModel& model, const Vec3& x) {
  check_domain(model, x);
  GeometryEval ev = eval_geometry_batch(model, x, false);
  return eval_albedo_batch(model, ev.enc, ev.feature).col(0);
}

double eval_shadow(const SceneModel& model, const Vec3& x, const VecX& l_s) {
  check_domain(model, x);
  GeometryEval ev = eval_geometry_batch(model, x, false);
  return eval_shadow_batch(model, ev.enc, l_s)[0];
}

Vec3 eval_sky(const SceneModel& model, const Vec3& v, const VecX& l_e) {
  require(std::abs(v.norm() - 1.0) <= 1e-6, "eval_sky: direction must be unit length");
  return eval_sky_batch(model, v, l_e).col(0);
}

}  // namespace rerender
