// SPDX-License-Identifier: Apache-2.0
#include "rerender/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rerender/checkpoint.hpp"
#include "rerender/dataset.hpp"
#include "rerender/synthdata.hpp"

namespace rerender {

namespace {

constexpr uint64_t kTagAdaptPix = 0xADA901;
constexpr uint64_t kTagAdaptDepth = 0xADA902;
constexpr uint64_t kTagRealism = 0x4EA115;

uint64_t fields_checksum(const SceneModel& model) {
  std::vector<const MatX*> ps;
  auto collect = [&ps](const nn::Mlp& m) {
    for (const auto& l : m.layers) {
      ps.push_back(&l.W);
      ps.push_back(&l.b);
    }
  };
  collect(model.geometry);
  collect(model.appearance);
  collect(model.shadow);
  collect(model.sky);
  collect(model.tone.net);
  return params_checksum(ps);
}

std::vector<int> masked_pixels(const Image& mask) {
  std::vector<int> out;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y, 0) > 0.5f) out.push_back(y * mask.width + x);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Latent adaptation

Mat3X render_pixels(const SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                    const FrameCodes& codes, const std::vector<int>& pixel_ids,
                    const RenderOptions& opts) {
  opts.validate();
  Mat3X out(3, static_cast<Eigen::Index>(pixel_ids.size()));
  const int n = static_cast<int>(pixel_ids.size());
  for (int start = 0; start < n; start += opts.chunk) {
    const int count = std::min(opts.chunk, n - start);
    std::vector<int> ids(pixel_ids.begin() + start, pixel_ids.begin() + start + count);
    const std::vector<Ray> rays = generate_rays(cam, ids);
    std::vector<VecX> depths(count);
    for (int i = 0; i < count; ++i) {
      if (auto range = ray_sphere_range(rays[i], opts.bound_radius)) {
        HashRng rng(opts.seed, static_cast<uint64_t>(ids[i]));
        depths[i] = sample_points(rays[i], range->first, range->second, opts.n_coarse, opts.n_fine,
                                  model, rng)
                        .depths;
      }
    }
    FactoredBatch fb;
    fb.forward(model, decoder, rays, depths, codes, /*prune_threshold=*/0.0, {});
    out.middleCols(start, count) = fb.colors;
  }
  return out;
}

AdaptResult adapt_photo(SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                        const Image& photo, const Image& mask, const AdaptOptions& opts) {
  validate_camera(cam);
  opts.render.validate();
  require(opts.steps >= 1 && opts.rays_per_batch >= 1 && opts.eval_every >= 1,
          "adapt_photo: steps, rays_per_batch and eval_every must be positive");
  require(opts.lr > 0.0, "adapt_photo: lr must be positive");
  require(photo.width == cam.width && photo.height == cam.height,
          "adapt_photo: photo resolution does not match the camera");
  require(mask.width == photo.width && mask.height == photo.height,
          "adapt_photo: mask resolution does not match the photo");
  require(decoder.frozen, "adapt_photo: sky decoder must be frozen");
  const std::vector<int> sel = masked_pixels(mask);
  require(!sel.empty(), "adapt_photo: mask selects no pixels");

  const uint64_t sum_before = fields_checksum(model);
  const double log_s_before = model.log_sharpness;

  FrameCodes codes;
  codes.l_e = VecX::Zero(model.cfg.dim_le);
  codes.l_s = VecX::Zero(model.cfg.dim_ls);
  codes.l_t = VecX::Zero(model.cfg.dim_lt);
  CodeGrads g;
  g.l_e = VecX::Zero(model.cfg.dim_le);
  g.l_s = VecX::Zero(model.cfg.dim_ls);
  g.l_t = VecX::Zero(model.cfg.dim_lt);
  nn::Adam adam;
  adam.add(&codes.l_e, &g.l_e);
  adam.add(&codes.l_s, &g.l_s);
  adam.add(&codes.l_t, &g.l_t);

  Mat3X sel_targets(3, static_cast<Eigen::Index>(sel.size()));
  for (size_t i = 0; i < sel.size(); ++i)
    sel_targets.col(static_cast<Eigen::Index>(i)) =
        photo.rgb(sel[i] % photo.width, sel[i] / photo.width);
  const auto masked_mse = [&](const FrameCodes& c) {
    const Mat3X colors = render_pixels(model, decoder, cam, c, sel, opts.render);
    return (colors - sel_targets).squaredNorm() / (3.0 * static_cast<double>(sel.size()));
  };

  AdaptResult res;
  res.initial_mse = masked_mse(codes);
  res.mse_history.push_back(res.initial_mse);
  res.codes = codes;
  res.final_mse = res.initial_mse;
  res.best_step = 0;

  const int B = opts.rays_per_batch;
  for (int step = 1; step <= opts.steps; ++step) {
    HashRng pick(hash_combine(opts.seed, kTagAdaptPix), step);
    std::vector<int> ids(B);
    Mat3X targets(3, B);
    for (int i = 0; i < B; ++i) {
      ids[i] = sel[pick.next_u64() % sel.size()];
      targets.col(i) = photo.rgb(ids[i] % photo.width, ids[i] / photo.width);
    }
    const std::vector<Ray> rays = generate_rays(cam, ids);
    std::vector<VecX> depths(B);
    for (int i = 0; i < B; ++i) {
      if (auto range = ray_sphere_range(rays[i], opts.render.bound_radius)) {
        HashRng dr(hash_combine(hash_combine(opts.seed, kTagAdaptDepth), step), i);
        depths[i] = sample_points(rays[i], range->first, range->second, opts.n_coarse, opts.n_fine,
                                  model, dr)
                        .depths;
      }
    }
    FactoredBatch fb;
    fb.forward(model, decoder, rays, depths, codes, opts.prune_threshold, {});
    const Mat3X diff = fb.colors - targets;
    const double batch_mse = diff.squaredNorm() / (3.0 * B);
    if (!std::isfinite(batch_mse))
      fail("adapt_photo: non-finite loss at step " + std::to_string(step));
    const Mat3X d_colors = (2.0 / (3.0 * B)) * diff;
    const CodeGrads cg =
        fb.backward(model, d_colors, VecX(), Mat3::Zero(), Vec3::Zero());
    g.l_e = cg.l_e;
    g.l_s = cg.l_s;
    g.l_t = cg.l_t;
    adam.step(opts.lr);

    if (step % opts.eval_every == 0 || step == opts.steps) {
      const double mse = masked_mse(codes);
      res.mse_history.push_back(mse);
      if (mse < res.final_mse) {
        res.final_mse = mse;
        res.codes = codes;
        res.best_step = step;
      }
    }
  }

  // The adaptation touches codes only: restore grad scratch and audit.
  model.appearance.zero_grad();
  model.shadow.zero_grad();
  model.sky.zero_grad();
  model.tone.net.zero_grad();
  model.g_log_sharpness = 0.0;
  if (fields_checksum(model) != sum_before || model.log_sharpness != log_s_before)
    fail("adapt_photo: field parameters changed during adaptation");
  return res;
}

// ---------------------------------------------------------------------------
// Realism net

RealismNet RealismNet::create(uint64_t seed) {
  RealismNet net;
  Rng rng(hash_combine(seed, kTagRealism));
  net.enc1.init(3, net.channels, rng);
  net.enc2.init(net.channels, net.channels, rng);
  net.enc3.init(net.channels, net.channels, rng);
  net.enc4.init(net.channels, net.channels, rng);
  // feature + rel coord (2) + cell size (2) -> rgb residual, zero at init.
  net.decoder.init({net.channels + 4, 64, 64, 64, 3}, rng, nn::Act::ReLU, nn::Act::None);
  net.decoder.layers.back().W.setZero();
  net.decoder.layers.back().b.setZero();
  return net;
}

std::vector<MatX*> RealismNet::params() {
  std::vector<MatX*> ps;
  for (nn::Conv3x3* c : {&enc1, &enc2, &enc3, &enc4}) {
    ps.push_back(&c->W);
    ps.push_back(&c->b);
  }
  for (MatX* p : decoder.params()) ps.push_back(p);
  return ps;
}

std::vector<MatX*> RealismNet::grads() {
  std::vector<MatX*> gs;
  for (nn::Conv3x3* c : {&enc1, &enc2, &enc3, &enc4}) {
    gs.push_back(&c->gW);
    gs.push_back(&c->gb);
  }
  for (MatX* g : decoder.grads()) gs.push_back(g);
  return gs;
}

void RealismNet::zero_grad() {
  for (nn::Conv3x3* c : {&enc1, &enc2, &enc3, &enc4}) c->zero_grad();
  decoder.zero_grad();
}

uint64_t RealismNet::checksum() const {
  std::vector<const MatX*> ps;
  for (const nn::Conv3x3* c : {&enc1, &enc2, &enc3, &enc4}) {
    ps.push_back(&c->W);
    ps.push_back(&c->b);
  }
  for (const auto& l : decoder.layers) {
    ps.push_back(&l.W);
    ps.push_back(&l.b);
  }
  return params_checksum(ps);
}

namespace {

struct RealismCache {
  nn::FeatureMap x0;                  // half-res rgb
  nn::FeatureMap z1, z2, z3, z4;      // conv preactivations
  nn::FeatureMap a1, a2, a3, a4;      // relu outputs
  MatX p1, p2, p3, p4;                // im2col patches per conv input
};

nn::FeatureMap relu_map(const nn::FeatureMap& z) {
  nn::FeatureMap a = z;
  a.m = a.m.cwiseMax(0.0);
  return a;
}

const nn::FeatureMap& encode_realism(const RealismNet& net, const Image& img,
                                     RealismCache& cache) {
  require(img.width % 2 == 0 && img.height % 2 == 0,
          "realism: input dimensions must be even");
  const Image half = downscale_area(img, 2);
  cache.x0 = nn::FeatureMap(3, half.width, half.height);
  for (int y = 0; y < half.height; ++y)
    for (int x = 0; x < half.width; ++x) cache.x0.m.col(y * half.width + x) = half.rgb(x, y);
  cache.z1 = net.enc1.forward(cache.x0, &cache.p1);
  cache.a1 = relu_map(cache.z1);
  cache.z2 = net.enc2.forward(cache.a1, &cache.p2);
  cache.a2 = relu_map(cache.z2);
  cache.z3 = net.enc3.forward(cache.a2, &cache.p3);
  cache.a3 = relu_map(cache.z3);
  cache.z4 = net.enc4.forward(cache.a3, &cache.p4);
  cache.a4 = relu_map(cache.z4);
  return cache.a4;
}

void backward_realism_encoder(RealismNet& net, RealismCache& cache, const nn::FeatureMap& d_feat) {
  nn::FeatureMap d = d_feat;
  d.m = d.m.cwiseProduct((cache.z4.m.array() > 0.0).cast<double>().matrix());
  d = net.enc4.backward(d, cache.p4);
  d.m = d.m.cwiseProduct((cache.z3.m.array() > 0.0).cast<double>().matrix());
  d = net.enc3.backward(d, cache.p3);
  d.m = d.m.cwiseProduct((cache.z2.m.array() > 0.0).cast<double>().matrix());
  d = net.enc2.backward(d, cache.p2);
  d.m = d.m.cwiseProduct((cache.z1.m.array() > 0.0).cast<double>().matrix());
  net.enc1.backward(d, cache.p1);  // input gradient unused
}

struct QueryPoint {
  int cell = 0;          // feature column index
  double rel_x = 0, rel_y = 0, cell_w = 0, cell_h = 0;
  Vec3 skip = Vec3::Zero();
};

QueryPoint realism_query(const Image& img, const nn::FeatureMap& feat, int ox, int oy, int out_w,
                         int out_h) {
  QueryPoint q;
  const double u = (ox + 0.5) / out_w, v = (oy + 0.5) / out_h;
  const double fx = u * feat.width - 0.5, fy = v * feat.height - 0.5;
  const int jx = std::clamp(static_cast<int>(std::lround(fx)), 0, feat.width - 1);
  const int jy = std::clamp(static_cast<int>(std::lround(fy)), 0, feat.height - 1);
  q.cell = jy * feat.width + jx;
  q.rel_x = fx - jx;
  q.rel_y = fy - jy;
  q.cell_w = static_cast<double>(feat.width) / out_w;
  q.cell_h = static_cast<double>(feat.height) / out_h;
  q.skip = sample_bilinear(img, u * img.width, v * img.height);
  return q;
}

MatX realism_decoder_input(const RealismNet& net, const nn::FeatureMap& feat,
                           const std::vector<QueryPoint>& qs) {
  MatX in(net.channels + 4, static_cast<Eigen::Index>(qs.size()));
  for (size_t i = 0; i < qs.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    in.col(c).head(net.channels) = feat.m.col(qs[i].cell);
    in(net.channels + 0, c) = qs[i].rel_x;
    in(net.channels + 1, c) = qs[i].rel_y;
    in(net.channels + 2, c) = qs[i].cell_w;
    in(net.channels + 3, c) = qs[i].cell_h;
  }
  return in;
}

}  // namespace

Image augment_realism(const RealismNet& net, const Image& img, int out_w, int out_h) {
  require(out_w > 0 && out_h > 0, "augment_realism: output size must be positive");
  require(img.channels == 3, "augment_realism: rgb input required");
  RealismCache cache;
  const nn::FeatureMap& feat = encode_realism(net, img, cache);

  std::vector<QueryPoint> qs;
  qs.reserve(static_cast<size_t>(out_w) * out_h);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) qs.push_back(realism_query(img, feat, ox, oy, out_w, out_h));
  const MatX res = net.decoder.forward(realism_decoder_input(net, feat, qs), nullptr);

  Image out(out_w, out_h, 3);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const auto c = static_cast<Eigen::Index>(oy) * out_w + ox;
      out.set_rgb(ox, oy, qs[c].skip + Vec3(res.col(c)));
    }
  return out;
}

namespace {

double train_realism(RealismNet& net, const std::vector<RealismPair>& pairs, int steps, double lr,
                     int batch_pixels, uint64_t seed) {
  require(!pairs.empty(), "realism training: no pairs");
  require(steps >= 1 && batch_pixels >= 1 && lr > 0.0, "realism training: bad options");
  std::vector<std::vector<int>> sel(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const RealismPair& pr = pairs[p];
    require(pr.input.same_shape(pr.target), "realism training: input/target shape mismatch");
    require(pr.input.channels == 3, "realism training: rgb pairs required");
    if (pr.mask.width > 0) {
      require(pr.mask.width == pr.target.width && pr.mask.height == pr.target.height,
              "realism training: mask shape mismatch");
      sel[p] = masked_pixels(pr.mask);
    } else {
      sel[p].resize(static_cast<size_t>(pr.target.width) * pr.target.height);
      for (size_t i = 0; i < sel[p].size(); ++i) sel[p][i] = static_cast<int>(i);
    }
    require(!sel[p].empty(), "realism training: a pair has no supervised pixels");
  }

  nn::Adam adam;
  {
    const auto ps = net.params();
    const auto gs = net.grads();
    for (size_t i = 0; i < ps.size(); ++i) adam.add(ps[i], gs[i]);
  }

  double loss = 0.0;
  for (int step = 0; step < steps; ++step) {
    const size_t p = step % pairs.size();
    const RealismPair& pr = pairs[p];
    net.zero_grad();
    RealismCache cache;
    const nn::FeatureMap& feat = encode_realism(net, pr.input, cache);

    HashRng pick(hash_combine(seed, kTagRealism), step);
    const int B = batch_pixels;
    std::vector<QueryPoint> qs(B);
    Mat3X targets(3, B);
    const int tw = pr.target.width;
    for (int i = 0; i < B; ++i) {
      const int id = sel[p][pick.next_u64() % sel[p].size()];
      qs[i] = realism_query(pr.input, feat, id % tw, id / tw, tw, pr.target.height);
      targets.col(i) = pr.target.rgb(id % tw, id / tw);
    }
    nn::MlpCache dec_cache;
    const MatX res = net.decoder.forward(realism_decoder_input(net, feat, qs), &dec_cache);
    Mat3X out(3, B);
    for (int i = 0; i < B; ++i) out.col(i) = qs[i].skip + Vec3(res.col(i));
    const Mat3X diff = out - targets;
    loss = diff.squaredNorm() / (3.0 * B);
    if (!std::isfinite(loss)) fail("realism training: non-finite loss at step " +
                                   std::to_string(step));
    const MatX d_res = (2.0 / (3.0 * B)) * diff;
    const MatX d_in = net.decoder.backward(d_res, dec_cache);
    nn::FeatureMap d_feat(net.channels, feat.width, feat.height);
    for (int i = 0; i < B; ++i) d_feat.m.col(qs[i].cell) += d_in.col(i).head(net.channels);
    backward_realism_encoder(net, cache, d_feat);
    adam.step(nn::cosine_lr(lr, step, steps));
  }
  return loss;
}

}  // namespace

double finetune_realism(RealismNet& net, const std::vector<RealismPair>& pairs,
                        const RealismTrainOptions& opts) {
  return train_realism(net, pairs, opts.steps, opts.lr, opts.batch_pixels, opts.seed);
}

RealismNet pretrain_realism(const RealismPretrainOptions& opts) {
  require(opts.n_images >= 1 && opts.image_size >= 8, "pretrain_realism: bad options");
  require(opts.image_size % 2 == 0, "pretrain_realism: image size must be even");

  std::string cache_path;
  if (const char* dir = std::getenv("RENDERCTL_CACHE"); dir && *dir) {
    uint64_t key = hash_combine(opts.seed, static_cast<uint64_t>(opts.n_images));
    key = hash_combine(key, static_cast<uint64_t>(opts.steps));
    key = hash_combine(key, static_cast<uint64_t>(opts.image_size));
    key = hash_combine(key, static_cast<uint64_t>(opts.batch_pixels));
    std::ostringstream name;
    name << dir << "/realism_pretrain_" << std::hex << key << ".rrck";
    cache_path = name.str();
    if (std::filesystem::exists(cache_path)) {
      try {
        return load_realism(cache_path);
      } catch (const std::exception&) {
        // stale or corrupt cache entry: fall through and retrain
      }
    }
  }

  const char* presets[] = {"minimal-sphere", "fountain-like", "facade-like"};
  std::vector<RealismPair> pairs;
  for (int i = 0; i < opts.n_images; ++i) {
    const SyntheticScene scene = make_scene(presets[i % 3], opts.seed + 17 * i);
    HashRng rng(hash_combine(opts.seed, kTagRealism + 1), i);
    const double yaw = 2.0 * kPi * rng.next_u01();
    const double pitch = 0.15 + 0.45 * rng.next_u01();
    const Vec3 eye = 3.0 * Vec3(std::cos(pitch) * std::sin(yaw), std::sin(pitch),
                                std::cos(pitch) * std::cos(yaw));
    const CameraSpec cam = camera_look_at(eye, Vec3::Zero(), opts.image_size, opts.image_size,
                                          50.0 * kPi / 180.0);
    const GtRender gt = render_ground_truth(scene, cam, i % scene.n_conditions());
    RealismPair pair;
    pair.target = gt.rgb;
    pair.input = resize_bilinear(downscale_area(gt.rgb, 2), opts.image_size, opts.image_size);
    pairs.push_back(std::move(pair));
  }

  RealismNet net = RealismNet::create(opts.seed);
  train_realism(net, pairs, opts.steps, opts.lr, opts.batch_pixels, opts.seed);
  if (!cache_path.empty()) {
    std::filesystem::create_directories(std::filesystem::path(cache_path).parent_path());
    save_realism(cache_path, net);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Photo extrapolation

namespace {

Image crop_image(const Image& img, int x0, int y0, int w, int h) {
  Image out(w, h, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

}  // namespace

ExtrapolateResult extrapolate(SceneModel& model, const SkyDecoder& decoder, RealismNet* realism,
                              const CameraSpec& cam, const Image& photo, const Image& mask,
                              const ExtrapolateOptions& opts) {
  validate_camera(cam);
  require(opts.widen >= 1.0, "extrapolate: widen must be >= 1");
  require(opts.feather_px >= 1, "extrapolate: feather_px must be positive");
  require(photo.width == cam.width && photo.height == cam.height,
          "extrapolate: photo resolution does not match the camera");

  Image use_mask = mask;
  if (use_mask.width == 0) {
    use_mask = Image(photo.width, photo.height, 1, 1.0f);
  }

  ExtrapolateResult res;
  res.adapt = adapt_photo(model, decoder, cam, photo, use_mask, opts.adapt);

  res.wide_cam = widen_camera(cam, opts.widen);
  // Keep the widened frustum meaningfully in front of the camera.
  require(std::atan2(res.wide_cam.width * 0.5, res.wide_cam.fx) < 1.45,
          "extrapolate: widened field of view is too large");
  res.pad_x = (res.wide_cam.width - cam.width) / 2;
  res.pad_y = (res.wide_cam.height - cam.height) / 2;

  const RenderResult wide = render_image(model, decoder, res.wide_cam, res.adapt.codes,
                                         opts.render);
  res.wide_render = wide.rgb;

  res.augmented = res.wide_render;
  if (opts.use_realism && realism != nullptr) {
    RealismNet tuned = *realism;  // per-photo fine-tune on a scratch copy
    RealismPair pair;
    pair.input = crop_image(res.wide_render, res.pad_x, res.pad_y, cam.width, cam.height);
    pair.target = photo;
    pair.mask = use_mask;
    std::vector<RealismPair> pairs;
    pairs.push_back(std::move(pair));
    finetune_realism(tuned, pairs, opts.finetune);
    res.augmented = augment_realism(tuned, res.wide_render, res.wide_cam.width,
                                    res.wide_cam.height);
  }

  // Composite: linear feather from the source boundary inward; pixels beyond
  // the band keep the photo bytes untouched.
  res.composite = res.augmented;
  for (int py = 0; py < cam.height; ++py) {
    for (int px = 0; px < cam.width; ++px) {
      const int d = std::min(std::min(px + 1, cam.width - px), std::min(py + 1, cam.height - py));
      const double w = std::min(1.0, static_cast<double>(d) / opts.feather_px);
      const int ox = px + res.pad_x, oy = py + res.pad_y;
      if (w >= 1.0) {
        for (int c = 0; c < 3; ++c) res.composite.at(ox, oy, c) = photo.at(px, py, c);
      } else {
        const Vec3 blend = w * photo.rgb(px, py) + (1.0 - w) * res.augmented.rgb(ox, oy);
        res.composite.set_rgb(ox, oy, blend);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// 3D photo

Photo3dResult render_3d_photo(const SceneModel& model, const SkyDecoder& decoder,
                              const CameraSpec& cam, const FrameCodes& codes,
                              const Photo3dOptions& opts, const RealismNet* realism) {
  validate_camera(cam);
  require(opts.n_frames >= 1, "render_3d_photo: n_frames must be positive");
  require(!opts.out_dir.empty(), "render_3d_photo: out_dir required");
  require(realism == nullptr || (cam.width % 2 == 0 && cam.height % 2 == 0),
          "render_3d_photo: even frame dimensions required for realism augmentation");
  opts.render.validate();

  // The whole path must stay outside the bounding sphere (checked up front so
  // nothing is written for an invalid trajectory).
  const Vec3 target = Vec3::Zero();
  std::vector<CameraSpec> cams(opts.n_frames);
  for (int f = 0; f < opts.n_frames; ++f) {
    const double yaw = f * opts.orbit_deg_per_frame * kPi / 180.0;
    Mat3 rot;
    rot << std::cos(yaw), 0, std::sin(yaw), 0, 1, 0, -std::sin(yaw), 0, std::cos(yaw);
    Vec3 pos = rot * cam.t;
    if (opts.dolly_per_frame != 0.0)
      pos += opts.dolly_per_frame * f * (target - pos).normalized();
    require(pos.norm() > opts.render.bound_radius + 0.05,
            "render_3d_photo: camera path enters the bounding sphere at frame " +
                std::to_string(f));
    CameraSpec vcam = camera_look_at(pos, target, cam.width, cam.height, 1.0);
    vcam.fx = cam.fx;
    vcam.fy = cam.fy;
    vcam.cx = cam.cx;
    vcam.cy = cam.cy;
    cams[f] = vcam;
  }

  std::filesystem::create_directories(opts.out_dir);
  Photo3dResult res;
  res.cameras = cams;
  nlohmann::json frames = nlohmann::json::array();
  for (int f = 0; f < opts.n_frames; ++f) {
    const RenderResult r = render_image(model, decoder, cams[f], codes, opts.render);
    const Image frame =
        realism != nullptr ? augment_realism(*realism, r.rgb, cam.width, cam.height) : r.rgb;
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", f);
    const std::string path = opts.out_dir + "/" + name;
    save_png(path, frame);
    res.frame_paths.push_back(path);
    frames.push_back({{"file", name}, {"camera", nlohmann::json::parse(camera_to_json(cams[f]))}});
  }
  nlohmann::json manifest;
  manifest["n_frames"] = opts.n_frames;
  manifest["orbit_deg_per_frame"] = opts.orbit_deg_per_frame;
  manifest["dolly_per_frame"] = opts.dolly_per_frame;
  manifest["frames"] = frames;
  res.manifest_path = opts.out_dir + "/manifest.json";
  std::ofstream out(res.manifest_path, std::ios::trunc);
  out << manifest.dump(2) << "\n";
  require(out.good(), "render_3d_photo: cannot write manifest");
  return res;
}

}  // namespace rerender
