// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels vs the batched/OpenMP production paths, on
// identical inputs. Throughput is items/s (pixels, points, rays, normals).
#include <benchmark/benchmark.h>

#include "rerender/renderer.hpp"
#include "rerender/training.hpp"

using namespace rerender;

namespace {

struct BenchScene {
  SceneModel model;
  SkyDecoder decoder;
  CameraSpec cam;
  FrameCodes codes;
  RenderOptions opts;

  BenchScene() : model(SceneModel::create(7, config())) {
    Rng rng(11);
    decoder.net.init({decoder.latent_dim, 32, 32, 3 * decoder.native_h * decoder.native_w}, rng,
                     nn::Act::ReLU, nn::Act::None, 0.05);
    decoder.frozen = true;
    cam = camera_look_at(Vec3(0.0, 0.6, -2.5), Vec3::Zero(), 16, 16, 0.9);
    codes = model.codes_for("bench");
    opts.n_coarse = 16;
    opts.n_fine = 8;
    opts.seed = 3;
  }

  static ModelConfig config() {
    ModelConfig cfg;
    cfg.pos_freqs = 4;
    cfg.dir_freqs = 2;
    cfg.geom_width = 48;
    cfg.geom_hidden = 2;
    cfg.feature_dim = 24;
    cfg.app_width = 48;
    cfg.app_hidden = 2;
    cfg.shadow_width = 24;
    cfg.shadow_hidden = 2;
    cfg.sky_width = 24;
    cfg.sky_hidden = 2;
    return cfg;
  }
};

const BenchScene& bench_scene() {
  static BenchScene s;
  return s;
}

void bm_render_pixel_ref(benchmark::State& state) {
  const BenchScene& s = bench_scene();
  for (auto _ : state) {
    Vec3 acc = Vec3::Zero();
    for (int iy = 0; iy < s.cam.height; ++iy)
      for (int ix = 0; ix < s.cam.width; ++ix)
        acc += ref::render_pixel(s.model, s.decoder, s.cam, s.codes, ix, iy, s.opts);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * s.cam.width * s.cam.height);
}
BENCHMARK(bm_render_pixel_ref)->Unit(benchmark::kMillisecond);

void bm_render_image_batched(benchmark::State& state) {
  const BenchScene& s = bench_scene();
  for (auto _ : state) {
    RenderResult out = render_image(s.model, s.decoder, s.cam, s.codes, s.opts);
    benchmark::DoNotOptimize(out.rgb.data);
  }
  state.SetItemsProcessed(state.iterations() * s.cam.width * s.cam.height);
}
BENCHMARK(bm_render_image_batched)->Unit(benchmark::kMillisecond);

Mat3X sphere_points(int n, uint64_t seed) {
  HashRng rng(seed, 0);
  Mat3X xs(3, n);
  for (int i = 0; i < n; ++i) {
    Vec3 p;
    do {
      p = Vec3(2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1);
    } while (p.squaredNorm() > 1.0);
    xs.col(i) = 1.2 * p;
  }
  return xs;
}

void bm_eval_sdf_loop(benchmark::State& state) {
  const BenchScene& s = bench_scene();
  const Mat3X xs = sphere_points(int(state.range(0)), 21);
  for (auto _ : state) {
    double acc = 0.0;
    for (int i = 0; i < xs.cols(); ++i) acc += eval_sdf(s.model, xs.col(i));
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * xs.cols());
}
BENCHMARK(bm_eval_sdf_loop)->Arg(4096)->Unit(benchmark::kMillisecond);

void bm_eval_geometry_batch(benchmark::State& state) {
  const BenchScene& s = bench_scene();
  const Mat3X xs = sphere_points(int(state.range(0)), 21);
  for (auto _ : state) {
    GeometryEval ge = eval_geometry_batch(s.model, xs, false);
    benchmark::DoNotOptimize(ge.sdf);
  }
  state.SetItemsProcessed(state.iterations() * xs.cols());
}
BENCHMARK(bm_eval_geometry_batch)->Arg(4096)->Unit(benchmark::kMillisecond);

struct CompositeData {
  std::vector<VecX> alphas;
  std::vector<Mat3X> colors;
  Vec3 sky = Vec3(0.3, 0.5, 0.9);
};

const CompositeData& composite_data() {
  static CompositeData d = [] {
    CompositeData out;
    HashRng rng(31, 0);
    const int rays = 1024, k = 64;
    for (int r = 0; r < rays; ++r) {
      VecX a(k);
      Mat3X c(3, k);
      for (int i = 0; i < k; ++i) {
        a[i] = 0.2 * rng.next_u01();
        c.col(i) = Vec3(rng.next_u01(), rng.next_u01(), rng.next_u01());
      }
      out.alphas.push_back(a);
      out.colors.push_back(c);
    }
    return out;
  }();
  return d;
}

void bm_composite_scalar_ref(benchmark::State& state) {
  const CompositeData& d = composite_data();
  for (auto _ : state) {
    Vec3 acc = Vec3::Zero();
    for (size_t r = 0; r < d.alphas.size(); ++r) {
      double t = 1.0;
      Vec3 c = Vec3::Zero();
      for (int i = 0; i < d.alphas[r].size(); ++i) {
        c += t * d.alphas[r][i] * d.colors[r].col(i);
        t *= 1.0 - d.alphas[r][i];
      }
      acc += c + t * d.sky;
    }
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * d.alphas.size());
}
BENCHMARK(bm_composite_scalar_ref)->Unit(benchmark::kMicrosecond);

void bm_composite_batched(benchmark::State& state) {
  const CompositeData& d = composite_data();
  for (auto _ : state) {
    Vec3 acc = Vec3::Zero();
    for (size_t r = 0; r < d.alphas.size(); ++r)
      acc += composite(d.alphas[r], d.colors[r], d.sky).color;
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * d.alphas.size());
}
BENCHMARK(bm_composite_batched)->Unit(benchmark::kMicrosecond);

struct IrradianceData {
  EnvMap env;
  SolidAngleGrid dw;
  Mat3X dirs;
  Mat3X normals;
};

const IrradianceData& irradiance_data() {
  static IrradianceData d = [] {
    IrradianceData out;
    out.env = EnvMap(16, 32);
    HashRng rng(17, 0);
    for (int i = 0; i < out.env.radiance.cols(); ++i)
      out.env.radiance.col(i) = Vec3(rng.next_u01(), rng.next_u01(), rng.next_u01());
    out.dw = solid_angles(16, 32);
    out.dirs = texel_directions(16, 32);
    out.normals.resize(3, 1024);
    for (int i = 0; i < out.normals.cols(); ++i) {
      Vec3 n;
      do {
        n = Vec3(2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1);
      } while (n.squaredNorm() > 1.0 || n.squaredNorm() < 1e-6);
      out.normals.col(i) = n.normalized();
    }
    return out;
  }();
  return d;
}

void bm_shade_lambertian_loop(benchmark::State& state) {
  const IrradianceData& d = irradiance_data();
  const Vec3 albedo(1, 1, 1);
  for (auto _ : state) {
    Vec3 acc = Vec3::Zero();
    for (int i = 0; i < d.normals.cols(); ++i)
      acc += shade_lambertian(albedo, 1.0, d.normals.col(i), d.env, d.dw);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * d.normals.cols());
}
BENCHMARK(bm_shade_lambertian_loop)->Unit(benchmark::kMillisecond);

void bm_shade_irradiance_batch(benchmark::State& state) {
  const IrradianceData& d = irradiance_data();
  for (auto _ : state) {
    Mat3X e = shade_irradiance_batch(d.env, d.dw, d.dirs, d.normals);
    benchmark::DoNotOptimize(e);
  }
  state.SetItemsProcessed(state.iterations() * d.normals.cols());
}
BENCHMARK(bm_shade_irradiance_batch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
