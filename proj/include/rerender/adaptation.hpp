// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "rerender/renderer.hpp"
#include "rerender/training.hpp"

namespace rerender {

// ---------------------------------------------------------------------------
// Single-photo latent adaptation

struct AdaptOptions {
  int steps = 500;
  int rays_per_batch = 512;
  double lr = 1e-2;
  int eval_every = 25;    // masked-MSE evaluation cadence (best-iterate pick)
  int n_coarse = 24;      // optimization-batch sampling (evals use `render`)
  int n_fine = 12;
  double prune_threshold = 1e-4;
  RenderOptions render;   // sampling used for the evaluations
  uint64_t seed = 0;
};

struct AdaptResult {
  FrameCodes codes;          // best iterate
  double initial_mse = 0.0;  // masked MSE with the zero codes
  double final_mse = 0.0;    // masked MSE at the best iterate
  int best_step = 0;
  std::vector<double> mse_history;  // one entry per evaluation
};

/// Optimizes fresh zero-initialized frame codes against the photo on the
/// mask's pixels (mask 1 = supervised). Every field network stays frozen;
/// parameter checksums are audited before/after.
AdaptResult adapt_photo(SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                        const Image& photo, const Image& mask, const AdaptOptions& opts = {});

/// The listed pixels rendered with exactly the depth stream render_image
/// would draw for them (same seed, same per-pixel counter RNG).
Mat3X render_pixels(const SceneModel& model, const SkyDecoder& decoder, const CameraSpec& cam,
                    const FrameCodes& codes, const std::vector<int>& pixel_ids,
                    const RenderOptions& opts);

// ---------------------------------------------------------------------------
// Realism augmentation: implicit local image function over conv features

struct RealismNet {
  nn::Conv3x3 enc1, enc2, enc3, enc4;  // 3 -> 64 -> 64 -> 64 -> 64 at half res
  nn::Mlp decoder;                     // feature, rel coord, cell -> rgb residual
  int channels = 64;

  static RealismNet create(uint64_t seed);
  std::vector<MatX*> params();
  std::vector<MatX*> grads();
  void zero_grad();
  uint64_t checksum() const;
};

/// Resamples img to (out_w, out_h): bilinear skip plus the implicit residual.
/// Identity-at-init (zero final decoder layer), deterministic, and the cell
/// input keeps it consistent across output scales. Input dims must be even.
Image augment_realism(const RealismNet& net, const Image& img, int out_w, int out_h);

/// One supervision pair; mask 1 = supervised (empty mask image = all pixels).
struct RealismPair {
  Image input, target, mask;
};

struct RealismTrainOptions {
  int steps = 300;
  double lr = 1e-4;
  int batch_pixels = 1024;
  uint64_t seed = 0;
};

/// Fine-tunes the net on (input, target) pairs at the target resolution;
/// returns the final batch loss.
double finetune_realism(RealismNet& net, const std::vector<RealismPair>& pairs,
                        const RealismTrainOptions& opts = {});

struct RealismPretrainOptions {
  int n_images = 24;
  int image_size = 64;
  int steps = 600;
  double lr = 1e-4;
  int batch_pixels = 1024;
  uint64_t seed = 0;
};

/// Self-supervised sharpening prior: synthetic ground-truth renders paired
/// with their 2x-downscaled-and-upscaled copies. Results are cached in
/// $RENDERCTL_CACHE when the variable is set.
RealismNet pretrain_realism(const RealismPretrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Photo extrapolation

struct ExtrapolateOptions {
  double widen = 2.0;  // field-of-view scale for the virtual camera
  int feather_px = 16;
  bool use_realism = true;
  AdaptOptions adapt;
  RealismTrainOptions finetune;
  RenderOptions render;
};

struct ExtrapolateResult {
  Image composite;     // final extrapolated photo
  Image wide_render;   // raw model render at the wide camera
  Image augmented;     // realism-augmented render (== wide_render when off)
  CameraSpec wide_cam;
  int pad_x = 0, pad_y = 0;  // source rect origin inside the wide frame
  AdaptResult adapt;
};

/// Adapt codes to the photo, render the widened view, fine-tune realism on
/// the overlap, augment, then composite the source photo back with a linear
/// feather. Outside the feather band the source pixels are preserved bitwise.
ExtrapolateResult extrapolate(SceneModel& model, const SkyDecoder& decoder, RealismNet* realism,
                              const CameraSpec& cam, const Image& photo, const Image& mask,
                              const ExtrapolateOptions& opts = {});

// ---------------------------------------------------------------------------
// 3D photo generation

struct Photo3dOptions {
  int n_frames = 45;
  double orbit_deg_per_frame = 2.0;  // yaw around the scene origin
  double dolly_per_frame = 0.0;      // advance toward the target each frame
  RenderOptions render;
  std::string out_dir = "photo3d";
};

struct Photo3dResult {
  std::vector<std::string> frame_paths;
  std::string manifest_path;
  std::vector<CameraSpec> cameras;
};

/// Renders an orbit/dolly fly-through with fixed codes and writes
/// frame_%04d.png plus a manifest. Each frame is realism-augmented when a
/// (fine-tuned) net is given. The whole camera path must stay outside the
/// bounding sphere (validation error otherwise).
Photo3dResult render_3d_photo(const SceneModel& model, const SkyDecoder& decoder,
                              const CameraSpec& cam, const FrameCodes& codes,
                              const Photo3dOptions& opts, const RealismNet* realism = nullptr);

}  // namespace rerender
