// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rerender/core.hpp"

namespace rerender::nn {

enum class Act { None, ReLU, Softplus, Sigmoid, Exp, Tanh };

MatX act_apply(Act a, const MatX& z);
MatX act_deriv(Act a, const MatX& z);  // derivative as a function of the preactivation

struct Linear {
  MatX W;       // out x in
  MatX b;       // out x 1
  MatX gW, gb;  // accumulated gradients

  void init(int in, int out, Rng& rng, double w_scale = 1.0);
  void zero_init(int in, int out);
  int in_dim() const { return static_cast<int>(W.cols()); }
  int out_dim() const { return static_cast<int>(W.rows()); }
};

/// Per-batch forward cache: preactivations of every layer plus the input.
/// Needed only when a backward pass will follow.
struct MlpCache {
  MatX input;
  std::vector<MatX> z;
};

/// Plain fully connected network, batch laid out as columns.
struct Mlp {
  std::vector<Linear> layers;
  Act hidden = Act::Softplus;
  Act output = Act::None;

  void init(const std::vector<int>& dims, Rng& rng, Act hidden_act, Act output_act,
            double w_scale = 1.0);
  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  MatX forward(const MatX& X, MlpCache* cache = nullptr) const;
  /// dY is the gradient w.r.t. the post-activation output. Accumulates into
  /// gW/gb and returns the gradient w.r.t. the input.
  MatX backward(const MatX& dY, const MlpCache& cache);
  /// Analytic d(output[out_index]) / d(input), one column per batch element.
  /// Reverse pass over the cached preactivations; touches no parameter grads.
  MatX input_gradient(const MlpCache& cache, int out_index) const;

  void zero_grad();
  std::vector<MatX*> params();
  std::vector<MatX*> grads();
  size_t param_count() const;
};

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;

  void add(MatX* p, MatX* g);
  void add(VecX* p, VecX* g);
  void add(Mlp& m);
  void step(double lr);
  void zero_grads();

 private:
  struct Slot {
    MatX* p;
    MatX* g;
    MatX m, v;
  };
  struct VecSlot {
    VecX* p;
    VecX* g;
    VecX m, v;
  };
  std::vector<Slot> slots_;
  std::vector<VecSlot> vslots_;
};

/// Channel-major feature map: one column per pixel (index y*width + x).
struct FeatureMap {
  int channels = 0, width = 0, height = 0;
  MatX m;

  FeatureMap() = default;
  FeatureMap(int c, int w, int h) : channels(c), width(w), height(h), m(MatX::Zero(c, w * h)) {}
};

/// 3x3 convolution, stride 1, zero padding 1. im2col + GEMM.
struct Conv3x3 {
  MatX W;  // cout x (cin*9)
  MatX b;  // cout x 1
  MatX gW, gb;

  void init(int cin, int cout, Rng& rng);
  int cin() const { return static_cast<int>(W.cols()) / 9; }
  int cout() const { return static_cast<int>(W.rows()); }

  FeatureMap forward(const FeatureMap& x, MatX* patches_cache = nullptr) const;
  FeatureMap backward(const FeatureMap& dy, const MatX& patches);
  void zero_grad();
};

MatX im2col3x3(const FeatureMap& x);
void col2im3x3_accum(const MatX& dpatches, FeatureMap& dx);

double cosine_lr(double base_lr, int64_t step, int64_t total_steps);

}  // namespace rerender::nn
