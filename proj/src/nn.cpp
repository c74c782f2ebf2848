// SPDX-License-Identifier: Apache-2.0
#include "rerender/nn.hpp"

#include <cmath>

namespace rerender::nn {

MatX act_apply(Act a, const MatX& z) {
  switch (a) {
    case Act::None:
      return z;
    case Act::ReLU:
      return z.cwiseMax(0.0);
    case Act::Softplus:
      return z.unaryExpr([](double v) { return softplus(v); });
    case Act::Sigmoid:
      return z.unaryExpr([](double v) { return sigmoid(v); });
    case Act::Exp:
      return z.unaryExpr([](double v) { return std::exp(std::min(v, 30.0)); });
    case Act::Tanh:
      return z.array().tanh().matrix();
  }
  return z;
}

MatX act_deriv(Act a, const MatX& z) {
  switch (a) {
    case Act::None:
      return MatX::Ones(z.rows(), z.cols());
    case Act::ReLU:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Act::Softplus:
      return z.unaryExpr([](double v) { return sigmoid(v); });
    case Act::Sigmoid:
      return z.unaryExpr([](double v) {
        double s = sigmoid(v);
        return s * (1.0 - s);
      });
    case Act::Exp:
      return z.unaryExpr([](double v) { return std::exp(std::min(v, 30.0)); });
    case Act::Tanh: {
      MatX t = z.array().tanh().matrix();
      return (1.0 - t.array().square()).matrix();
    }
  }
  return MatX::Ones(z.rows(), z.cols());
}

void Linear::init(int in, int out, Rng& rng, double w_scale) {
  std::normal_distribution<double> dist(0.0, w_scale * std::sqrt(2.0 / in));
  W.resize(out, in);
  for (int j = 0; j < in; ++j)
    for (int i = 0; i < out; ++i) W(i, j) = dist(rng);
  b = MatX::Zero(out, 1);
  gW = MatX::Zero(out, in);
  gb = MatX::Zero(out, 1);
}

void Linear::zero_init(int in, int out) {
  W = MatX::Zero(out, in);
  b = MatX::Zero(out, 1);
  gW = MatX::Zero(out, in);
  gb = MatX::Zero(out, 1);
}

void Mlp::init(const std::vector<int>& dims, Rng& rng, Act hidden_act, Act output_act,
               double w_scale) {
  require(dims.size() >= 2, "Mlp::init: need at least input and output dims");
  hidden = hidden_act;
  output = output_act;
  layers.resize(dims.size() - 1);
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers[i].init(dims[i], dims[i + 1], rng, w_scale);
}

MatX Mlp::forward(const MatX& X, MlpCache* cache) const {
  if (cache) {
    cache->input = X;
    cache->z.resize(layers.size());
  }
  MatX h = X;
  for (size_t l = 0; l < layers.size(); ++l) {
    MatX z = (layers[l].W * h).colwise() + layers[l].b.col(0);
    if (cache) cache->z[l] = z;
    h = act_apply(l + 1 == layers.size() ? output : hidden, z);
  }
  return h;
}

MatX Mlp::backward(const MatX& dY, const MlpCache& cache) {
  MatX delta = dY.cwiseProduct(act_deriv(output, cache.z.back()));
  for (size_t l = layers.size(); l-- > 0;) {
    const MatX& h_prev = l == 0 ? cache.input : act_apply(hidden, cache.z[l - 1]);
    layers[l].gW.noalias() += delta * h_prev.transpose();
    layers[l].gb.col(0).noalias() += delta.rowwise().sum();
    if (l == 0) return layers[0].W.transpose() * delta;
    delta = (layers[l].W.transpose() * delta).cwiseProduct(act_deriv(hidden, cache.z[l - 1]));
  }
  return {};
}

MatX Mlp::input_gradient(const MlpCache& cache, int out_index) const {
  const int n = static_cast<int>(cache.input.cols());
  MatX delta = MatX::Zero(layers.back().out_dim(), n);
  MatX dact = act_deriv(output, cache.z.back());
  delta.row(out_index) = dact.row(out_index);
  for (size_t l = layers.size(); l-- > 0;) {
    if (l == 0) return layers[0].W.transpose() * delta;
    delta = (layers[l].W.transpose() * delta).cwiseProduct(act_deriv(hidden, cache.z[l - 1]));
  }
  return {};
}

void Mlp::zero_grad() {
  for (auto& l : layers) {
    l.gW.setZero();
    l.gb.setZero();
  }
}

std::vector<MatX*> Mlp::params() {
  std::vector<MatX*> out;
  for (auto& l : layers) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  return out;
}

std::vector<MatX*> Mlp::grads() {
  std::vector<MatX*> out;
  for (auto& l : layers) {
    out.push_back(&l.gW);
    out.push_back(&l.gb);
  }
  return out;
}

size_t Mlp::param_count() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.W.size() + l.b.size();
  return n;
}

void Adam::add(MatX* p, MatX* g) {
  slots_.push_back({p, g, MatX::Zero(p->rows(), p->cols()), MatX::Zero(p->rows(), p->cols())});
}

void Adam::add(VecX* p, VecX* g) {
  vslots_.push_back({p, g, VecX::Zero(p->size()), VecX::Zero(p->size())});
}

void Adam::add(Mlp& m) {
  auto ps = m.params();
  auto gs = m.grads();
  for (size_t i = 0; i < ps.size(); ++i) add(ps[i], gs[i]);
}

void Adam::step(double lr) {
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& s : slots_) {
    s.m = beta1 * s.m + (1.0 - beta1) * (*s.g);
    s.v = beta2 * s.v + (1.0 - beta2) * s.g->cwiseProduct(*s.g);
    s.p->array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
  }
  for (auto& s : vslots_) {
    s.m = beta1 * s.m + (1.0 - beta1) * (*s.g);
    s.v = beta2 * s.v + (1.0 - beta2) * s.g->cwiseProduct(*s.g);
    s.p->array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
  }
}

void Adam::zero_grads() {
  for (auto& s : slots_) s.g->setZero();
  for (auto& s : vslots_) s.g->setZero();
}

void Conv3x3::init(int cin, int cout, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * 9)));
  W.resize(cout, cin * 9);
  for (int j = 0; j < W.cols(); ++j)
    for (int i = 0; i < cout; ++i) W(i, j) = dist(rng);
  b = MatX::Zero(cout, 1);
  gW = MatX::Zero(cout, cin * 9);
  gb = MatX::Zero(cout, 1);
}

MatX im2col3x3(const FeatureMap& x) {
  const int C = x.channels, W = x.width, H = x.height;
  MatX patches(C * 9, W * H);
#pragma omp parallel for schedule(static)
  for (int py = 0; py < H; ++py) {
    for (int px = 0; px < W; ++px) {
      const int col = py * W + px;
      int r = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = px + dx, sy = py + dy;
          if (sx < 0 || sy < 0 || sx >= W || sy >= H) {
            patches.block(r, col, C, 1).setZero();
          } else {
            patches.block(r, col, C, 1) = x.m.col(sy * W + sx);
          }
          r += C;
        }
    }
  }
  return patches;
}

void col2im3x3_accum(const MatX& dpatches, FeatureMap& dx) {
  const int C = dx.channels, W = dx.width, H = dx.height;
  // Scatter transposed: for each source pixel gather the 9 contributions.
#pragma omp parallel for schedule(static)
  for (int sy = 0; sy < H; ++sy) {
    for (int sx = 0; sx < W; ++sx) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(C);
      int r = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int px = sx - dx, py = sy - dy;
          if (px >= 0 && py >= 0 && px < W && py < H) acc += dpatches.block(r, py * W + px, C, 1);
          r += C;
        }
      dx.m.col(sy * W + sx) += acc;
    }
  }
}

FeatureMap Conv3x3::forward(const FeatureMap& x, MatX* patches_cache) const {
  MatX patches = im2col3x3(x);
  FeatureMap y(cout(), x.width, x.height);
  y.m.noalias() = W * patches;
  y.m.colwise() += b.col(0);
  if (patches_cache) *patches_cache = std::move(patches);
  return y;
}

FeatureMap Conv3x3::backward(const FeatureMap& dy, const MatX& patches) {
  gW.noalias() += dy.m * patches.transpose();
  gb.col(0).noalias() += dy.m.rowwise().sum();
  MatX dpatches = W.transpose() * dy.m;
  FeatureMap dx(cin(), dy.width, dy.height);
  col2im3x3_accum(dpatches, dx);
  return dx;
}

void Conv3x3::zero_grad() {
  gW.setZero();
  gb.setZero();
}

double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  double t = std::min<double>(1.0, static_cast<double>(step) / (total_steps - 1));
  return base_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

}  // namespace rerender::nn
