// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace rerender {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix3Xd;

inline constexpr double kPi = 3.14159265358979323846;

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Stateless counter-based hash (splitmix64). Used wherever a result must be
/// a pure function of ids (e.g. per-pixel sampling jitter) so that outputs do
/// not depend on chunking or worker count.
inline uint64_t hash_u64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
  return hash_u64(seed ^ (v + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2)));
}

/// Deterministic per-item RNG stream derived from (seed, id).
class HashRng {
 public:
  HashRng(uint64_t seed, uint64_t id) : state_(hash_combine(seed, id)) {}
  uint64_t next_u64() {
    state_ = hash_u64(state_);
    return state_;
  }
  double next_u01() { return (next_u64() >> 11) * 0x1.0p-53; }

 private:
  uint64_t state_;
};

/// Seeded RNG for single-writer contexts (training loops, dataset generation).
using Rng = std::mt19937_64;

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace rerender
