// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "rerender/fields.hpp"

using namespace rerender;

TEST_CASE("zero-initialized geometry starts as the r=0.5 sphere") {
  const SceneModel model = SceneModel::create(1);
  // Head is zero-initialized; the analytic offset dominates.
  CHECK(eval_sdf(model, Vec3::Zero()) == doctest::Approx(-0.5).epsilon(1e-2));
  CHECK(eval_sdf(model, Vec3(1.0, 0, 0)) == doctest::Approx(0.5).epsilon(1e-2));
  // Out-of-bounds query is a domain error.
  CHECK_THROWS(eval_sdf(model, Vec3(2.0, 0, 0)));
}

TEST_CASE("eval_normal is the normalized gradient and matches finite differences") {
  const SceneModel model = SceneModel::create(3);
  HashRng rng(99, 0);
  for (int i = 0; i < 25; ++i) {
    const Vec3 x(0.9 * (2 * rng.next_u01() - 1), 0.9 * (2 * rng.next_u01() - 1),
                 0.9 * (2 * rng.next_u01() - 1));
    const Vec3 n = eval_normal(model, x);
    CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-9));
    const double h = 1e-4;
    Vec3 fd;
    for (int a = 0; a < 3; ++a) {
      Vec3 xp = x, xm = x;
      xp(a) += h;
      xm(a) -= h;
      fd(a) = (eval_sdf(model, xp) - eval_sdf(model, xm)) / (2 * h);
    }
    fd.normalize();
    CHECK((n - fd).norm() <= 1e-4);
  }
}

TEST_CASE("batched geometry gradients match the single-point path") {
  const SceneModel model = SceneModel::create(3);
  Mat3X xs(3, 4);
  xs << 0.2, -0.5, 0.1, 0.7, 0.1, 0.3, -0.6, 0.0, -0.3, 0.2, 0.4, -0.1;
  const GeometryEval geo = eval_geometry_batch(model, xs, true);
  for (int c = 0; c < 4; ++c) {
    CHECK(geo.sdf(c) == doctest::Approx(eval_sdf(model, xs.col(c))).epsilon(1e-12));
    const Vec3 n = eval_normal(model, xs.col(c));
    CHECK((Vec3(geo.grad.col(c)).normalized() - n).norm() <= 1e-12);
  }
}

TEST_CASE("shadow starts near 1 (final bias +3) and stays in (0,1)") {
  const SceneModel model = SceneModel::create(7);
  const VecX l_s = VecX::Zero(model.cfg.dim_ls);
  CHECK(eval_shadow(model, Vec3(0.1, 0.2, 0.3), l_s) ==
        doctest::Approx(sigmoid(3.0)).epsilon(2e-2));
  CHECK(sigmoid(3.0) == doctest::Approx(0.9525741268).epsilon(1e-9));
  HashRng rng(5, 1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x(rng.next_u01() - 0.5, rng.next_u01() - 0.5, rng.next_u01() - 0.5);
    VecX code(model.cfg.dim_ls);
    for (int k = 0; k < code.size(); ++k) code(k) = 2 * rng.next_u01() - 1;
    const double s = eval_shadow(model, x, code);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("albedo bounded in [0,1]^3, sky non-negative, unit direction enforced") {
  const SceneModel model = SceneModel::create(11);
  HashRng rng(6, 2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x(rng.next_u01() - 0.5, rng.next_u01() - 0.5, rng.next_u01() - 0.5);
    const Vec3 a = eval_albedo(model, x);
    CHECK(a.minCoeff() >= 0.0);
    CHECK(a.maxCoeff() <= 1.0);
    Vec3 v(2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1, 2 * rng.next_u01() - 1);
    v.normalize();
    VecX l_e(model.cfg.dim_le);
    for (int k = 0; k < l_e.size(); ++k) l_e(k) = 2 * rng.next_u01() - 1;
    CHECK(eval_sky(model, v, l_e).minCoeff() >= 0.0);
  }
  CHECK_THROWS(eval_sky(model, Vec3(1, 1, 0), VecX::Zero(model.cfg.dim_le)));
}

TEST_CASE("field evaluation is pure (bitwise repeatable)") {
  const SceneModel model = SceneModel::create(13);
  const Vec3 x(0.21, -0.35, 0.44);
  CHECK(eval_sdf(model, x) == eval_sdf(model, x));
  CHECK((eval_albedo(model, x) - eval_albedo(model, x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("per-frame codes are lazily created, deterministic, and seed-dependent") {
  SceneModel a = SceneModel::create(21);
  SceneModel b = SceneModel::create(21);
  const FrameCodes& ca = a.codes_for("frame_0001");
  const FrameCodes& cb = b.codes_for("frame_0001");
  CHECK(ca.l_e.size() == a.cfg.dim_le);
  CHECK((ca.l_e - cb.l_e).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ca.l_s - cb.l_s).cwiseAbs().maxCoeff() == 0.0);
  SceneModel c = SceneModel::create(22);
  CHECK((c.codes_for("frame_0001").l_e - ca.l_e).cwiseAbs().maxCoeff() > 0.0);
  // Distinct frames draw distinct codes.
  CHECK((a.codes_for("frame_0002").l_e - ca.l_e).cwiseAbs().maxCoeff() > 0.0);
  // Const lookup of an unknown frame is an error.
  const SceneModel& cref = a;
  CHECK_THROWS(cref.codes_at("never_seen"));
}

TEST_CASE("geometry checksum isolates the geometry parameters") {
  SceneModel model = SceneModel::create(31);
  const uint64_t before = model.geometry_checksum();
  model.appearance.layers[0].W(0, 0) += 1.0;
  model.tone.net.layers.back().b(0, 0) += 0.5;
  CHECK(model.geometry_checksum() == before);
  model.geometry.layers[0].W(0, 0) += 1e-12;
  CHECK(model.geometry_checksum() != before);
}

TEST_CASE("sharpness is exp-parameterized and starts at 1/0.3") {
  const SceneModel model = SceneModel::create(41);
  CHECK(model.sharpness() == doctest::Approx(1.0 / 0.3).epsilon(1e-12));
  SceneModel m2 = model;
  m2.log_sharpness += std::log(2.0);
  CHECK(m2.sharpness() == doctest::Approx(2.0 / 0.3).epsilon(1e-12));
}
