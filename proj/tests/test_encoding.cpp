// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "rerender/encoding.hpp"

using namespace rerender;

TEST_CASE("zero input: sines 0, cosines 1, identity part 0") {
  EncodingSpec spec{2, true};
  const VecX enc = positional_encode(Vec3::Zero(), spec);
  REQUIRE(enc.size() == spec.out_dim());
  for (int i = 0; i < 3; ++i) CHECK(enc(i) == 0.0);
  for (int f = 0; f < 2; ++f)
    for (int a = 0; a < 3; ++a) {
      CHECK(enc(3 + 6 * f + a) == 0.0);      // sin slots
      CHECK(enc(3 + 6 * f + 3 + a) == 1.0);  // cos slots
    }
}

TEST_CASE("L=0 with input is the identity") {
  EncodingSpec spec{0, true};
  const Vec3 x(0.3, -0.7, 1.2);
  const VecX enc = positional_encode(x, spec);
  REQUIRE(enc.size() == 3);
  CHECK(enc(0) == x.x());
  CHECK(enc(1) == x.y());
  CHECK(enc(2) == x.z());
}

TEST_CASE("first-axis sine slot hits 1 at x=0.5, L=1") {
  EncodingSpec spec{1, true};
  const VecX enc = positional_encode(Vec3(0.5, 0, 0), spec);
  CHECK(enc(3) == doctest::Approx(std::sin(kPi * 0.5)).epsilon(1e-15));
  CHECK(enc(3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dimensionality formula holds for all (L, include_input)") {
  for (int L = 0; L <= 10; ++L)
    for (bool inc : {false, true}) {
      EncodingSpec spec{L, inc};
      CHECK(spec.out_dim() == (inc ? 3 : 0) + 6 * L);
      CHECK(positional_encode(Vec3(0.1, 0.2, 0.3), spec).size() == spec.out_dim());
    }
}

TEST_CASE("batch encoding matches single encoding") {
  EncodingSpec spec{4, true};
  Mat3X xs(3, 3);
  xs << 0.1, -0.4, 0.9, 0.2, 0.5, -0.6, 0.3, -0.1, 0.0;
  const MatX batch = positional_encode_batch(xs, spec);
  for (int c = 0; c < 3; ++c) {
    const VecX single = positional_encode(xs.col(c), spec);
    CHECK((batch.col(c) - single).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("encoding backward matches finite differences") {
  EncodingSpec spec{3, true};
  Mat3X xs(3, 2);
  xs << 0.15, -0.3, 0.45, 0.2, -0.25, 0.6;
  // loss = sum of encoding entries
  const MatX d_enc = MatX::Ones(spec.out_dim(), 2);
  const Mat3X dx = encoding_backward(spec, xs, d_enc);
  const double eps = 1e-6;
  for (int c = 0; c < 2; ++c)
    for (int a = 0; a < 3; ++a) {
      Mat3X xp = xs, xm = xs;
      xp(a, c) += eps;
      xm(a, c) -= eps;
      const double fd = (positional_encode_batch(xp, spec).col(c).sum() -
                         positional_encode_batch(xm, spec).col(c).sum()) /
                        (2 * eps);
      CHECK(dx(a, c) == doctest::Approx(fd).epsilon(1e-6));
    }
}
