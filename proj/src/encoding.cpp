// SPDX-License-Identifier: Apache-2.0
#include "rerender/encoding.hpp"

namespace rerender {

MatX positional_encode_batch(const Mat3X& xs, const EncodingSpec& spec) {
  require(spec.valid(), "positional_encode: invalid spec");
  const int n = static_cast<int>(xs.cols());
  MatX out(spec.out_dim(), n);
  int row = 0;
  if (spec.include_input) {
    out.topRows(3) = xs;
    row = 3;
  }
  double freq = kPi;  // 2^0 * pi
  for (int l = 0; l < spec.num_freqs; ++l) {
    out.middleRows(row, 3) = (xs.array() * freq).sin();
    out.middleRows(row + 3, 3) = (xs.array() * freq).cos();
    row += 6;
    freq *= 2.0;
  }
  return out;
}

VecX positional_encode(const Vec3& x, const EncodingSpec& spec) {
  Mat3X xs(3, 1);
  xs.col(0) = x;
  return positional_encode_batch(xs, spec).col(0);
}

Mat3X encoding_backward(const EncodingSpec& spec, const Mat3X& xs, const MatX& d_enc) {
  const int n = static_cast<int>(xs.cols());
  Mat3X dx = Mat3X::Zero(3, n);
  int row = 0;
  if (spec.include_input) {
    dx = d_enc.topRows(3);
    row = 3;
  }
  double freq = kPi;
  for (int l = 0; l < spec.num_freqs; ++l) {
    // d sin(f x)/dx = f cos(f x); d cos(f x)/dx = -f sin(f x)
    dx.array() += freq * (xs.array() * freq).cos() * d_enc.middleRows(row, 3).array();
    dx.array() -= freq * (xs.array() * freq).sin() * d_enc.middleRows(row + 3, 3).array();
    row += 6;
    freq *= 2.0;
  }
  return dx;
}

}  // namespace rerender
