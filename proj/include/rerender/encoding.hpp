// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rerender/core.hpp"

namespace rerender {

struct EncodingSpec {
  int num_freqs = 0;
  bool include_input = true;

  int out_dim() const { return (include_input ? 3 : 0) + 6 * num_freqs; }
  bool valid() const { return num_freqs >= 0; }
};

/// Frequency encoding: [x?, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x),
/// cos(2^{L-1} pi x)], each term a 3-vector applied per axis.
VecX positional_encode(const Vec3& x, const EncodingSpec& spec);
MatX positional_encode_batch(const Mat3X& xs, const EncodingSpec& spec);

/// Chain rule through the encoding: given d(loss)/d(encoding) per column,
/// returns d(loss)/d(x) per column.
Mat3X encoding_backward(const EncodingSpec& spec, const Mat3X& xs, const MatX& d_enc);

}  // namespace rerender
