// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rerender {

/// Minimal OpenEXR scanline I/O: single-part, uncompressed, 32-bit float
/// channels. Covers everything this project writes (rgb images, env maps,
/// multi-layer aux outputs); rejects files it cannot represent.
struct ExrImage {
  int width = 0;
  int height = 0;
  std::map<std::string, std::vector<float>> channels;  // each width*height, row-major
};

void write_exr(const std::string& path, int width, int height,
               const std::vector<std::pair<std::string, const float*>>& channels);

ExrImage read_exr(const std::string& path);

}  // namespace rerender
