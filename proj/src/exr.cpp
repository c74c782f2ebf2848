// SPDX-License-Identifier: Apache-2.0
#include "rerender/exr.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rerender {

namespace {

constexpr int32_t kMagic = 20000630;

void put_i32(std::string& out, int32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_f32(std::string& out, float v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void put_attr(std::string& out, const char* name, const char* type, const std::string& data) {
  out.append(name, std::strlen(name) + 1);
  out.append(type, std::strlen(type) + 1);
  put_i32(out, static_cast<int32_t>(data.size()));
  out.append(data);
}

struct Reader {
  std::vector<char> buf;
  size_t pos = 0;

  explicit Reader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("exr: cannot open " + path);
    f.seekg(0, std::ios::end);
    buf.resize(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("exr: truncated file");
  }
  int32_t i32() {
    need(4);
    int32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string cstr() {
    std::string s;
    while (true) {
      need(1);
      char c = buf[pos++];
      if (c == 0) break;
      s.push_back(c);
      if (s.size() > 255) throw std::runtime_error("exr: unterminated string");
    }
    return s;
  }
  void skip(size_t n) {
    need(n);
    pos += n;
  }
};

}  // namespace

void write_exr(const std::string& path, int width, int height,
               const std::vector<std::pair<std::string, const float*>>& channels) {
  if (width <= 0 || height <= 0 || channels.empty())
    throw std::invalid_argument("exr: empty image");

  // EXR requires the channel list sorted by name.
  std::vector<size_t> order(channels.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return channels[a].first < channels[b].first; });

  std::string chlist;
  for (size_t i : order) {
    chlist.append(channels[i].first.c_str(), channels[i].first.size() + 1);
    put_i32(chlist, 2);  // FLOAT
    chlist.push_back(1); // pLinear
    chlist.append(3, '\0');
    put_i32(chlist, 1);  // xSampling
    put_i32(chlist, 1);  // ySampling
  }
  chlist.push_back('\0');

  std::string box;
  put_i32(box, 0);
  put_i32(box, 0);
  put_i32(box, width - 1);
  put_i32(box, height - 1);

  std::string header;
  put_attr(header, "channels", "chlist", chlist);
  header.append("compression", 12);
  header.append("compression", 12);
  put_i32(header, 1);
  header.push_back('\0');  // NO_COMPRESSION
  put_attr(header, "dataWindow", "box2i", box);
  put_attr(header, "displayWindow", "box2i", box);
  header.append("lineOrder", 10);
  header.append("lineOrder", 10);
  put_i32(header, 1);
  header.push_back('\0');  // INCREASING_Y
  std::string f1;
  put_f32(f1, 1.0f);
  put_attr(header, "pixelAspectRatio", "float", f1);
  std::string v2;
  put_f32(v2, 0.0f);
  put_f32(v2, 0.0f);
  put_attr(header, "screenWindowCenter", "v2f", v2);
  put_attr(header, "screenWindowWidth", "float", f1);
  header.push_back('\0');

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("exr: cannot write " + path);
  int32_t magic = kMagic, version = 2;
  f.write(reinterpret_cast<const char*>(&magic), 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));

  const size_t nch = channels.size();
  const uint64_t table_start = 8 + header.size();
  const uint64_t data_start = table_start + 8ull * height;
  const uint64_t line_bytes = 8 + 4ull * width * nch;
  for (int y = 0; y < height; ++y) put_u64(f, data_start + line_bytes * y);

  std::vector<float> row(width);
  for (int y = 0; y < height; ++y) {
    int32_t yy = y, bytes = static_cast<int32_t>(4ull * width * nch);
    f.write(reinterpret_cast<const char*>(&yy), 4);
    f.write(reinterpret_cast<const char*>(&bytes), 4);
    for (size_t i : order) {
      const float* src = channels[i].second + static_cast<size_t>(y) * width;
      f.write(reinterpret_cast<const char*>(src), 4ll * width);
    }
  }
  if (!f) throw std::runtime_error("exr: write failed for " + path);
}

ExrImage read_exr(const std::string& path) {
  Reader r(path);
  if (r.i32() != kMagic) throw std::runtime_error("exr: bad magic in " + path);
  int32_t version = r.i32();
  if ((version & 0xff) != 2 || (version & 0x200))
    throw std::runtime_error("exr: unsupported version/tiled file " + path);

  struct Ch {
    std::string name;
    int32_t type;
  };
  std::vector<Ch> chans;
  int32_t xmin = 0, ymin = 0, xmax = -1, ymax = -1;
  uint8_t compression = 255;

  while (true) {
    std::string name = r.cstr();
    if (name.empty()) break;
    std::string type = r.cstr();
    int32_t size = r.i32();
    size_t end = r.pos + static_cast<size_t>(size);
    if (name == "channels" && type == "chlist") {
      while (true) {
        std::string cn = r.cstr();
        if (cn.empty()) break;
        Ch c{cn, r.i32()};
        r.skip(4);  // pLinear + reserved
        r.skip(8);  // samplings
        chans.push_back(c);
      }
    } else if (name == "dataWindow" && type == "box2i") {
      xmin = r.i32();
      ymin = r.i32();
      xmax = r.i32();
      ymax = r.i32();
    } else if (name == "compression" && type == "compression") {
      compression = r.u8();
    } else {
      r.skip(static_cast<size_t>(size));
    }
    r.pos = end;
  }

  if (compression != 0) throw std::runtime_error("exr: only uncompressed files supported: " + path);
  for (const auto& c : chans)
    if (c.type != 2) throw std::runtime_error("exr: only FLOAT channels supported: " + path);

  ExrImage img;
  img.width = xmax - xmin + 1;
  img.height = ymax - ymin + 1;
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error("exr: bad data window");
  for (const auto& c : chans)
    img.channels[c.name].assign(static_cast<size_t>(img.width) * img.height, 0.0f);

  r.skip(8ull * img.height);  // offset table; blocks follow contiguously
  for (int row = 0; row < img.height; ++row) {
    int32_t y = r.i32() - ymin;
    int32_t bytes = r.i32();
    if (y < 0 || y >= img.height || bytes != static_cast<int32_t>(4ull * img.width * chans.size()))
      throw std::runtime_error("exr: unexpected scanline block");
    for (const auto& c : chans) {
      float* dst = img.channels[c.name].data() + static_cast<size_t>(y) * img.width;
      r.need(4ull * img.width);
      std::memcpy(dst, r.buf.data() + r.pos, 4ull * img.width);
      r.pos += 4ull * img.width;
    }
  }
  return img;
}

}  // namespace rerender
