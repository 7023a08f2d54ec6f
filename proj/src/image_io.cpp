#include "chimle/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace chimle {

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string t;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(static_cast<char>(ch));
  }
  return t;
}

}  // namespace

void write_pnm(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || (chw.shape[0] != 1 && chw.shape[0] != 3)) {
    throw DimensionError("write_pnm: expected [1|3,h,w], got " + shape_str(chw.shape));
  }
  const std::size_t c = chw.shape[0], h = chw.shape[1], w = chw.shape[2];
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageIoError("cannot open " + path.string() + " for writing");
  f << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<char> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        buf[(y * w + x) * c + ch] = static_cast<char>(to_byte(chw.data[(ch * h + y) * w + x]));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw ImageIoError("failed writing " + path.string());
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path.string());
  const std::string magic = token(f);
  if (magic != "P5" && magic != "P6") throw ImageIoError(path.string() + ": not a binary PGM/PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token(f));
    h = std::stoul(token(f));
    maxval = std::stoul(token(f));
  } catch (const std::exception&) {
    throw ImageIoError(path.string() + ": malformed header");
  }
  if (maxval != 255 || w == 0 || h == 0) throw ImageIoError(path.string() + ": unsupported header");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::vector<char> buf(c * h * w);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(f.gcount()) != buf.size()) throw ImageIoError(path.string() + ": truncated pixel data");
  Tensor t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        t.data[(ch * h + y) * w + x] = static_cast<float>(static_cast<std::uint8_t>(buf[(y * w + x) * c + ch])) / 255.0f;
  return t;
}

Tensor quantize8(const Tensor& chw) {
  Tensor q = chw;
  q.requires_grad = false;
  q.grad.clear();
  for (float& v : q.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return q;
}

Tensor tile_images(const std::vector<Tensor>& images, std::size_t cols) {
  if (images.empty() || cols == 0) throw ContractError("tile_images: nothing to tile");
  const Shape& s = images[0].shape;
  const std::size_t c = s.at(0), h = s.at(1), w = s.at(2);
  const std::size_t rows = (images.size() + cols - 1) / cols;
  const std::size_t H = rows * (h + 1) - 1, W = cols * (w + 1) - 1;
  Tensor grid({c, H, W}, 1.0f);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape != s) throw DimensionError("tile_images: mixed image shapes");
    const std::size_t oy = (i / cols) * (h + 1), ox = (i % cols) * (w + 1);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          grid.data[(ch * H + oy + y) * W + ox + x] = images[i].data[(ch * h + y) * w + x];
  }
  return grid;
}

}  // namespace chimle
