#pragma once

#include <filesystem>

#include "chimle/tensor.hpp"

namespace chimle {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (1 channel) or PPM (3 channels), 8-bit. Values are clamped to
/// [0,1] and rounded to the nearest level.
void write_pnm(const std::filesystem::path& path, const Tensor& chw);
Tensor read_pnm(const std::filesystem::path& path);

/// What a write/read round trip returns for `chw`.
Tensor quantize8(const Tensor& chw);

/// Tiles images [c,h,w] (same shape) into a grid with `cols` columns and a 1px gap.
Tensor tile_images(const std::vector<Tensor>& images, std::size_t cols);

}  // namespace chimle
