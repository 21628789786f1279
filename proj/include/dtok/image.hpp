#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dtok/tensor.hpp"

namespace dtok {

/// RGB image, row-major with interleaved channels, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // height * width * 3

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

inline constexpr std::size_t kDefaultPatchSize = 16;

/// One token per patch; each token holds patch_size^2 * 3 values (row, column, channel).
FeatureTensor extract_patches(const Image& image, std::size_t patch_size);
/// Inverse of extract_patches; values are copied unchanged (no clamping).
Image assemble_patches(const FeatureTensor& patches, std::size_t patch_size);

/// Binary PPM (P6, maxval 255). Reading maps bytes to v/255; writing clamps to
/// [0, 1] and rounds to the nearest byte.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace dtok
