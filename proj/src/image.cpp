#include "dtok/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "dtok/error.hpp"

namespace dtok {

FeatureTensor extract_patches(const Image& image, std::size_t patch_size) {
  require(patch_size > 0, ErrorCode::kInvalidArgument, "patch size must be positive");
  require(image.height % patch_size == 0 && image.width % patch_size == 0, ErrorCode::kShapeMismatch,
          "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
              " is not divisible by patch size " + std::to_string(patch_size));
  const std::size_t gh = image.height / patch_size;
  const std::size_t gw = image.width / patch_size;
  FeatureTensor out(gh, gw, patch_size * patch_size * 3);
  for (std::size_t ty = 0; ty < gh; ++ty) {
    for (std::size_t tx = 0; tx < gw; ++tx) {
      auto tok = out.token(ty * gw + tx);
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            tok[k++] = static_cast<float>(image.at(ty * patch_size + y, tx * patch_size + x, c));
    }
  }
  return out;
}

Image assemble_patches(const FeatureTensor& patches, std::size_t patch_size) {
  require(patch_size > 0 && patches.channels() == patch_size * patch_size * 3, ErrorCode::kShapeMismatch,
          "token width " + std::to_string(patches.channels()) + " does not match patch size " +
              std::to_string(patch_size));
  const std::size_t gw = patches.grid_w();
  Image img(patches.grid_h() * patch_size, gw * patch_size);
  for (std::size_t t = 0; t < patches.tokens(); ++t) {
    const std::size_t ty = t / gw;
    const std::size_t tx = t % gw;
    auto tok = patches.token(t);
    std::size_t k = 0;
    for (std::size_t y = 0; y < patch_size; ++y)
      for (std::size_t x = 0; x < patch_size; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(ty * patch_size + y, tx * patch_size + x, c) = tok[k++];
  }
  return img;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  require(header_token(in) == "P6", ErrorCode::kUnsupported, path.string() + " is not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(in));
    h = std::stoul(header_token(in));
    maxval = std::stoul(header_token(in));
  } catch (const std::exception&) {
    fail(ErrorCode::kUnsupported, path.string() + ": malformed PPM header");
  }
  require(maxval == 255, ErrorCode::kUnsupported, "only 8-bit PPM is supported");
  Image img(h, w);
  std::vector<unsigned char> bytes(h * w * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(in.gcount() == static_cast<std::streamsize>(bytes.size()), ErrorCode::kTruncated,
          path.string() + ": pixel data truncated");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(image.data[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace dtok
