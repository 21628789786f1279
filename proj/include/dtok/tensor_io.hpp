#pragma once

// Interchange format v1 (one tensor per file, all integers little-endian):
//   [0,4)   magic "DTOK"
//   [4,6)   version u16 (= 1)
//   6       kind u8   (TensorKind)
//   7       dtype u8  (DType)
//   [8,12)  rank r u32
//   r x u32 dims
//   u64     payload byte length (= product(dims) * 4)
//   payload
//
// Feature tensors use rank 3 dims [grid_h, grid_w, channels]. Composite kinds
// (codebook, pca, linear_map, continuous/discrete latents) use rank 1: the
// payload starts with kManifestSlots f32 manifest values followed by the body
// sections documented next to each type's save/load functions.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dtok/tensor.hpp"

namespace dtok {

inline constexpr std::array<char, 4> kMagic = {'D', 'T', 'O', 'K'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint32_t kMaxRank = 8;
inline constexpr std::size_t kManifestSlots = 8;

enum class TensorKind : std::uint8_t {
  kFeature = 0,
  kCodebook = 1,
  kPca = 2,
  kLinearMap = 3,
  kLatent = 4,
};

enum class DType : std::uint8_t {
  kF32 = 0,
  kU32 = 1,  // index streams only
};

/// Header plus payload as raw 32-bit words (f32 bit patterns or u32 values).
struct RawTensor {
  TensorKind kind = TensorKind::kFeature;
  DType dtype = DType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint32_t> words;

  friend bool operator==(const RawTensor&, const RawTensor&) = default;
};

std::vector<std::uint8_t> encode(const RawTensor& raw);
/// Validates magic, version, kind, dtype, rank, dims product and payload length.
RawTensor decode(std::span<const std::uint8_t> bytes);

void write_raw(const std::filesystem::path& path, const RawTensor& raw);
RawTensor read_raw(const std::filesystem::path& path);

std::vector<std::uint32_t> floats_to_words(std::span<const float> values);
/// Throws kNonFinite on NaN/Inf bit patterns.
std::vector<float> words_to_floats(std::span<const std::uint32_t> words);

using Manifest = std::array<float, kManifestSlots>;

RawTensor pack_composite(TensorKind kind, const Manifest& manifest, std::span<const float> body);
/// Returns the manifest and writes the body into `body`; checks kind and layout.
Manifest unpack_composite(const RawTensor& raw, TensorKind kind, std::vector<float>& body);

/// Reads a manifest slot that must hold a non-negative integer.
std::uint64_t manifest_count(const Manifest& m, std::size_t slot);
/// Stores a count up to 2^48 exactly across two slots (hi, lo base 2^24).
void store_wide_count(Manifest& m, std::size_t slot, std::uint64_t value);
std::uint64_t load_wide_count(const Manifest& m, std::size_t slot);

void write_tensor(const std::filesystem::path& path, const FeatureTensor& tensor);
FeatureTensor read_tensor(const std::filesystem::path& path);

// Latent manifest: [grid_h, grid_w, channels, branch_split, variant]; body = values.
void write_latent(const std::filesystem::path& path, const LatentTensor& latent);
LatentTensor read_latent(const std::filesystem::path& path);

// Index stream: kind latent, dtype u32, rank 3 dims [grid_h, grid_w, 2] with
// (semantic, texture) interleaved per token.
void write_indices(const std::filesystem::path& path, const IndexGrid& indices);
IndexGrid read_indices(const std::filesystem::path& path);

}  // namespace dtok
