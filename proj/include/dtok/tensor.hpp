#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace dtok {

/// Grid of patch-token feature vectors, token-major and channel-minor.
/// Holds one frozen-encoder layer for one image (N = grid_h * grid_w tokens).
class FeatureTensor {
 public:
  FeatureTensor() = default;
  /// Zero-filled tensor.
  FeatureTensor(std::size_t grid_h, std::size_t grid_w, std::size_t channels);
  /// Takes ownership of data; throws on length mismatch or non-finite values.
  FeatureTensor(std::size_t grid_h, std::size_t grid_w, std::size_t channels,
                std::vector<float> data);

  std::size_t grid_h() const noexcept { return grid_h_; }
  std::size_t grid_w() const noexcept { return grid_w_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t tokens() const noexcept { return grid_h_ * grid_w_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> token(std::size_t i) const noexcept {
    return {data_.data() + i * channels_, channels_};
  }
  std::span<float> token(std::size_t i) noexcept { return {data_.data() + i * channels_, channels_}; }

  /// Throws kNonFinite when any value is NaN or Inf.
  void validate() const;

  bool same_grid(const FeatureTensor& other) const noexcept {
    return grid_h_ == other.grid_h_ && grid_w_ == other.grid_w_;
  }

  friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;

 private:
  std::size_t grid_h_ = 0;
  std::size_t grid_w_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

/// Concatenates several tensors' tokens into one 1 x N tensor (all must share channels).
FeatureTensor concat_tokens(std::span<const FeatureTensor> parts);

enum class LatentVariant : std::uint8_t { kContinuous = 0, kDiscrete = 1 };

/// Dual-branch latent: per token [deep ; shallow], split at branch_split.
struct LatentTensor {
  FeatureTensor values;
  std::size_t branch_split = 0;
  LatentVariant variant = LatentVariant::kContinuous;

  std::size_t channels() const noexcept { return values.channels(); }
  /// Throws kInvalidArgument unless 0 < branch_split < channels.
  void validate() const;

  /// Deep part only (channels [0, branch_split)).
  FeatureTensor deep_branch() const;
  /// Shallow part only (channels [branch_split, channels)).
  FeatureTensor shallow_branch() const;

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;
};

/// Per-token code ids for both branches, laid out on the token grid.
struct IndexGrid {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::uint32_t> semantic;
  std::vector<std::uint32_t> texture;

  std::size_t tokens() const noexcept { return grid_h * grid_w; }
  friend bool operator==(const IndexGrid&, const IndexGrid&) = default;
};

}  // namespace dtok
