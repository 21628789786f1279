#include "dtok/tensor.hpp"

#include <cmath>
#include <string>

#include "dtok/error.hpp"

namespace dtok {

FeatureTensor::FeatureTensor(std::size_t grid_h, std::size_t grid_w, std::size_t channels)
    : grid_h_(grid_h), grid_w_(grid_w), channels_(channels), data_(grid_h * grid_w * channels, 0.0f) {}

FeatureTensor::FeatureTensor(std::size_t grid_h, std::size_t grid_w, std::size_t channels,
                             std::vector<float> data)
    : grid_h_(grid_h), grid_w_(grid_w), channels_(channels), data_(std::move(data)) {
  require(data_.size() == grid_h_ * grid_w_ * channels_, ErrorCode::kShapeMismatch,
          "feature data length " + std::to_string(data_.size()) + " != " +
              std::to_string(grid_h_) + "x" + std::to_string(grid_w_) + "x" +
              std::to_string(channels_));
  validate();
}

void FeatureTensor::validate() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      fail(ErrorCode::kNonFinite, "value at flat index " + std::to_string(i) + " is not finite");
    }
  }
}

FeatureTensor concat_tokens(std::span<const FeatureTensor> parts) {
  require(!parts.empty(), ErrorCode::kEmpty, "no tensors to concatenate");
  const std::size_t channels = parts.front().channels();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.channels() == channels, ErrorCode::kShapeMismatch,
            "channel mismatch while concatenating tokens");
    total += p.tokens();
  }
  std::vector<float> data;
  data.reserve(total * channels);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return FeatureTensor(1, total, channels, std::move(data));
}

void LatentTensor::validate() const {
  require(branch_split > 0 && branch_split < values.channels(), ErrorCode::kInvalidArgument,
          "branch_split " + std::to_string(branch_split) + " outside (0, " +
              std::to_string(values.channels()) + ")");
  values.validate();
}

namespace {

FeatureTensor slice_channels(const FeatureTensor& t, std::size_t begin, std::size_t end) {
  const std::size_t width = end - begin;
  FeatureTensor out(t.grid_h(), t.grid_w(), width);
  for (std::size_t i = 0; i < t.tokens(); ++i) {
    auto src = t.token(i);
    auto dst = out.token(i);
    for (std::size_t c = 0; c < width; ++c) dst[c] = src[begin + c];
  }
  return out;
}

}  // namespace

FeatureTensor LatentTensor::deep_branch() const { return slice_channels(values, 0, branch_split); }

FeatureTensor LatentTensor::shallow_branch() const {
  return slice_channels(values, branch_split, values.channels());
}

}  // namespace dtok
