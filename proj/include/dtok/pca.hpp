#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dtok/tensor.hpp"

namespace dtok {

/// Streaming first/second moments: token count, per-channel sums and the
/// (upper-triangular) sum of outer products. Mergeable across workers.
class CovarianceAccumulator {
 public:
  CovarianceAccumulator() = default;
  explicit CovarianceAccumulator(std::size_t channels);

  std::size_t channels() const noexcept { return channels_; }
  std::uint64_t count() const noexcept { return count_; }
  std::span<const double> sum() const noexcept { return sum_; }
  /// channels x channels, row-major; only i <= j is populated.
  std::span<const double> outer_upper() const noexcept { return outer_; }

  void add(const FeatureTensor& tensor);
  void add_rows(std::span<const float> rows, std::size_t n);
  void merge(const CovarianceAccumulator& other);

  /// Unbiased sample covariance (full symmetric, row-major).
  std::vector<double> covariance() const;
  std::vector<double> mean() const;

 private:
  std::size_t channels_ = 0;
  std::uint64_t count_ = 0;
  std::vector<double> sum_;
  std::vector<double> outer_;
};

CovarianceAccumulator pca_accumulate(CovarianceAccumulator state, const FeatureTensor& tensor);
CovarianceAccumulator merge(const CovarianceAccumulator& a, const CovarianceAccumulator& b);

struct PcaModel {
  std::size_t channels = 0;
  std::vector<double> mean;
  std::vector<double> eigenvalues;        // non-increasing, clamped at 0
  std::vector<double> components;         // channels x channels, rows are directions
  std::vector<double> channel_variances;  // covariance diagonal, original channel basis
  std::uint64_t sample_count = 0;

  std::span<const double> component(std::size_t i) const {
    return std::span<const double>(components).subspan(i * channels, channels);
  }
};

/// Eigenvalues below this fraction of the largest are treated as zero.
inline constexpr double kEigenClampRatio = 1e-12;

PcaModel pca_finalize(const CovarianceAccumulator& state);

/// Non-negative channel weights summing to one.
struct ChannelWeights {
  std::vector<double> weights;

  std::size_t size() const noexcept { return weights.size(); }
  static ChannelWeights uniform(std::size_t channels);
  /// Normalizes arbitrary non-negative values; kDegenerate when they sum to zero.
  static ChannelWeights from_values(std::span<const double> values);
};

/// w_c = var_c / sum var, from per-channel variances in the original basis.
ChannelWeights channel_weights(const PcaModel& model);

/// Channel indices by descending per-channel variance, ties by ascending index.
std::vector<std::size_t> rank_channels(const PcaModel& model);
std::vector<std::size_t> rank_by_value(std::span<const double> values);

/// Keeps the listed channels in the given order; indices must be valid and distinct.
FeatureTensor select_channels(const FeatureTensor& tensor, std::span<const std::size_t> indices);

/// Per-image variant: channels ranked by this tensor's own per-channel variance.
/// Diagnostic only; quantization always uses the global model.
std::vector<std::size_t> per_image_top_channels(const FeatureTensor& tensor, std::size_t k);

/// Fraction of per-image top-k lists that contain `channel`.
double channel_presence_rate(std::span<const std::vector<std::size_t>> per_image_tops, std::size_t channel);

// File layout (kind pca). Model manifest: [C, count_hi, count_lo, 0];
// body: mean[C], eigenvalues[C], channel_variances[C], components[C*C].
// Weights manifest: [C, 0, 0, 1]; body: weights[C].
void save_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca(const std::filesystem::path& path);
void save_weights(const std::filesystem::path& path, const ChannelWeights& weights);
ChannelWeights load_weights(const std::filesystem::path& path);

}  // namespace dtok
