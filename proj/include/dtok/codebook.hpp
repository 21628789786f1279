#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dtok/pca.hpp"
#include "dtok/tensor.hpp"

namespace dtok {

enum class CodebookRole : std::uint8_t { kSemantic = 0, kTexture = 1 };

inline constexpr double kDefaultBeta = 0.25;
inline constexpr std::size_t kDefaultCodebookSize = 16384;
inline constexpr double kDefaultDecay = 0.99;
inline constexpr double kSmoothingEpsilon = 1e-5;
inline constexpr double kDefaultDeadThreshold = 1.0;

/// K x D table of code vectors plus EMA training state.
struct Codebook {
  CodebookRole role = CodebookRole::kTexture;
  std::size_t size = 0;  // K
  std::size_t dim = 0;   // D
  std::vector<float> entries;     // K x D
  std::vector<float> ema_counts;  // K
  std::vector<float> ema_sums;    // K x D
  double dead_threshold = kDefaultDeadThreshold;
  std::uint64_t epoch = 0;

  /// EMA state starts as one observation of each entry.
  static Codebook from_entries(CodebookRole role, std::size_t size, std::size_t dim, std::vector<float> entries);

  std::span<const float> entry(std::size_t k) const {
    return std::span<const float>(entries).subspan(k * dim, dim);
  }
  void validate() const;

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct Lookup {
  std::uint32_t index = 0;
  double distance = 0.0;
};

/// argmin_k sum_c (w_c * (x_c - e_kc))^2; lowest index on ties.
Lookup weighted_lookup(std::span<const float> token, const Codebook& book, const ChannelWeights& weights);
/// argmin_k ||x - e_k||^2; lowest index on ties.
Lookup plain_lookup(std::span<const float> token, const Codebook& book);

struct Assignment {
  std::vector<std::uint32_t> index;
  std::vector<double> distance;
};

/// Batch lookup over all tokens of a tensor; weights == nullptr selects plain L2.
Assignment assign(const FeatureTensor& tokens, const Codebook& book, const ChannelWeights* weights);

struct QuantizationResult {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::uint32_t> semantic_indices;
  std::vector<std::uint32_t> texture_indices;
  FeatureTensor semantic_codes;
  FeatureTensor texture_codes;
  std::vector<double> semantic_distances;
  std::vector<double> texture_distances;

  std::size_t tokens() const noexcept { return grid_h * grid_w; }
  IndexGrid index_grid() const { return {grid_h, grid_w, semantic_indices, texture_indices}; }
};

/// Weighted lookup of deep tokens in the semantic book and plain lookup of
/// shallow-branch tokens in the texture book, token by token.
QuantizationResult quantize_dual(const FeatureTensor& deep, const FeatureTensor& shallow, const Codebook& semantic,
                                 const Codebook& texture, const ChannelWeights& weights);

/// Greedy k-means++ seeding (2 + ln K candidates per step) over the sample,
/// under the weighted metric when weights are given. With restarts > 1 the
/// seeding with the lowest total squared distance is kept.
Codebook init_codebook(const FeatureTensor& sample, std::size_t k, std::uint64_t seed, CodebookRole role,
                       const ChannelWeights* weights = nullptr, std::size_t restarts = 1);

struct EpochStats {
  std::uint64_t epoch = 0;  // 1-based index of the finished epoch
  double mean_error = 0.0;
  double perplexity = 0.0;
  double utilization = 0.0;
  std::size_t dead_entries = 0;
  std::size_t reseeded = 0;
};

struct TrainedEpoch {
  Codebook book;
  EpochStats stats;
};

/// One EMA pass over the dataset. Semantic books require weights and use the
/// weighted assignment, but average raw tokens. Entries used fewer than
/// dead_threshold times are re-seeded from high-error tokens using a stream
/// derived from (seed, epoch).
TrainedEpoch train_codebook_epoch(Codebook book, const FeatureTensor& dataset, const ChannelWeights* weights,
                                  double decay, std::uint64_t seed);

/// Codebook and commitment terms, each averaged over tokens. Stop-gradient
/// does not change values, so the terms are reported separately for a trainer.
struct VqLosses {
  double beta = kDefaultBeta;
  double semantic_codebook = 0.0;
  double semantic_commitment = 0.0;
  double texture_codebook = 0.0;
  double texture_commitment = 0.0;

  double semantic() const { return semantic_codebook + beta * semantic_commitment; }
  double texture() const { return texture_codebook + beta * texture_commitment; }
  double total() const { return semantic() + texture(); }
};

VqLosses vq_losses(const FeatureTensor& deep, const FeatureTensor& shallow, const QuantizationResult& result,
                   const ChannelWeights& weights, double beta = kDefaultBeta);

// File layout (kind codebook). Manifest: [role, K, D, dead_threshold, epoch_hi, epoch_lo];
// body: entries[K*D], ema_counts[K], ema_sums[K*D].
void save_codebook(const std::filesystem::path& path, const Codebook& book);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace dtok
