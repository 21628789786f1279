#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dtok/image.hpp"
#include "dtok/pca.hpp"
#include "dtok/tensor.hpp"

namespace dtok {

// ---- distance concentration ----------------------------------------------

struct ConcentrationReport {
  std::size_t dimension = 0;
  double p = 2.0;
  std::size_t samples = 0;
  double d_max = 0.0;
  double d_min = 0.0;
  /// (d_max - d_min) / d_min; +inf when d_min == 0 (flagged degenerate).
  double relative_contrast = 0.0;
  bool degenerate = false;
};

/// L_p distances from the query to every point (rows of `points`).
ConcentrationReport concentration_stats(const FeatureTensor& points, std::span<const float> query, double p);

struct ConcentrationSweepRow {
  std::size_t dimension = 0;
  double p = 2.0;
  std::size_t samples = 0;
  std::size_t trials = 0;
  double mean_contrast = 0.0;
  bool degenerate = false;
};

/// Monte Carlo over iid U[0,1]^d point sets and queries; one row per (d, p),
/// rows ordered by p then d. Point sets are shared across p for a given (d, trial).
std::vector<ConcentrationSweepRow> concentration_sweep(std::span<const std::size_t> dims,
                                                       std::span<const double> norms, std::size_t samples,
                                                       std::size_t trials, std::uint64_t seed);

// ---- latent fidelity -------------------------------------------------------

/// Sum over tokens of 1 - cos(z_i, zhat_i). Zero-norm tokens are errors.
double cosine_similarity_loss(const FeatureTensor& z, const FeatureTensor& z_hat);
/// Sum over all token pairs (i, j), i == j included, of |cos(z_i, z_j) - cos(zhat_i, zhat_j)|.
double distance_matrix_loss(const FeatureTensor& z, const FeatureTensor& z_hat);

struct LossPair {
  double cosine = 0.0;
  double matrix = 0.0;
};

/// Both losses restricted to the top-k channels ranked by `pca`.
LossPair topk_channel_losses(const FeatureTensor& z, const FeatureTensor& z_hat, const PcaModel& pca,
                             std::size_t k);

// ---- image quality -----------------------------------------------------------

/// Returned by psnr() for identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) on the [0, 1] range.
double psnr(const Image& x, const Image& y);

inline constexpr std::size_t kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over every 8x8 window position (stride 1, uniform weights,
/// population moments), averaged over the three channels.
double ssim(const Image& x, const Image& y);

// ---- codebook health ---------------------------------------------------------

struct CodebookHealth {
  double perplexity = 0.0;   // exp(entropy of index usage), in [1, K]
  double utilization = 0.0;  // distinct codes used / K
};

CodebookHealth codebook_health(std::span<const std::uint32_t> indices, std::size_t k);

}  // namespace dtok
