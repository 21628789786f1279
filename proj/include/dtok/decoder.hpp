#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dtok/image.hpp"
#include "dtok/latent.hpp"
#include "dtok/pca.hpp"
#include "dtok/tensor.hpp"

namespace dtok {

/// Accumulated normal equations for a per-token affine regression from
/// latent vectors to target vectors. Mergeable across workers.
class NormalEquations {
 public:
  NormalEquations() = default;
  NormalEquations(std::size_t latent_dim, std::size_t target_dim);

  std::size_t latent_dim() const noexcept { return latent_dim_; }
  std::size_t target_dim() const noexcept { return target_dim_; }
  std::uint64_t count() const noexcept { return stats_.count(); }

  /// Latents and targets must share the token grid.
  void add(const FeatureTensor& latents, const FeatureTensor& targets);
  void merge(const NormalEquations& other);

  /// Mean diagonal of the centered latent scatter matrix.
  double mean_latent_scatter() const;

  const CovarianceAccumulator& joint() const noexcept { return stats_; }

 private:
  std::size_t latent_dim_ = 0;
  std::size_t target_dim_ = 0;
  CovarianceAccumulator stats_;  // over [latent ; target]
};

/// Closed-form linear decoder from latent tokens to patch pixels.
struct RidgeDecoder {
  LinearMap map;
  double ridge_lambda = 0.0;
  std::size_t patch_size = kDefaultPatchSize;  // 0 for generic (non-image) targets
};

inline constexpr double kDefaultRelativeLambda = 1e-3;

/// lambda = rel * mean diagonal of the centered latent scatter.
double relative_lambda(const NormalEquations& eq, double rel = kDefaultRelativeLambda);

/// argmin_{W,b} sum ||t - (W z + b)||^2 + lambda ||W||_F^2 (bias unpenalized).
/// kSingular when lambda == 0 and the centered scatter is rank deficient.
RidgeDecoder fit_ridge(const NormalEquations& eq, double lambda, std::size_t patch_size);
RidgeDecoder fit_ridge(const std::vector<FeatureTensor>& latents, const std::vector<FeatureTensor>& targets,
                       double lambda, std::size_t patch_size);

/// Per-token affine outputs before clamping, on the latent grid.
FeatureTensor predict_patches(const RidgeDecoder& decoder, const FeatureTensor& latent);
/// Patches laid out at patch_size stride, clamped to [0, 1].
Image decode(const RidgeDecoder& decoder, const FeatureTensor& latent);
Image decode(const RidgeDecoder& decoder, const LatentTensor& latent);

/// Mean over tokens and outputs of the squared residual (unclamped).
double mean_squared_residual(const RidgeDecoder& decoder, const FeatureTensor& latents, const FeatureTensor& targets);

void save_decoder(const std::filesystem::path& path, const RidgeDecoder& decoder);
RidgeDecoder load_decoder(const std::filesystem::path& path);

}  // namespace dtok
