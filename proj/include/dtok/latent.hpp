#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dtok/codebook.hpp"
#include "dtok/pca.hpp"
#include "dtok/tensor.hpp"

namespace dtok {

/// Affine map y = A x + b with A stored out_dim x in_dim, row-major.
struct LinearMap {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<float> matrix;
  std::vector<float> bias;

  static LinearMap identity(std::size_t dim);
  void validate() const;

  std::vector<double> apply(std::span<const float> x) const;
  /// Token-wise application; output keeps the input grid.
  FeatureTensor apply(const FeatureTensor& x) const;

  friend bool operator==(const LinearMap&, const LinearMap&) = default;
};

inline constexpr std::size_t kDefaultProjectionDim = 64;

struct ProjectionFit {
  LinearMap map;
  /// Number of rows backed by a non-zero eigenvalue; rows past it are zero.
  std::size_t rank = 0;
};

/// PCA projection onto the top target_dim principal directions:
/// matrix = top components, bias = -components * mean.
ProjectionFit fit_projection(const CovarianceAccumulator& shallow_stats, std::size_t target_dim);
ProjectionFit fit_projection(const FeatureTensor& shallow_dataset, std::size_t target_dim);

/// Per token [deep ; proj(shallow)]; branch_split = deep channels.
LatentTensor assemble_ae_latent(const FeatureTensor& deep, const FeatureTensor& shallow, const LinearMap& proj);

/// Per token [semantic entry ; texture entry] looked up from the index streams.
LatentTensor assemble_vq_latent(const QuantizationResult& result, const Codebook& semantic, const Codebook& texture);
LatentTensor assemble_vq_latent(const IndexGrid& indices, const Codebook& semantic, const Codebook& texture);

// File layout (kind linear_map). Manifest: [in_dim, out_dim, patch_size, ridge_lambda];
// body: matrix[out*in], bias[out]. patch_size is 0 for plain maps.
void save_linear_map(const std::filesystem::path& path, const LinearMap& map, std::size_t patch_size = 0,
                     double ridge_lambda = 0.0);
struct StoredLinearMap {
  LinearMap map;
  std::size_t patch_size = 0;
  double ridge_lambda = 0.0;
};
StoredLinearMap load_linear_map(const std::filesystem::path& path);

}  // namespace dtok
