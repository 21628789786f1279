#include "dtok/decoder.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "dtok/error.hpp"

namespace dtok {

NormalEquations::NormalEquations(std::size_t latent_dim, std::size_t target_dim)
    : latent_dim_(latent_dim), target_dim_(target_dim), stats_(latent_dim + target_dim) {
  require(latent_dim > 0 && target_dim > 0, ErrorCode::kInvalidArgument, "regression needs positive dimensions");
}

void NormalEquations::add(const FeatureTensor& latents, const FeatureTensor& targets) {
  require(latents.tokens() == targets.tokens(), ErrorCode::kShapeMismatch,
          "latent tokens " + std::to_string(latents.tokens()) + " != target tokens " +
              std::to_string(targets.tokens()));
  require(latents.channels() == latent_dim_ && targets.channels() == target_dim_, ErrorCode::kShapeMismatch,
          "latent/target widths do not match the normal equations");
  const std::size_t width = latent_dim_ + target_dim_;
  std::vector<float> rows(latents.tokens() * width);
  for (std::size_t i = 0; i < latents.tokens(); ++i) {
    auto z = latents.token(i);
    auto t = targets.token(i);
    float* dst = rows.data() + i * width;
    std::copy(z.begin(), z.end(), dst);
    std::copy(t.begin(), t.end(), dst + latent_dim_);
  }
  stats_.add_rows(rows, latents.tokens());
}

void NormalEquations::merge(const NormalEquations& other) {
  require(other.latent_dim_ == latent_dim_ && other.target_dim_ == target_dim_, ErrorCode::kShapeMismatch,
          "cannot merge normal equations of different shapes");
  stats_.merge(other.stats_);
}

namespace {

// Centered scatter of the joint vector: sum (u - mean)(u - mean)^T.
Eigen::MatrixXd centered_scatter(const CovarianceAccumulator& s) {
  const auto c = static_cast<Eigen::Index>(s.channels());
  const double n = static_cast<double>(s.count());
  const auto sum = s.sum();
  const auto outer = s.outer_upper();
  Eigen::MatrixXd m(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = i; j < c; ++j) {
      const double v = outer[static_cast<std::size_t>(i * c + j)] - sum[i] * sum[j] / n;
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

}  // namespace

double NormalEquations::mean_latent_scatter() const {
  require(count() > 0, ErrorCode::kEmpty, "no tokens accumulated");
  const double n = static_cast<double>(count());
  const auto sum = stats_.sum();
  const auto outer = stats_.outer_upper();
  const std::size_t w = stats_.channels();
  double acc = 0.0;
  for (std::size_t i = 0; i < latent_dim_; ++i) acc += outer[i * w + i] - sum[i] * sum[i] / n;
  return acc / static_cast<double>(latent_dim_);
}

double relative_lambda(const NormalEquations& eq, double rel) {
  require(rel >= 0.0, ErrorCode::kInvalidArgument, "relative lambda must be non-negative");
  return rel * eq.mean_latent_scatter();
}

RidgeDecoder fit_ridge(const NormalEquations& eq, double lambda, std::size_t patch_size) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::kInvalidArgument, "lambda must be finite and >= 0");
  require(eq.count() > 0, ErrorCode::kEmpty, "no tokens accumulated");
  if (patch_size > 0) {
    require(eq.target_dim() == patch_size * patch_size * 3, ErrorCode::kShapeMismatch,
            "target width " + std::to_string(eq.target_dim()) + " != patch_size^2 * 3");
  }
  const auto dz = static_cast<Eigen::Index>(eq.latent_dim());
  const auto dt = static_cast<Eigen::Index>(eq.target_dim());
  const Eigen::MatrixXd s = centered_scatter(eq.joint());
  Eigen::MatrixXd szz = s.topLeftCorner(dz, dz);
  const Eigen::MatrixXd szt = s.topRightCorner(dz, dt);
  szz.diagonal().array() += lambda;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(szz);
  require(ldlt.info() == Eigen::Success, ErrorCode::kSingular, "normal matrix factorization failed");
  const auto d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  require(dmax > 0.0 && d.minCoeff() > 1e-12 * dmax, ErrorCode::kSingular,
          "normal matrix is singular at lambda=" + std::to_string(lambda) + "; retry with lambda > 0");
  const Eigen::MatrixXd wt = ldlt.solve(szt);  // dz x dt

  const double n = static_cast<double>(eq.count());
  const auto sum = eq.joint().sum();
  RidgeDecoder dec;
  dec.ridge_lambda = lambda;
  dec.patch_size = patch_size;
  dec.map.in_dim = eq.latent_dim();
  dec.map.out_dim = eq.target_dim();
  dec.map.matrix.resize(eq.latent_dim() * eq.target_dim());
  dec.map.bias.resize(eq.target_dim());
  for (Eigen::Index r = 0; r < dt; ++r) {
    double b = sum[static_cast<std::size_t>(dz + r)] / n;
    for (Eigen::Index c = 0; c < dz; ++c) {
      dec.map.matrix[static_cast<std::size_t>(r * dz + c)] = static_cast<float>(wt(c, r));
      b -= wt(c, r) * sum[static_cast<std::size_t>(c)] / n;
    }
    dec.map.bias[static_cast<std::size_t>(r)] = static_cast<float>(b);
  }
  dec.map.validate();
  return dec;
}

RidgeDecoder fit_ridge(const std::vector<FeatureTensor>& latents, const std::vector<FeatureTensor>& targets,
                       double lambda, std::size_t patch_size) {
  require(!latents.empty() && latents.size() == targets.size(), ErrorCode::kShapeMismatch,
          "latent and target streams must be non-empty and of equal length");
  NormalEquations eq(latents.front().channels(), targets.front().channels());
  for (std::size_t i = 0; i < latents.size(); ++i) eq.add(latents[i], targets[i]);
  return fit_ridge(eq, lambda, patch_size);
}

FeatureTensor predict_patches(const RidgeDecoder& decoder, const FeatureTensor& latent) {
  require(latent.channels() == decoder.map.in_dim, ErrorCode::kShapeMismatch,
          "latent has " + std::to_string(latent.channels()) + " channels, decoder expects " +
              std::to_string(decoder.map.in_dim));
  FeatureTensor out(latent.grid_h(), latent.grid_w(), decoder.map.out_dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(latent.tokens()); ++i) {
    const auto y = decoder.map.apply(latent.token(i));
    auto dst = out.token(i);
    for (std::size_t r = 0; r < y.size(); ++r) dst[r] = static_cast<float>(y[r]);
  }
  return out;
}

Image decode(const RidgeDecoder& decoder, const FeatureTensor& latent) {
  require(decoder.patch_size > 0, ErrorCode::kInvalidArgument, "decoder has no patch geometry");
  Image img = assemble_patches(predict_patches(decoder, latent), decoder.patch_size);
  for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

Image decode(const RidgeDecoder& decoder, const LatentTensor& latent) { return decode(decoder, latent.values); }

double mean_squared_residual(const RidgeDecoder& decoder, const FeatureTensor& latents, const FeatureTensor& targets) {
  require(latents.tokens() == targets.tokens() && targets.channels() == decoder.map.out_dim,
          ErrorCode::kShapeMismatch, "targets do not match decoder output");
  double se = 0.0;
  for (std::size_t i = 0; i < latents.tokens(); ++i) {
    const auto y = decoder.map.apply(latents.token(i));
    auto t = targets.token(i);
    for (std::size_t r = 0; r < y.size(); ++r) {
      const double d = y[r] - t[r];
      se += d * d;
    }
  }
  return se / static_cast<double>(latents.tokens() * targets.channels());
}

void save_decoder(const std::filesystem::path& path, const RidgeDecoder& decoder) {
  save_linear_map(path, decoder.map, decoder.patch_size, decoder.ridge_lambda);
}

RidgeDecoder load_decoder(const std::filesystem::path& path) {
  auto stored = load_linear_map(path);
  return {std::move(stored.map), stored.ridge_lambda, stored.patch_size};
}

}  // namespace dtok
