#include "dtok/latent.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dtok/error.hpp"
#include "dtok/tensor_io.hpp"

namespace dtok {

LinearMap LinearMap::identity(std::size_t dim) {
  LinearMap m{dim, dim, std::vector<float>(dim * dim, 0.0f), std::vector<float>(dim, 0.0f)};
  for (std::size_t i = 0; i < dim; ++i) m.matrix[i * dim + i] = 1.0f;
  return m;
}

void LinearMap::validate() const {
  require(in_dim > 0 && out_dim > 0, ErrorCode::kInvalidArgument, "linear map needs positive dimensions");
  require(matrix.size() == in_dim * out_dim && bias.size() == out_dim, ErrorCode::kShapeMismatch,
          "linear map coefficient count mismatch");
  for (float v : matrix) require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite linear map coefficient");
  for (float v : bias) require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite linear map bias");
}

std::vector<double> LinearMap::apply(std::span<const float> x) const {
  require(x.size() == in_dim, ErrorCode::kShapeMismatch,
          "input has " + std::to_string(x.size()) + " values, map expects " + std::to_string(in_dim));
  std::vector<double> y(out_dim);
  for (std::size_t r = 0; r < out_dim; ++r) {
    double acc = bias[r];
    const float* row = matrix.data() + r * in_dim;
    for (std::size_t c = 0; c < in_dim; ++c) acc += static_cast<double>(row[c]) * x[c];
    y[r] = acc;
  }
  return y;
}

FeatureTensor LinearMap::apply(const FeatureTensor& x) const {
  require(x.channels() == in_dim, ErrorCode::kShapeMismatch,
          "tensor has " + std::to_string(x.channels()) + " channels, map expects " + std::to_string(in_dim));
  FeatureTensor out(x.grid_h(), x.grid_w(), out_dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.tokens()); ++i) {
    const auto y = apply(x.token(i));
    auto dst = out.token(i);
    for (std::size_t r = 0; r < out_dim; ++r) dst[r] = static_cast<float>(y[r]);
  }
  return out;
}

ProjectionFit fit_projection(const CovarianceAccumulator& shallow_stats, std::size_t target_dim) {
  const std::size_t source = shallow_stats.channels();
  require(target_dim >= 1, ErrorCode::kInvalidArgument, "target dimension must be positive");
  require(target_dim <= source, ErrorCode::kInvalidArgument,
          "target dimension " + std::to_string(target_dim) + " exceeds source dimension " + std::to_string(source));
  require(shallow_stats.count() > 0, ErrorCode::kEmpty, "empty shallow dataset");
  const PcaModel pca = pca_finalize(shallow_stats);

  ProjectionFit fit;
  fit.map.in_dim = source;
  fit.map.out_dim = target_dim;
  fit.map.matrix.assign(target_dim * source, 0.0f);
  fit.map.bias.assign(target_dim, 0.0f);
  for (std::size_t r = 0; r < target_dim; ++r) {
    if (pca.eigenvalues[r] <= 0.0) continue;
    ++fit.rank;
    auto comp = pca.component(r);
    double b = 0.0;
    for (std::size_t c = 0; c < source; ++c) {
      fit.map.matrix[r * source + c] = static_cast<float>(comp[c]);
      b -= comp[c] * pca.mean[c];
    }
    fit.map.bias[r] = static_cast<float>(b);
  }
  return fit;
}

ProjectionFit fit_projection(const FeatureTensor& shallow_dataset, std::size_t target_dim) {
  require(!shallow_dataset.empty(), ErrorCode::kEmpty, "empty shallow dataset");
  CovarianceAccumulator acc(shallow_dataset.channels());
  acc.add(shallow_dataset);
  return fit_projection(acc, target_dim);
}

LatentTensor assemble_ae_latent(const FeatureTensor& deep, const FeatureTensor& shallow, const LinearMap& proj) {
  require(deep.same_grid(shallow), ErrorCode::kShapeMismatch, "deep and shallow grids differ");
  const FeatureTensor projected = proj.apply(shallow);
  const std::size_t cd = deep.channels();
  const std::size_t cp = projected.channels();
  FeatureTensor values(deep.grid_h(), deep.grid_w(), cd + cp);
  for (std::size_t i = 0; i < deep.tokens(); ++i) {
    auto dst = values.token(i);
    auto a = deep.token(i);
    auto b = projected.token(i);
    std::copy(a.begin(), a.end(), dst.begin());
    std::copy(b.begin(), b.end(), dst.begin() + static_cast<std::ptrdiff_t>(cd));
  }
  LatentTensor out{std::move(values), cd, LatentVariant::kContinuous};
  out.validate();
  return out;
}

LatentTensor assemble_vq_latent(const IndexGrid& indices, const Codebook& semantic, const Codebook& texture) {
  const std::size_t n = indices.tokens();
  require(indices.semantic.size() == n && indices.texture.size() == n, ErrorCode::kShapeMismatch,
          "index stream length does not match grid");
  const std::size_t ds = semantic.dim;
  FeatureTensor values(indices.grid_h, indices.grid_w, ds + texture.dim);
  for (std::size_t i = 0; i < n; ++i) {
    require(indices.semantic[i] < semantic.size, ErrorCode::kInvalidArgument,
            "semantic index " + std::to_string(indices.semantic[i]) + " out of range at token " + std::to_string(i));
    require(indices.texture[i] < texture.size, ErrorCode::kInvalidArgument,
            "texture index " + std::to_string(indices.texture[i]) + " out of range at token " + std::to_string(i));
    auto dst = values.token(i);
    auto s = semantic.entry(indices.semantic[i]);
    auto t = texture.entry(indices.texture[i]);
    std::copy(s.begin(), s.end(), dst.begin());
    std::copy(t.begin(), t.end(), dst.begin() + static_cast<std::ptrdiff_t>(ds));
  }
  LatentTensor out{std::move(values), ds, LatentVariant::kDiscrete};
  out.validate();
  return out;
}

LatentTensor assemble_vq_latent(const QuantizationResult& result, const Codebook& semantic, const Codebook& texture) {
  return assemble_vq_latent(result.index_grid(), semantic, texture);
}

void save_linear_map(const std::filesystem::path& path, const LinearMap& map, std::size_t patch_size,
                     double ridge_lambda) {
  map.validate();
  Manifest m{};
  m[0] = static_cast<float>(map.in_dim);
  m[1] = static_cast<float>(map.out_dim);
  m[2] = static_cast<float>(patch_size);
  m[3] = static_cast<float>(ridge_lambda);
  std::vector<float> body(map.matrix);
  body.insert(body.end(), map.bias.begin(), map.bias.end());
  write_raw(path, pack_composite(TensorKind::kLinearMap, m, body));
}

StoredLinearMap load_linear_map(const std::filesystem::path& path) {
  std::vector<float> body;
  const Manifest m = unpack_composite(read_raw(path), TensorKind::kLinearMap, body);
  StoredLinearMap s;
  s.map.in_dim = manifest_count(m, 0);
  s.map.out_dim = manifest_count(m, 1);
  s.patch_size = manifest_count(m, 2);
  s.ridge_lambda = m[3];
  const std::size_t mat = s.map.in_dim * s.map.out_dim;
  require(body.size() == mat + s.map.out_dim, ErrorCode::kShapeMismatch, "linear map body length mismatch");
  s.map.matrix.assign(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(mat));
  s.map.bias.assign(body.begin() + static_cast<std::ptrdiff_t>(mat), body.end());
  s.map.validate();
  return s;
}

}  // namespace dtok
