#include "dtok/pca.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dtok/error.hpp"
#include "dtok/kernels.hpp"
#include "dtok/tensor_io.hpp"

namespace dtok {

CovarianceAccumulator::CovarianceAccumulator(std::size_t channels)
    : channels_(channels), sum_(channels, 0.0), outer_(channels * channels, 0.0) {
  require(channels > 0, ErrorCode::kInvalidArgument, "accumulator needs at least one channel");
}

void CovarianceAccumulator::add(const FeatureTensor& tensor) {
  require(tensor.channels() == channels_, ErrorCode::kShapeMismatch,
          "tensor has " + std::to_string(tensor.channels()) + " channels, accumulator " +
              std::to_string(channels_));
  add_rows(tensor.data(), tensor.tokens());
}

void CovarianceAccumulator::add_rows(std::span<const float> rows, std::size_t n) {
  require(rows.size() == n * channels_, ErrorCode::kShapeMismatch, "row block size mismatch");
  kernels::parallel::accumulate_gram({rows, n, channels_}, {sum_, outer_});
  count_ += n;
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other) {
  require(other.channels_ == channels_, ErrorCode::kShapeMismatch, "cannot merge accumulators of different width");
  count_ += other.count_;
  for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += other.sum_[i];
  for (std::size_t i = 0; i < outer_.size(); ++i) outer_[i] += other.outer_[i];
}

std::vector<double> CovarianceAccumulator::mean() const {
  require(count_ > 0, ErrorCode::kInsufficientSamples, "no samples accumulated");
  std::vector<double> m(channels_);
  for (std::size_t i = 0; i < channels_; ++i) m[i] = sum_[i] / static_cast<double>(count_);
  return m;
}

std::vector<double> CovarianceAccumulator::covariance() const {
  require(count_ >= 2, ErrorCode::kInsufficientSamples,
          "covariance needs at least 2 samples, have " + std::to_string(count_));
  const double n = static_cast<double>(count_);
  const std::size_t c = channels_;
  std::vector<double> cov(c * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      const double v = (outer_[i * c + j] - sum_[i] * sum_[j] / n) / (n - 1.0);
      cov[i * c + j] = v;
      cov[j * c + i] = v;
    }
  }
  return cov;
}

CovarianceAccumulator pca_accumulate(CovarianceAccumulator state, const FeatureTensor& tensor) {
  if (state.channels() == 0) state = CovarianceAccumulator(tensor.channels());
  state.add(tensor);
  return state;
}

CovarianceAccumulator merge(const CovarianceAccumulator& a, const CovarianceAccumulator& b) {
  CovarianceAccumulator out = a;
  out.merge(b);
  return out;
}

PcaModel pca_finalize(const CovarianceAccumulator& state) {
  const std::size_t c = state.channels();
  const auto cov = state.covariance();

  Eigen::MatrixXd m(c, c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = cov[i * c + j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  require(solver.info() == Eigen::Success, ErrorCode::kNoConvergence,
          "symmetric eigensolver did not converge for " + std::to_string(c) + " channels");

  PcaModel model;
  model.channels = c;
  model.mean = state.mean();
  model.sample_count = state.count();
  model.channel_variances.resize(c);
  for (std::size_t i = 0; i < c; ++i) model.channel_variances[i] = std::max(0.0, cov[i * c + i]);

  // Eigen returns ascending order.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  const double largest = std::max(0.0, values(static_cast<Eigen::Index>(c) - 1));
  model.eigenvalues.resize(c);
  model.components.resize(c * c);
  for (std::size_t r = 0; r < c; ++r) {
    const auto col = static_cast<Eigen::Index>(c - 1 - r);
    double v = values(col);
    if (v < kEigenClampRatio * largest || v < 0.0) v = 0.0;
    model.eigenvalues[r] = v;
    // Sign convention: the largest-magnitude coordinate is positive.
    Eigen::Index arg = 0;
    vectors.col(col).cwiseAbs().maxCoeff(&arg);
    const double sign = vectors(arg, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < c; ++j) model.components[r * c + j] = sign * vectors(static_cast<Eigen::Index>(j), col);
  }
  return model;
}

ChannelWeights ChannelWeights::uniform(std::size_t channels) {
  require(channels > 0, ErrorCode::kInvalidArgument, "weights need at least one channel");
  return {std::vector<double>(channels, 1.0 / static_cast<double>(channels))};
}

ChannelWeights ChannelWeights::from_values(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "weights need at least one channel");
  double total = 0.0;
  for (double v : values) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument, "weights must be finite and non-negative");
    total += v;
  }
  require(total > 0.0, ErrorCode::kDegenerate, "all channel variances are zero");
  ChannelWeights w;
  w.weights.reserve(values.size());
  for (double v : values) w.weights.push_back(v / total);
  return w;
}

ChannelWeights channel_weights(const PcaModel& model) {
  return ChannelWeights::from_values(model.channel_variances);
}

std::vector<std::size_t> rank_by_value(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

std::vector<std::size_t> rank_channels(const PcaModel& model) { return rank_by_value(model.channel_variances); }

FeatureTensor select_channels(const FeatureTensor& tensor, std::span<const std::size_t> indices) {
  require(!indices.empty(), ErrorCode::kInvalidArgument, "empty channel selection");
  std::vector<bool> seen(tensor.channels(), false);
  for (auto idx : indices) {
    require(idx < tensor.channels(), ErrorCode::kInvalidArgument,
            "channel " + std::to_string(idx) + " out of range " + std::to_string(tensor.channels()));
    require(!seen[idx], ErrorCode::kInvalidArgument, "duplicate channel " + std::to_string(idx));
    seen[idx] = true;
  }
  FeatureTensor out(tensor.grid_h(), tensor.grid_w(), indices.size());
  for (std::size_t i = 0; i < tensor.tokens(); ++i) {
    auto src = tensor.token(i);
    auto dst = out.token(i);
    for (std::size_t c = 0; c < indices.size(); ++c) dst[c] = src[indices[c]];
  }
  return out;
}

std::vector<std::size_t> per_image_top_channels(const FeatureTensor& tensor, std::size_t k) {
  require(k <= tensor.channels(), ErrorCode::kInvalidArgument, "k exceeds channel count");
  CovarianceAccumulator acc(tensor.channels());
  acc.add(tensor);
  const auto cov = acc.covariance();
  std::vector<double> var(tensor.channels());
  for (std::size_t c = 0; c < var.size(); ++c) var[c] = cov[c * var.size() + c];
  auto order = rank_by_value(var);
  order.resize(k);
  return order;
}

double channel_presence_rate(std::span<const std::vector<std::size_t>> per_image_tops, std::size_t channel) {
  require(!per_image_tops.empty(), ErrorCode::kEmpty, "no per-image rankings");
  std::size_t hits = 0;
  for (const auto& tops : per_image_tops)
    if (std::find(tops.begin(), tops.end(), channel) != tops.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(per_image_tops.size());
}

namespace {

void append(std::vector<float>& out, std::span<const double> values) {
  for (double v : values) out.push_back(static_cast<float>(v));
}

std::vector<double> take(const std::vector<float>& body, std::size_t offset, std::size_t n) {
  return {body.begin() + static_cast<std::ptrdiff_t>(offset),
          body.begin() + static_cast<std::ptrdiff_t>(offset + n)};
}

}  // namespace

void save_pca(const std::filesystem::path& path, const PcaModel& model) {
  const std::size_t c = model.channels;
  require(model.mean.size() == c && model.eigenvalues.size() == c && model.channel_variances.size() == c &&
              model.components.size() == c * c,
          ErrorCode::kShapeMismatch, "inconsistent PCA model");
  Manifest m{};
  m[0] = static_cast<float>(c);
  store_wide_count(m, 1, model.sample_count);
  m[3] = 0.0f;
  std::vector<float> body;
  body.reserve(3 * c + c * c);
  append(body, model.mean);
  append(body, model.eigenvalues);
  append(body, model.channel_variances);
  append(body, model.components);
  write_raw(path, pack_composite(TensorKind::kPca, m, body));
}

PcaModel load_pca(const std::filesystem::path& path) {
  std::vector<float> body;
  const Manifest m = unpack_composite(read_raw(path), TensorKind::kPca, body);
  require(manifest_count(m, 3) == 0, ErrorCode::kWrongKind, path.string() + " holds weights, not a PCA model");
  const std::size_t c = manifest_count(m, 0);
  require(body.size() == 3 * c + c * c, ErrorCode::kShapeMismatch, "PCA body length mismatch");
  PcaModel model;
  model.channels = c;
  model.sample_count = load_wide_count(m, 1);
  model.mean = take(body, 0, c);
  model.eigenvalues = take(body, c, c);
  model.channel_variances = take(body, 2 * c, c);
  model.components = take(body, 3 * c, c * c);
  return model;
}

void save_weights(const std::filesystem::path& path, const ChannelWeights& weights) {
  Manifest m{};
  m[0] = static_cast<float>(weights.size());
  m[3] = 1.0f;
  std::vector<float> body;
  append(body, weights.weights);
  write_raw(path, pack_composite(TensorKind::kPca, m, body));
}

ChannelWeights load_weights(const std::filesystem::path& path) {
  std::vector<float> body;
  const Manifest m = unpack_composite(read_raw(path), TensorKind::kPca, body);
  require(manifest_count(m, 3) == 1, ErrorCode::kWrongKind, path.string() + " is not a weights file");
  require(body.size() == manifest_count(m, 0), ErrorCode::kShapeMismatch, "weights body length mismatch");
  std::vector<double> values(body.begin(), body.end());
  return ChannelWeights::from_values(values);
}

}  // namespace dtok
