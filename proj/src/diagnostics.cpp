#include "dtok/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dtok/error.hpp"
#include "dtok/kernels.hpp"
#include "dtok/random.hpp"

namespace dtok {

ConcentrationReport concentration_stats(const FeatureTensor& points, std::span<const float> query, double p) {
  require(points.tokens() >= 2, ErrorCode::kInsufficientSamples, "concentration needs at least 2 points");
  require(p >= 1.0, ErrorCode::kInvalidArgument, "norm order must be >= 1");
  require(query.size() == points.channels(), ErrorCode::kShapeMismatch, "query dimension mismatch");
  std::vector<double> dist(points.tokens());
  kernels::parallel::minkowski_distances({points.data(), points.tokens(), points.channels()}, query, p, dist);
  const auto [lo, hi] = std::minmax_element(dist.begin(), dist.end());
  ConcentrationReport r;
  r.dimension = points.channels();
  r.p = p;
  r.samples = points.tokens();
  r.d_min = *lo;
  r.d_max = *hi;
  if (r.d_min > 0.0) {
    r.relative_contrast = (r.d_max - r.d_min) / r.d_min;
  } else {
    r.degenerate = true;
    r.relative_contrast = std::numeric_limits<double>::infinity();
  }
  return r;
}

std::vector<ConcentrationSweepRow> concentration_sweep(std::span<const std::size_t> dims,
                                                       std::span<const double> norms, std::size_t samples,
                                                       std::size_t trials, std::uint64_t seed) {
  require(!dims.empty() && !norms.empty(), ErrorCode::kInvalidArgument, "empty dimension or norm list");
  require(trials >= 1, ErrorCode::kInvalidArgument, "need at least one trial");
  for (auto d : dims) require(d >= 1, ErrorCode::kInvalidArgument, "dimensions must be >= 1");
  for (auto p : norms) require(p >= 1.0, ErrorCode::kInvalidArgument, "norm order must be >= 1");

  std::vector<ConcentrationSweepRow> rows;
  for (double p : norms)
    for (auto d : dims) rows.push_back({d, p, samples, trials, 0.0, samples < 2});

  if (samples < 2) {
    for (auto& r : rows) r.mean_contrast = std::numeric_limits<double>::infinity();
    return rows;
  }

  for (std::size_t di = 0; di < dims.size(); ++di) {
    const std::size_t d = dims[di];
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(derive_seed(derive_seed(seed, kStreamConcentration, d), t));
      std::vector<float> data(samples * d);
      for (auto& v : data) v = static_cast<float>(uniform01(rng));
      std::vector<float> query(d);
      for (auto& v : query) v = static_cast<float>(uniform01(rng));
      const FeatureTensor points(1, samples, d, std::move(data));
      for (std::size_t pi = 0; pi < norms.size(); ++pi) {
        const auto rep = concentration_stats(points, query, norms[pi]);
        auto& row = rows[pi * dims.size() + di];
        row.mean_contrast += rep.relative_contrast / static_cast<double>(trials);
        row.degenerate = row.degenerate || rep.degenerate;
      }
    }
  }
  return rows;
}

namespace {

void check_same_shape(const FeatureTensor& z, const FeatureTensor& z_hat) {
  require(z.same_grid(z_hat) && z.channels() == z_hat.channels(), ErrorCode::kShapeMismatch,
          "latent shapes differ");
  require(z.tokens() > 0, ErrorCode::kEmpty, "latents have no tokens");
}

std::string position(const FeatureTensor& t, std::size_t i) {
  return "token " + std::to_string(i) + " (row " + std::to_string(i / std::max<std::size_t>(t.grid_w(), 1)) +
         ", col " + std::to_string(i % std::max<std::size_t>(t.grid_w(), 1)) + ")";
}

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::vector<double> normalized_rows(const FeatureTensor& t, const char* which) {
  const std::size_t c = t.channels();
  std::vector<double> out(t.tokens() * c);
  for (std::size_t i = 0; i < t.tokens(); ++i) {
    auto v = t.token(i);
    const double n = norm_of(v);
    require(n > 0.0, ErrorCode::kZeroNorm, std::string(which) + " has zero norm at " + position(t, i));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v[j] / n;
  }
  return out;
}

}  // namespace

double cosine_similarity_loss(const FeatureTensor& z, const FeatureTensor& z_hat) {
  check_same_shape(z, z_hat);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.tokens(); ++i) {
    auto a = z.token(i);
    auto b = z_hat.token(i);
    const double na = norm_of(a);
    const double nb = norm_of(b);
    require(na > 0.0, ErrorCode::kZeroNorm, "z has zero norm at " + position(z, i));
    require(nb > 0.0, ErrorCode::kZeroNorm, "z_hat has zero norm at " + position(z_hat, i));
    double dot = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) dot += static_cast<double>(a[c]) * b[c];
    loss += 1.0 - dot / (na * nb);
  }
  return loss;
}

double distance_matrix_loss(const FeatureTensor& z, const FeatureTensor& z_hat) {
  check_same_shape(z, z_hat);
  const auto a = normalized_rows(z, "z");
  const auto b = normalized_rows(z_hat, "z_hat");
  return kernels::parallel::pairwise_inner_abs_diff(a, z.channels(), b, z_hat.channels(), z.tokens());
}

LossPair topk_channel_losses(const FeatureTensor& z, const FeatureTensor& z_hat, const PcaModel& pca,
                             std::size_t k) {
  check_same_shape(z, z_hat);
  require(pca.channels == z.channels(), ErrorCode::kShapeMismatch, "PCA model width does not match latents");
  require(k >= 1 && k <= z.channels(), ErrorCode::kInvalidArgument,
          "k=" + std::to_string(k) + " outside [1, " + std::to_string(z.channels()) + "]");
  auto order = rank_channels(pca);
  order.resize(k);
  const auto zs = select_channels(z, order);
  const auto hs = select_channels(z_hat, order);
  return {cosine_similarity_loss(zs, hs), distance_matrix_loss(zs, hs)};
}

namespace {

void check_images(const Image& x, const Image& y) {
  require(x.same_shape(y), ErrorCode::kShapeMismatch, "image shapes differ");
  require(!x.data.empty(), ErrorCode::kEmpty, "empty image");
}

}  // namespace

double psnr(const Image& x, const Image& y) {
  check_images(x, y);
  double se = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    require(x.data[i] >= 0.0 && x.data[i] <= 1.0 && y.data[i] >= 0.0 && y.data[i] <= 1.0,
            ErrorCode::kInvalidArgument, "PSNR expects values in [0, 1]");
    const double d = x.data[i] - y.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.data.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& x, const Image& y) {
  check_images(x, y);
  const std::size_t win = kSsimWindow;
  require(x.height >= win && x.width >= win, ErrorCode::kInvalidArgument,
          "image smaller than the " + std::to_string(win) + "x" + std::to_string(win) + " SSIM window");
  const std::size_t h = x.height;
  const std::size_t w = x.width;
  const std::size_t sw = w + 1;
  const double area = static_cast<double>(win * win);

  double channel_sum = 0.0;
  // Summed-area tables of x, y, x^2, y^2, xy for one channel.
  std::vector<double> sx((h + 1) * sw), sy((h + 1) * sw), sxx((h + 1) * sw), syy((h + 1) * sw), sxy((h + 1) * sw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) {
        const double a = x.at(r, q, c);
        const double b = y.at(r, q, c);
        const std::size_t o = (r + 1) * sw + (q + 1);
        const std::size_t up = r * sw + (q + 1);
        const std::size_t left = (r + 1) * sw + q;
        const std::size_t diag = r * sw + q;
        sx[o] = a + sx[up] + sx[left] - sx[diag];
        sy[o] = b + sy[up] + sy[left] - sy[diag];
        sxx[o] = a * a + sxx[up] + sxx[left] - sxx[diag];
        syy[o] = b * b + syy[up] + syy[left] - syy[diag];
        sxy[o] = a * b + sxy[up] + sxy[left] - sxy[diag];
      }
    }
    auto box = [&](const std::vector<double>& s, std::size_t r, std::size_t q) {
      return s[(r + win) * sw + (q + win)] - s[r * sw + (q + win)] - s[(r + win) * sw + q] + s[r * sw + q];
    };
    double total = 0.0;
    for (std::size_t r = 0; r + win <= h; ++r) {
      for (std::size_t q = 0; q + win <= w; ++q) {
        const double mx = box(sx, r, q) / area;
        const double my = box(sy, r, q) / area;
        const double vx = box(sxx, r, q) / area - mx * mx;
        const double vy = box(syy, r, q) / area - my * my;
        const double cxy = box(sxy, r, q) / area - mx * my;
        total += ((2.0 * mx * my + kSsimC1) * (2.0 * cxy + kSsimC2)) /
                 ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
      }
    }
    channel_sum += total / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return channel_sum / 3.0;
}

CodebookHealth codebook_health(std::span<const std::uint32_t> indices, std::size_t k) {
  require(!indices.empty(), ErrorCode::kEmpty, "empty index stream");
  require(k >= 1, ErrorCode::kInvalidArgument, "K must be at least 1");
  std::vector<std::size_t> counts(k, 0);
  for (auto i : indices) {
    require(i < k, ErrorCode::kInvalidArgument, "index " + std::to_string(i) + " >= K=" + std::to_string(k));
    ++counts[i];
  }
  const double n = static_cast<double>(indices.size());
  double entropy = 0.0;
  std::size_t used = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    ++used;
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  return {std::exp(entropy), static_cast<double>(used) / static_cast<double>(k)};
}

}  // namespace dtok
