#include "dtok/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dtok/diagnostics.hpp"
#include "dtok/error.hpp"
#include "dtok/kernels.hpp"
#include "dtok/random.hpp"
#include "dtok/tensor_io.hpp"

namespace dtok {
namespace {

kernels::MatrixView entries_view(const Codebook& book) { return {book.entries, book.size, book.dim}; }

void check_weights_for(const ChannelWeights& weights, std::size_t dim) {
  require(weights.size() == dim, ErrorCode::kShapeMismatch,
          "weights have " + std::to_string(weights.size()) + " channels, expected " + std::to_string(dim));
}

Lookup single_lookup(std::span<const float> token, const Codebook& book, std::span<const double> w) {
  require(book.size > 0, ErrorCode::kEmpty, "codebook has no entries");
  require(token.size() == book.dim, ErrorCode::kShapeMismatch,
          "token dim " + std::to_string(token.size()) + " != codebook dim " + std::to_string(book.dim));
  Lookup out;
  kernels::serial::assign_nearest({{token, 1, token.size()}, entries_view(book), w}, {&out.index, 1},
                                  {&out.distance, 1});
  return out;
}

}  // namespace

Codebook Codebook::from_entries(CodebookRole role, std::size_t size, std::size_t dim, std::vector<float> entries) {
  Codebook book;
  book.role = role;
  book.size = size;
  book.dim = dim;
  book.entries = std::move(entries);
  book.ema_counts.assign(size, 1.0f);
  book.ema_sums = book.entries;
  book.validate();
  return book;
}

void Codebook::validate() const {
  require(size >= 1 && dim >= 1, ErrorCode::kEmpty, "codebook needs K >= 1 and D >= 1");
  require(entries.size() == size * dim && ema_sums.size() == size * dim && ema_counts.size() == size,
          ErrorCode::kShapeMismatch, "codebook table sizes inconsistent with K x D");
  for (float v : entries) require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite codebook entry");
  for (float c : ema_counts) require(c >= 0.0f, ErrorCode::kInvalidArgument, "negative EMA count");
  require(dead_threshold >= 0.0, ErrorCode::kInvalidArgument, "negative dead threshold");
}

Lookup weighted_lookup(std::span<const float> token, const Codebook& book, const ChannelWeights& weights) {
  check_weights_for(weights, book.dim);
  return single_lookup(token, book, weights.weights);
}

Lookup plain_lookup(std::span<const float> token, const Codebook& book) { return single_lookup(token, book, {}); }

Assignment assign(const FeatureTensor& tokens, const Codebook& book, const ChannelWeights* weights) {
  require(tokens.channels() == book.dim, ErrorCode::kShapeMismatch,
          "tokens have " + std::to_string(tokens.channels()) + " channels, codebook dim " +
              std::to_string(book.dim));
  std::span<const double> w;
  if (weights != nullptr) {
    check_weights_for(*weights, book.dim);
    w = weights->weights;
  }
  Assignment out{std::vector<std::uint32_t>(tokens.tokens()), std::vector<double>(tokens.tokens())};
  kernels::parallel::assign_nearest({{tokens.data(), tokens.tokens(), tokens.channels()}, entries_view(book), w},
                                    out.index, out.distance);
  return out;
}

namespace {

FeatureTensor gather(const Codebook& book, std::span<const std::uint32_t> index, std::size_t h, std::size_t w) {
  FeatureTensor out(h, w, book.dim);
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto e = book.entry(index[i]);
    std::copy(e.begin(), e.end(), out.token(i).begin());
  }
  return out;
}

}  // namespace

QuantizationResult quantize_dual(const FeatureTensor& deep, const FeatureTensor& shallow, const Codebook& semantic,
                                 const Codebook& texture, const ChannelWeights& weights) {
  require(deep.same_grid(shallow), ErrorCode::kShapeMismatch, "deep and shallow grids differ");
  auto s = assign(deep, semantic, &weights);
  auto t = assign(shallow, texture, nullptr);
  QuantizationResult r;
  r.grid_h = deep.grid_h();
  r.grid_w = deep.grid_w();
  r.semantic_codes = gather(semantic, s.index, r.grid_h, r.grid_w);
  r.texture_codes = gather(texture, t.index, r.grid_h, r.grid_w);
  r.semantic_indices = std::move(s.index);
  r.texture_indices = std::move(t.index);
  r.semantic_distances = std::move(s.distance);
  r.texture_distances = std::move(t.distance);
  return r;
}

namespace {

struct Seeding {
  std::vector<std::size_t> chosen;
  double potential = 0.0;
};

Seeding seed_once(const FeatureTensor& sample, std::size_t k, std::uint64_t seed, std::span<const double> w) {
  const std::size_t n = sample.tokens();
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::vector<bool> taken(n, false);
  std::vector<double> nearest(n);
  std::vector<double> candidate_d(n);

  auto distances_to = [&](std::size_t c, std::vector<double>& out) {
    auto centre = sample.token(c);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
      out[i] = kernels::token_distance(sample.token(i), centre, w);
  };
  auto take = [&](std::size_t c) {
    chosen.push_back(c);
    taken[c] = true;
  };

  take(uniform_index(rng, n));
  distances_to(chosen.back(), nearest);
  nearest[chosen.back()] = 0.0;

  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i]) total += nearest[i];

    if (!(total > 0.0)) {
      // Every remaining token coincides with a chosen one: draw uniformly among the untaken.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) free.push_back(i);
      take(free[uniform_index(rng, free.size())]);
      continue;
    }

    std::size_t best = n;
    double best_potential = 0.0;
    std::vector<double> best_d;
    for (std::size_t t = 0; t < trials; ++t) {
      const double r = uniform01(rng) * total;
      double acc = 0.0;
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || nearest[i] <= 0.0) continue;
        pick = i;
        acc += nearest[i];
        if (acc > r) break;
      }
      distances_to(pick, candidate_d);
      double potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) potential += std::min(nearest[i], candidate_d[i]);
      if (best == n || potential < best_potential) {
        best = pick;
        best_potential = potential;
        best_d = candidate_d;
      }
    }
    take(best);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], best_d[i]);
    nearest[best] = 0.0;
  }
  return {std::move(chosen), std::accumulate(nearest.begin(), nearest.end(), 0.0)};
}

}  // namespace

Codebook init_codebook(const FeatureTensor& sample, std::size_t k, std::uint64_t seed, CodebookRole role,
                       const ChannelWeights* weights, std::size_t restarts) {
  const std::size_t n = sample.tokens();
  const std::size_t dim = sample.channels();
  require(k >= 1, ErrorCode::kInvalidArgument, "K must be at least 1");
  require(restarts >= 1, ErrorCode::kInvalidArgument, "restarts must be at least 1");
  require(n >= k, ErrorCode::kInsufficientSamples,
          "sample of " + std::to_string(n) + " tokens is smaller than K=" + std::to_string(k));
  std::span<const double> w;
  if (weights != nullptr) {
    check_weights_for(*weights, dim);
    w = weights->weights;
  }

  // Restart r > 0 draws from derive_seed(seed, r); the lowest final potential wins.
  Seeding best = seed_once(sample, k, seed, w);
  for (std::size_t r = 1; r < restarts; ++r) {
    Seeding s = seed_once(sample, k, derive_seed(seed, r), w);
    if (s.potential < best.potential) best = std::move(s);
  }

  std::vector<float> entries;
  entries.reserve(k * dim);
  for (auto c : best.chosen) {
    auto t = sample.token(c);
    entries.insert(entries.end(), t.begin(), t.end());
  }
  return Codebook::from_entries(role, k, dim, std::move(entries));
}

TrainedEpoch train_codebook_epoch(Codebook book, const FeatureTensor& dataset, const ChannelWeights* weights,
                                  double decay, std::uint64_t seed) {
  book.validate();
  require(decay > 0.0 && decay < 1.0, ErrorCode::kInvalidArgument, "decay must lie in (0, 1)");
  require(!dataset.empty(), ErrorCode::kEmpty, "empty training dataset");
  const bool semantic = book.role == CodebookRole::kSemantic;
  require(semantic == (weights != nullptr), ErrorCode::kInvalidArgument,
          semantic ? "semantic codebook training needs channel weights"
                   : "texture codebook training takes no channel weights");

  const std::size_t k = book.size;
  const std::size_t dim = book.dim;
  const std::size_t n = dataset.tokens();
  const Assignment a = assign(dataset, book, weights);

  std::vector<double> counts(k, 0.0);
  std::vector<double> sums(k * dim, 0.0);
  double error = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = a.index[i];
    counts[c] += 1.0;
    auto x = dataset.token(i);
    double* s = sums.data() + c * dim;
    for (std::size_t d = 0; d < dim; ++d) s[d] += x[d];
    error += a.distance[i];
  }

  TrainedEpoch out;
  out.stats.epoch = book.epoch + 1;
  out.stats.mean_error = error / static_cast<double>(n);
  const auto health = codebook_health(a.index, k);
  out.stats.perplexity = health.perplexity;
  out.stats.utilization = health.utilization;

  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double ema = decay * book.ema_counts[c] + (1.0 - decay) * counts[c];
    book.ema_counts[c] = static_cast<float>(ema);
    total += book.ema_counts[c];
    for (std::size_t d = 0; d < dim; ++d) {
      const std::size_t j = c * dim + d;
      book.ema_sums[j] = static_cast<float>(decay * book.ema_sums[j] + (1.0 - decay) * sums[j]);
    }
  }
  const double eps = kSmoothingEpsilon;
  for (std::size_t c = 0; c < k; ++c) {
    const double smoothed = (book.ema_counts[c] + eps) / (total + static_cast<double>(k) * eps) * total;
    for (std::size_t d = 0; d < dim; ++d) {
      const std::size_t j = c * dim + d;
      book.entries[j] = static_cast<float>(book.ema_sums[j] / smoothed);
    }
  }

  std::vector<std::size_t> dead;
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] < book.dead_threshold) dead.push_back(c);
  out.stats.dead_entries = dead.size();

  if (!dead.empty()) {
    // Pool of the highest-error tokens, then a seeded draw without replacement.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a.distance[x] > a.distance[y]; });
    const std::size_t pool = std::min(n, std::max<std::size_t>(4 * dead.size(), 1));
    order.resize(pool);
    Rng rng(derive_seed(seed, book.epoch));
    const std::size_t reseed = std::min(dead.size(), pool);
    for (std::size_t r = 0; r < reseed; ++r) {
      const std::size_t j = r + uniform_index(rng, pool - r);
      std::swap(order[r], order[j]);
      auto x = dataset.token(order[r]);
      const std::size_t c = dead[r];
      std::copy(x.begin(), x.end(), book.entries.begin() + static_cast<std::ptrdiff_t>(c * dim));
      std::copy(x.begin(), x.end(), book.ema_sums.begin() + static_cast<std::ptrdiff_t>(c * dim));
      book.ema_counts[c] = 1.0f;
    }
    out.stats.reseeded = reseed;
  }

  book.epoch += 1;
  out.book = std::move(book);
  return out;
}

VqLosses vq_losses(const FeatureTensor& deep, const FeatureTensor& shallow, const QuantizationResult& result,
                   const ChannelWeights& weights, double beta) {
  require(beta >= 0.0, ErrorCode::kInvalidArgument, "beta must be non-negative");
  require(deep.same_grid(shallow) && deep.tokens() == result.tokens(), ErrorCode::kShapeMismatch,
          "feature grids do not match the quantization result");
  require(result.semantic_codes.channels() == deep.channels() &&
              result.texture_codes.channels() == shallow.channels() &&
              result.semantic_codes.tokens() == deep.tokens() && result.texture_codes.tokens() == deep.tokens(),
          ErrorCode::kShapeMismatch, "quantized codes do not match feature shapes");
  check_weights_for(weights, deep.channels());

  const std::size_t n = deep.tokens();
  double sem = 0.0;
  double tex = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sem += kernels::token_distance(deep.token(i), result.semantic_codes.token(i), weights.weights);
    tex += kernels::token_distance(shallow.token(i), result.texture_codes.token(i), {});
  }
  VqLosses l;
  l.beta = beta;
  l.semantic_codebook = l.semantic_commitment = sem / static_cast<double>(n);
  l.texture_codebook = l.texture_commitment = tex / static_cast<double>(n);
  return l;
}

void save_codebook(const std::filesystem::path& path, const Codebook& book) {
  book.validate();
  Manifest m{};
  m[0] = static_cast<float>(static_cast<int>(book.role));
  m[1] = static_cast<float>(book.size);
  m[2] = static_cast<float>(book.dim);
  m[3] = static_cast<float>(book.dead_threshold);
  store_wide_count(m, 4, book.epoch);
  std::vector<float> body;
  body.reserve(2 * book.size * book.dim + book.size);
  body.insert(body.end(), book.entries.begin(), book.entries.end());
  body.insert(body.end(), book.ema_counts.begin(), book.ema_counts.end());
  body.insert(body.end(), book.ema_sums.begin(), book.ema_sums.end());
  write_raw(path, pack_composite(TensorKind::kCodebook, m, body));
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::vector<float> body;
  const Manifest m = unpack_composite(read_raw(path), TensorKind::kCodebook, body);
  const auto role = manifest_count(m, 0);
  require(role <= 1, ErrorCode::kUnsupported, "unknown codebook role");
  Codebook book;
  book.role = static_cast<CodebookRole>(role);
  book.size = manifest_count(m, 1);
  book.dim = manifest_count(m, 2);
  book.dead_threshold = m[3];
  book.epoch = load_wide_count(m, 4);
  const std::size_t kd = book.size * book.dim;
  require(body.size() == 2 * kd + book.size, ErrorCode::kShapeMismatch, "codebook body length mismatch");
  auto it = body.begin();
  book.entries.assign(it, it + static_cast<std::ptrdiff_t>(kd));
  it += static_cast<std::ptrdiff_t>(kd);
  book.ema_counts.assign(it, it + static_cast<std::ptrdiff_t>(book.size));
  it += static_cast<std::ptrdiff_t>(book.size);
  book.ema_sums.assign(it, body.end());
  book.validate();
  return book;
}

}  // namespace dtok
