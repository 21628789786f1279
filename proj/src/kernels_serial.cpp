#include <string>

#include "dtok/error.hpp"
#include "dtok/kernels.hpp"
#include "kernel_detail.hpp"

namespace dtok::kernels {

void detail::check_nearest_query(const NearestQuery& q, std::size_t index_len, std::size_t distance_len) {
  require(q.entries.rows > 0, ErrorCode::kEmpty, "codebook has no entries");
  require(q.tokens.dim == q.entries.dim, ErrorCode::kShapeMismatch,
          "token dim " + std::to_string(q.tokens.dim) + " != entry dim " + std::to_string(q.entries.dim));
  require(q.weights.empty() || q.weights.size() == q.tokens.dim, ErrorCode::kShapeMismatch,
          "weight dim does not match token dim");
  require(index_len == q.tokens.rows && distance_len == q.tokens.rows, ErrorCode::kShapeMismatch,
          "output length does not match token count");
}

double token_distance(std::span<const float> token, std::span<const float> entry,
                      std::span<const double> weights) {
  require(token.size() == entry.size(), ErrorCode::kShapeMismatch, "token/entry dim mismatch");
  if (weights.empty()) return detail::plain_sq(token.data(), entry.data(), token.size());
  require(weights.size() == token.size(), ErrorCode::kShapeMismatch, "weight dim mismatch");
  return detail::weighted_sq(token.data(), entry.data(), weights.data(), token.size());
}

double minkowski(std::span<const float> a, std::span<const float> b, double p) {
  require(a.size() == b.size(), ErrorCode::kShapeMismatch, "vector length mismatch");
  return detail::minkowski(a.data(), b.data(), a.size(), p);
}

namespace serial {

void assign_nearest(const NearestQuery& q, std::span<std::uint32_t> index, std::span<double> distance) {
  detail::check_nearest_query(q, index.size(), distance.size());
  const std::size_t dim = q.tokens.dim;
  for (std::size_t i = 0; i < q.tokens.rows; ++i) {
    const float* x = q.tokens.data.data() + i * dim;
    if (q.weights.empty()) {
      detail::nearest_one<false>(x, q.entries.data.data(), q.entries.rows, dim, nullptr, index[i], distance[i]);
    } else {
      detail::nearest_one<true>(x, q.entries.data.data(), q.entries.rows, dim, q.weights.data(), index[i],
                                distance[i]);
    }
  }
}

void accumulate_gram(const MatrixView& x, GramAccumulation acc) {
  const std::size_t dim = x.dim;
  require(acc.sum.size() == dim && acc.gram.size() == dim * dim, ErrorCode::kShapeMismatch,
          "gram accumulator size mismatch");
  for (std::size_t n = 0; n < x.rows; ++n) {
    const float* row = x.data.data() + n * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      const double xi = row[i];
      acc.sum[i] += xi;
      double* g = acc.gram.data() + i * dim;
      for (std::size_t j = i; j < dim; ++j) g[j] += xi * static_cast<double>(row[j]);
    }
  }
}

double pairwise_inner_abs_diff(std::span<const double> a, std::size_t a_dim, std::span<const double> b,
                               std::size_t b_dim, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ca = detail::dot(a.data() + i * a_dim, a.data() + j * a_dim, a_dim);
      const double cb = detail::dot(b.data() + i * b_dim, b.data() + j * b_dim, b_dim);
      row += std::abs(ca - cb);
    }
    total += row;
  }
  return total;
}

void minkowski_distances(const MatrixView& points, std::span<const float> query, double p,
                         std::span<double> out) {
  require(query.size() == points.dim && out.size() == points.rows, ErrorCode::kShapeMismatch,
          "distance buffer mismatch");
  for (std::size_t i = 0; i < points.rows; ++i) {
    out[i] = detail::minkowski(points.data.data() + i * points.dim, query.data(), points.dim, p);
  }
}

}  // namespace serial
}  // namespace dtok::kernels
