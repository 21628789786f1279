#include <omp.h>

#include <algorithm>
#include <vector>

#include "dtok/error.hpp"
#include "dtok/kernels.hpp"
#include "kernel_detail.hpp"

namespace dtok::kernels {

namespace parallel {

void assign_nearest(const NearestQuery& q, std::span<std::uint32_t> index, std::span<double> distance) {
  detail::check_nearest_query(q, index.size(), distance.size());
  const std::size_t dim = q.tokens.dim;
  const auto n = static_cast<std::ptrdiff_t>(q.tokens.rows);
  const float* entries = q.entries.data.data();
  const std::size_t k = q.entries.rows;
  const double* w = q.weights.empty() ? nullptr : q.weights.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const float* x = q.tokens.data.data() + i * dim;
    if (w == nullptr) {
      detail::nearest_one<false>(x, entries, k, dim, nullptr, index[i], distance[i]);
    } else {
      detail::nearest_one<true>(x, entries, k, dim, w, index[i], distance[i]);
    }
  }
}

// Tokens are consumed in fixed-size blocks; inside a block each worker owns a
// set of Gram rows, so every element is summed in token order as in serial.
void accumulate_gram(const MatrixView& x, GramAccumulation acc) {
  constexpr std::size_t kBlock = 256;
  const std::size_t dim = x.dim;
  require(acc.sum.size() == dim && acc.gram.size() == dim * dim, ErrorCode::kShapeMismatch,
          "gram accumulator size mismatch");
  for (std::size_t start = 0; start < x.rows; start += kBlock) {
    const std::size_t stop = std::min(x.rows, start + kBlock);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(dim); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      double* g = acc.gram.data() + i * dim;
      double s = acc.sum[i];
      for (std::size_t n = start; n < stop; ++n) {
        const float* row = x.data.data() + n * dim;
        const double xi = row[i];
        s += xi;
        for (std::size_t j = i; j < dim; ++j) g[j] += xi * static_cast<double>(row[j]);
      }
      acc.sum[i] = s;
    }
  }
}

double pairwise_inner_abs_diff(std::span<const double> a, std::size_t a_dim, std::span<const double> b,
                               std::size_t b_dim, std::size_t n) {
  std::vector<double> rows(n, 0.0);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ca = detail::dot(a.data() + i * a_dim, a.data() + j * a_dim, a_dim);
      const double cb = detail::dot(b.data() + i * b_dim, b.data() + j * b_dim, b_dim);
      row += std::abs(ca - cb);
    }
    rows[i] = row;
  }
  double total = 0.0;
  for (double r : rows) total += r;
  return total;
}

void minkowski_distances(const MatrixView& points, std::span<const float> query, double p,
                         std::span<double> out) {
  require(query.size() == points.dim && out.size() == points.rows, ErrorCode::kShapeMismatch,
          "distance buffer mismatch");
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(points.rows); ++i) {
    out[i] = detail::minkowski(points.data.data() + i * points.dim, query.data(), points.dim, p);
  }
}

}  // namespace parallel
}  // namespace dtok::kernels
