#pragma once

// Hot loops in two flavours. `serial` is the reference implementation kept for
// testing; `parallel` distributes the same per-element arithmetic over OpenMP
// workers. Both evaluate every output element in the same order, so results
// are bit-identical regardless of the worker count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace dtok::kernels {

/// Row-major block of `rows` vectors of length `dim`.
struct MatrixView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const noexcept { return data.subspan(i * dim, dim); }
};

/// Exhaustive nearest-entry search. With non-empty `weights` the distance is
/// sum_c (w_c * (x_c - e_c))^2, otherwise plain squared L2. Ties keep the lowest index.
struct NearestQuery {
  MatrixView tokens;
  MatrixView entries;
  std::span<const double> weights;  // empty for plain lookup
};

/// Streaming sums for a Gram matrix: `sum` has dim entries, `gram` dim*dim
/// entries of which only the upper triangle (i <= j) is updated.
struct GramAccumulation {
  std::span<double> sum;
  std::span<double> gram;
};

namespace serial {

void assign_nearest(const NearestQuery& q, std::span<std::uint32_t> index, std::span<double> distance);
void accumulate_gram(const MatrixView& x, GramAccumulation acc);
/// Sum over (i, j) of |<a_i, a_j> - <b_i, b_j>| for row-normalized a and b (double, row-major).
double pairwise_inner_abs_diff(std::span<const double> a, std::size_t a_dim, std::span<const double> b,
                               std::size_t b_dim, std::size_t n);
void minkowski_distances(const MatrixView& points, std::span<const float> query, double p,
                         std::span<double> out);

}  // namespace serial

namespace parallel {

void assign_nearest(const NearestQuery& q, std::span<std::uint32_t> index, std::span<double> distance);
void accumulate_gram(const MatrixView& x, GramAccumulation acc);
double pairwise_inner_abs_diff(std::span<const double> a, std::size_t a_dim, std::span<const double> b,
                               std::size_t b_dim, std::size_t n);
void minkowski_distances(const MatrixView& points, std::span<const float> query, double p,
                         std::span<double> out);

}  // namespace parallel

/// Distance of one token to one entry under the NearestQuery metric.
double token_distance(std::span<const float> token, std::span<const float> entry,
                      std::span<const double> weights);

/// L_p distance (p >= 1) between two equal-length vectors.
double minkowski(std::span<const float> a, std::span<const float> b, double p);

}  // namespace dtok::kernels
