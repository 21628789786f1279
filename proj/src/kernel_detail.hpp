#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

namespace dtok::kernels {
struct NearestQuery;
}

namespace dtok::kernels::detail {

void check_nearest_query(const NearestQuery& q, std::size_t index_len, std::size_t distance_len);

inline double plain_sq(const float* x, const float* e, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    const double d = static_cast<double>(x[c]) - static_cast<double>(e[c]);
    acc += d * d;
  }
  return acc;
}

inline double weighted_sq(const float* x, const float* e, const double* w, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    const double d = w[c] * (static_cast<double>(x[c]) - static_cast<double>(e[c]));
    acc += d * d;
  }
  return acc;
}

inline double dot(const double* a, const double* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t c = 0; c < dim; ++c) acc += a[c] * b[c];
  return acc;
}

inline double minkowski(const float* a, const float* b, std::size_t dim, double p) {
  double acc = 0.0;
  if (p == 1.0) {
    for (std::size_t c = 0; c < dim; ++c) acc += std::abs(static_cast<double>(a[c]) - b[c]);
    return acc;
  }
  if (p == 2.0) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = static_cast<double>(a[c]) - b[c];
      acc += d * d;
    }
    return std::sqrt(acc);
  }
  for (std::size_t c = 0; c < dim; ++c) acc += std::pow(std::abs(static_cast<double>(a[c]) - b[c]), p);
  return std::pow(acc, 1.0 / p);
}

// Nearest entry for one token; lowest index wins ties.
template <bool Weighted>
inline void nearest_one(const float* x, const float* entries, std::size_t k, std::size_t dim,
                        const double* w, std::uint32_t& best_index, double& best_distance) {
  std::uint32_t best = 0;
  double best_d = 0.0;
  for (std::size_t e = 0; e < k; ++e) {
    const float* row = entries + e * dim;
    const double d = Weighted ? weighted_sq(x, row, w, dim) : plain_sq(x, row, dim);
    if (e == 0 || d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(e);
    }
  }
  best_index = best;
  best_distance = best_d;
}

}  // namespace dtok::kernels::detail
