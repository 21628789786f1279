#include <cmath>

#include "doctest.h"
#include "dtok/kernels.hpp"
#include "dtok/parallel.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace dtok;
namespace k = dtok::kernels;

TEST_CASE("parallel nearest search is bit-identical to serial for any worker count") {
  dtok::testing::Engine rng(11);
  const auto tokens = dtok::testing::uniform_tensor(rng, 1, 700, 24);
  const auto book = dtok::testing::uniform_tensor(rng, 1, 90, 24);
  std::vector<double> w(24);
  for (std::size_t c = 0; c < w.size(); ++c) w[c] = 1.0 / (1.0 + static_cast<double>(c));

  for (bool weighted : {false, true}) {
    const k::NearestQuery q{{tokens.data(), 700, 24}, {book.data(), 90, 24},
                            weighted ? std::span<const double>(w) : std::span<const double>()};
    std::vector<std::uint32_t> is(700), ip(700);
    std::vector<double> ds(700), dp(700);
    k::serial::assign_nearest(q, is, ds);
    for (int threads : {1, 3, 8}) {
      set_worker_count(threads);
      k::parallel::assign_nearest(q, ip, dp);
      CHECK(is == ip);
      CHECK(ds == dp);
    }
    const auto oracle = dtok::testing::brute_nearest(tokens, std::vector<float>(book.data().begin(), book.data().end()),
                                                     90, weighted ? w : std::vector<double>{});
    for (std::size_t i = 0; i < 700; ++i) REQUIRE(oracle[i].index == is[i]);
  }
}

TEST_CASE("parallel Gram accumulation matches serial bit for bit") {
  dtok::testing::Engine rng(5);
  const auto x = dtok::testing::uniform_tensor(rng, 1, 1000, 13);
  std::vector<double> s1(13, 0.0), g1(169, 0.0), s2(13, 0.0), g2(169, 0.0);
  k::serial::accumulate_gram({x.data(), 1000, 13}, {s1, g1});
  for (int threads : {1, 4}) {
    set_worker_count(threads);
    std::fill(s2.begin(), s2.end(), 0.0);
    std::fill(g2.begin(), g2.end(), 0.0);
    k::parallel::accumulate_gram({x.data(), 1000, 13}, {s2, g2});
    CHECK(s1 == s2);
    CHECK(g1 == g2);
  }
}

TEST_CASE("pairwise inner-product differences and Minkowski distances agree across backends") {
  dtok::testing::Engine rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> a(50 * 6), b(50 * 4);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  const double s = k::serial::pairwise_inner_abs_diff(a, 6, b, 4, 50);
  set_worker_count(4);
  CHECK(s == k::parallel::pairwise_inner_abs_diff(a, 6, b, 4, 50));

  const auto pts = dtok::testing::uniform_tensor(rng, 1, 300, 7);
  const std::vector<float> q(7, 0.25f);
  for (double p : {1.0, 2.0, 3.5}) {
    std::vector<double> d1(300), d2(300);
    k::serial::minkowski_distances({pts.data(), 300, 7}, q, p, d1);
    k::parallel::minkowski_distances({pts.data(), 300, 7}, q, p, d2);
    CHECK(d1 == d2);
  }
}

TEST_CASE("Minkowski distance closed forms") {
  const std::vector<float> a{0, 0}, b{3, 4};
  CHECK(k::minkowski(a, b, 1.0) == doctest::Approx(7.0));
  CHECK(k::minkowski(a, b, 2.0) == doctest::Approx(5.0));
  CHECK(k::minkowski(a, b, 3.0) == doctest::Approx(std::cbrt(27.0 + 64.0)));
}
