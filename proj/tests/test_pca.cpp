#include <cmath>
#include <numeric>

#include "doctest.h"
#include "dtok/error.hpp"
#include "dtok/pca.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace dtok;
using namespace dtok::testing;

namespace {

CovarianceAccumulator accumulate(const FeatureTensor& t) { return pca_accumulate(CovarianceAccumulator(t.channels()), t); }

}  // namespace

TEST_CASE("accumulating two unit tokens") {
  const FeatureTensor t(1, 2, 2, {1, 0, 0, 1});
  const auto acc = accumulate(t);
  CHECK(acc.count() == 2);
  CHECK(acc.sum()[0] == 1.0);
  CHECK(acc.sum()[1] == 1.0);
  CHECK(acc.outer_upper()[1] == 0.0);
}

TEST_CASE("merge is commutative and associative") {
  Engine rng(1);
  const auto a = accumulate(uniform_tensor(rng, 3, 4, 5));
  const auto b = accumulate(uniform_tensor(rng, 2, 7, 5));
  const auto c = accumulate(uniform_tensor(rng, 5, 1, 5));
  const auto ab = merge(a, b), ba = merge(b, a);
  CHECK(ab.count() == ba.count());
  CHECK(std::equal(ab.sum().begin(), ab.sum().end(), ba.sum().begin()));
  CHECK(std::equal(ab.outer_upper().begin(), ab.outer_upper().end(), ba.outer_upper().begin()));

  const auto left = pca_finalize(merge(merge(a, b), c));
  const auto right = pca_finalize(merge(a, merge(b, c)));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(left.eigenvalues[i] == doctest::Approx(right.eigenvalues[i]).epsilon(1e-9));
    CHECK(left.channel_variances[i] == doctest::Approx(right.channel_variances[i]).epsilon(1e-9));
  }
}

TEST_CASE("one-by-one accumulation equals the concatenation oracle") {
  Engine rng(2);
  std::vector<FeatureTensor> parts;
  CovarianceAccumulator acc(6);
  for (int i = 0; i < 10; ++i) {
    parts.push_back(uniform_tensor(rng, 2, 3, 6, -2.0f, 3.0f));
    acc.add(parts.back());
  }
  const auto oracle = two_pass_covariance(parts, 6);
  const auto cov = acc.covariance();
  for (std::size_t i = 0; i < cov.size(); ++i) CHECK(cov[i] == doctest::Approx(oracle[i]).epsilon(1e-10));
  const auto whole = accumulate(concat_tokens(parts)).covariance();
  for (std::size_t i = 0; i < cov.size(); ++i) CHECK(cov[i] == doctest::Approx(whole[i]).epsilon(1e-12));
}

TEST_CASE("axis-aligned generator recovers its variances and axes") {
  // Half the tokens are (a, 0) with Var(a) = 4 (plus mean), half are (0, b) with Var(b) = 1.
  // Closed form for the mixture: Var(x0) = 4/2 + E[a]^2/4 with E[a] = 0 gives 2, Var(x1) = 0.5.
  Engine rng(3);
  std::normal_distribution<double> n01(0, 1);
  const std::size_t n = 200000;
  std::vector<float> data(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 2 == 0) data[2 * i] = static_cast<float>(2.0 * n01(rng));
    else data[2 * i + 1] = static_cast<float>(n01(rng));
  }
  const auto model = pca_finalize(accumulate(FeatureTensor(1, n, 2, std::move(data))));
  CHECK(model.eigenvalues[0] == doctest::Approx(2.0).epsilon(0.02));
  CHECK(model.eigenvalues[1] == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::abs(model.component(0)[0]) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(model.eigenvalues[0] / model.eigenvalues[1] == doctest::Approx(4.0).epsilon(0.03));
}

TEST_CASE("independent (a, b) draws give eigenvalues [4, 1]") {
  Engine rng(4);
  const auto t = gaussian_tensor(rng, 1, 100000, {2.0, 1.0});
  const auto model = pca_finalize(accumulate(t));
  CHECK(model.eigenvalues[0] == doctest::Approx(4.0).epsilon(0.03));
  CHECK(model.eigenvalues[1] == doctest::Approx(1.0).epsilon(0.03));
  CHECK(std::abs(model.component(0)[0]) > 0.999);
}

TEST_CASE("constant data has zero spectrum and degenerate weights") {
  const FeatureTensor t(1, 10, 3, std::vector<float>(30, 2.5f));
  const auto model = pca_finalize(accumulate(t));
  for (double e : model.eigenvalues) CHECK(e == 0.0);
  try {
    channel_weights(model);
    FAIL("expected degenerate weights");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("isotropic Gaussian has near-equal eigenvalues") {
  Engine rng(5);
  const auto model = pca_finalize(accumulate(gaussian_tensor(rng, 1, 50000, {1.0, 1.0})));
  CHECK(model.eigenvalues[0] / model.eigenvalues[1] == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("finalize invariants: ordering, orthonormal rows, variance conservation") {
  Engine rng(6);
  const auto t = gaussian_tensor(rng, 1, 4000, long_tail_stddev(12, 0.6, 3.0), std::vector<double>(12, 5.0));
  const auto acc = accumulate(t);
  const auto model = pca_finalize(acc);
  for (std::size_t i = 1; i < 12; ++i) CHECK(model.eigenvalues[i] <= model.eigenvalues[i - 1]);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < 12; ++c) dot += model.component(i)[c] * model.component(j)[c];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-5).scale(1.0));
    }
  }
  const auto cov = acc.covariance();
  double trace = 0, sum = 0;
  for (std::size_t i = 0; i < 12; ++i) trace += cov[i * 12 + i];
  for (double e : model.eigenvalues) sum += e;
  CHECK(std::abs(sum - trace) / trace < 1e-6);
}

TEST_CASE("too few samples") {
  CovarianceAccumulator acc(3);
  acc.add(FeatureTensor(1, 1, 3, {1, 2, 3}));
  CHECK_THROWS_AS(pca_finalize(acc), Error);
  CHECK_THROWS_AS(acc.add(FeatureTensor(1, 1, 2)), Error);
}

TEST_CASE("channel weights from per-channel variances") {
  PcaModel m;
  m.channels = 2;
  m.channel_variances = {3.0, 1.0};
  const auto w = channel_weights(m);
  CHECK(w.weights[0] == doctest::Approx(0.75));
  CHECK(w.weights[1] == doctest::Approx(0.25));
  m.channels = 5;
  m.channel_variances.assign(5, 2.0);
  for (double v : channel_weights(m).weights) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("weights on a long-tail spectrum concentrate on few channels") {
  Engine rng(7);
  const auto t = gaussian_tensor(rng, 1, 20000, long_tail_stddev(64, 0.85));
  const auto w = channel_weights(pca_finalize(accumulate(t)));
  CHECK(std::accumulate(w.weights.begin(), w.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  auto order = rank_by_value(w.weights);
  double top8 = 0;
  for (int i = 0; i < 8; ++i) top8 += w.weights[order[i]];
  CHECK(top8 > 0.6);
}

TEST_CASE("rank_channels") {
  PcaModel m;
  m.channels = 3;
  m.channel_variances = {1, 5, 3};
  CHECK(rank_channels(m) == std::vector<std::size_t>{1, 2, 0});
  m.channel_variances = {2, 2, 2};
  CHECK(rank_channels(m) == std::vector<std::size_t>{0, 1, 2});

  Engine rng(8);
  std::uniform_int_distribution<int> small(0, 5);  // plenty of ties
  for (int trial = 0; trial < 50; ++trial) {
    m.channels = 20;
    m.channel_variances.resize(20);
    for (auto& v : m.channel_variances) v = small(rng);
    CHECK(rank_channels(m) == naive_rank(m.channel_variances));
  }
}

TEST_CASE("ranking is unchanged by positive rescaling of the data") {
  Engine rng(9);
  auto t = gaussian_tensor(rng, 1, 3000, long_tail_stddev(10, 0.7));
  const auto r1 = rank_channels(pca_finalize(accumulate(t)));
  for (auto& v : t.data()) v *= 7.5f;
  CHECK(rank_channels(pca_finalize(accumulate(t))) == r1);
}

TEST_CASE("select_channels") {
  Engine rng(10);
  const auto t = uniform_tensor(rng, 4, 4, 768);
  std::vector<std::size_t> top(192);
  std::iota(top.begin(), top.end(), std::size_t{0});
  const auto s = select_channels(t, top);
  CHECK(s.channels() == 192);
  CHECK(s.token(5)[100] == t.token(5)[100]);

  std::vector<std::size_t> all(768);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(select_channels(t, all) == t);

  const std::vector<std::size_t> reversed{2, 0};
  const FeatureTensor small(1, 1, 3, {7, 8, 9});
  CHECK(select_channels(small, reversed).data()[0] == 9.0f);

  CHECK_THROWS_AS(select_channels(t, std::vector<std::size_t>{}), Error);
  CHECK_THROWS_AS(select_channels(t, std::vector<std::size_t>{1, 1}), Error);
  CHECK_THROWS_AS(select_channels(t, std::vector<std::size_t>{768}), Error);
}

TEST_CASE("per-image channel consistency diagnostic") {
  Engine rng(11);
  std::vector<std::vector<std::size_t>> tops;
  auto sd = long_tail_stddev(16, 0.5);
  std::swap(sd[0], sd[13]);  // dominant channel at index 13
  for (int i = 0; i < 20; ++i) tops.push_back(per_image_top_channels(gaussian_tensor(rng, 8, 8, sd), 3));
  CHECK(channel_presence_rate(tops, 13) == 1.0);
  CHECK(channel_presence_rate(tops, 15) < 0.5);
}

TEST_CASE("PCA model and weights persist") {
  TempDir dir;
  Engine rng(12);
  const auto model = pca_finalize(accumulate(gaussian_tensor(rng, 1, 500, long_tail_stddev(6, 0.5))));
  save_pca(dir / "pca.dtok", model);
  const auto back = load_pca(dir / "pca.dtok");
  CHECK(back.sample_count == 500);
  CHECK(back.channels == 6);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(back.eigenvalues[i] == doctest::Approx(model.eigenvalues[i]).epsilon(1e-6));
  save_weights(dir / "w.dtok", channel_weights(back));
  const auto w = load_weights(dir / "w.dtok");
  CHECK(w.size() == 6);
  CHECK_THROWS_AS(load_pca(dir / "w.dtok"), Error);
  CHECK_THROWS_AS(load_weights(dir / "pca.dtok"), Error);
}
