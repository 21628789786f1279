#include <cmath>

#include "doctest.h"
#include "dtok/decoder.hpp"
#include "dtok/error.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace dtok;
using namespace dtok::testing;

namespace {

struct Problem {
  FeatureTensor z, t;
  std::vector<double> w, b;
};

// t = W z + b + noise
Problem linear_problem(Engine& rng, std::size_t n, std::size_t din, std::size_t dout, double noise) {
  Problem p;
  p.z = uniform_tensor(rng, 1, n, din);
  std::normal_distribution<double> g(0.0, 1.0);
  p.w.resize(dout * din);
  p.b.resize(dout);
  for (auto& v : p.w) v = g(rng);
  for (auto& v : p.b) v = g(rng);
  std::vector<float> t(n * dout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < dout; ++r) {
      double s = p.b[r] + noise * g(rng);
      for (std::size_t c = 0; c < din; ++c) s += p.w[r * din + c] * p.z.token(i)[c];
      t[i * dout + r] = static_cast<float>(s);
    }
  p.t = FeatureTensor(1, n, dout, std::move(t));
  return p;
}

double weight_norm(const RidgeDecoder& d) {
  double s = 0;
  for (float v : d.map.matrix) s += double(v) * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("noise-free linear data is recovered exactly at lambda 0") {
  Engine rng(51);
  const auto p = linear_problem(rng, 400, 10, 5, 0.0);
  const auto d = fit_ridge({p.z}, {p.t}, 0.0, 0);
  CHECK(mean_squared_residual(d, p.z, p.t) < 1e-8);
  for (std::size_t i = 0; i < p.w.size(); ++i) CHECK(d.map.matrix[i] == doctest::Approx(p.w[i]).epsilon(1e-6).scale(1));
  for (std::size_t r = 0; r < 5; ++r) CHECK(d.map.bias[r] == doctest::Approx(p.b[r]).epsilon(1e-5).scale(1));
}

TEST_CASE("huge lambda shrinks W to zero and b to the target mean") {
  Engine rng(52);
  const auto p = linear_problem(rng, 300, 6, 3, 0.1);
  const auto d = fit_ridge({p.z}, {p.t}, 1e12, 0);
  CHECK(weight_norm(d) < 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0;
    for (std::size_t i = 0; i < 300; ++i) m += p.t.token(i)[r];
    CHECK(d.map.bias[r] == doctest::Approx(m / 300).epsilon(1e-5));
  }
}

TEST_CASE("closed form agrees with gradient descent") {
  Engine rng(53);
  const auto p = linear_problem(rng, 120, 4, 2, 0.3);
  const double lambda = 0.1;
  const auto d = fit_ridge({p.z}, {p.t}, lambda, 0);
  const auto gd = gradient_descent_ridge(p.z, p.t, lambda, 20000, 0.5);
  for (std::size_t i = 0; i < gd.w.size(); ++i) CHECK(std::abs(d.map.matrix[i] - gd.w[i]) < 1e-4);
  for (std::size_t r = 0; r < 2; ++r) CHECK(std::abs(d.map.bias[r] - gd.b[r]) < 1e-4);
}

TEST_CASE("singular scatter at lambda 0 is reported, positive lambda recovers") {
  Engine rng(54);
  // Duplicate column: rank deficient.
  const auto base = uniform_tensor(rng, 1, 50, 3);
  std::vector<float> z;
  for (std::size_t i = 0; i < 50; ++i) {
    auto tok = base.token(i);
    z.insert(z.end(), {tok[0], tok[1], tok[2], tok[0]});
  }
  const FeatureTensor zt(1, 50, 4, std::move(z));
  const auto t = uniform_tensor(rng, 1, 50, 2);
  try {
    fit_ridge({zt}, {t}, 0.0, 0);
    FAIL("expected singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingular);
  }
  CHECK_NOTHROW(fit_ridge({zt}, {t}, 1e-3, 0));
  CHECK_THROWS_AS(fit_ridge({zt}, {t}, -1.0, 0), Error);
}

TEST_CASE("training residual grows and weights shrink with lambda") {
  Engine rng(55);
  const auto p = linear_problem(rng, 200, 8, 3, 0.5);
  double prev_res = -1, prev_norm = 1e300;
  for (double lambda : {0.0, 0.01, 0.1, 1.0, 10.0, 100.0}) {
    const auto d = fit_ridge({p.z}, {p.t}, lambda, 0);
    const double res = mean_squared_residual(d, p.z, p.t);
    CHECK(res >= prev_res - 1e-9);
    CHECK(weight_norm(d) <= prev_norm + 1e-9);
    prev_res = res;
    prev_norm = weight_norm(d);
  }
}

TEST_CASE("never worse than the constant predictor") {
  Engine rng(56);
  const auto z = uniform_tensor(rng, 1, 100, 5);
  const auto t = uniform_tensor(rng, 1, 100, 3);  // independent of z
  const auto constant = fit_ridge({z}, {t}, 1e15, 0);
  for (double lambda : {0.0, 0.1, 10.0}) {
    const auto d = fit_ridge({z}, {t}, lambda, 0);
    CHECK(mean_squared_residual(d, z, t) <= mean_squared_residual(constant, z, t) + 1e-9);
  }
}

TEST_CASE("prediction is affine in the latent") {
  Engine rng(57);
  const auto p = linear_problem(rng, 100, 4, 3, 0.2);
  const auto d = fit_ridge({p.z}, {p.t}, 0.5, 0);
  const FeatureTensor a(1, 1, 4, {0.1f, 0.2f, -0.3f, 0.4f});
  const FeatureTensor b(1, 1, 4, {-0.5f, 0.25f, 0.5f, 0.0f});
  const FeatureTensor ab(1, 1, 4, {0.1f + 2 * -0.5f, 0.2f + 2 * 0.25f, -0.3f + 2 * 0.5f, 0.4f});
  const FeatureTensor zero(1, 1, 4);
  const auto pa = predict_patches(d, a), pb = predict_patches(d, b), pab = predict_patches(d, ab),
             p0 = predict_patches(d, zero);
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(pab.data()[r] == doctest::Approx(pa.data()[r] + 2 * (pb.data()[r] - p0.data()[r])).epsilon(1e-5));
}

TEST_CASE("accumulated normal equations merge like a single pass") {
  Engine rng(58);
  const auto p = linear_problem(rng, 90, 3, 2, 0.3);
  const auto z1 = FeatureTensor(1, 40, 3, std::vector<float>(p.z.data().begin(), p.z.data().begin() + 120));
  const auto z2 = FeatureTensor(1, 50, 3, std::vector<float>(p.z.data().begin() + 120, p.z.data().end()));
  const auto t1 = FeatureTensor(1, 40, 2, std::vector<float>(p.t.data().begin(), p.t.data().begin() + 80));
  const auto t2 = FeatureTensor(1, 50, 2, std::vector<float>(p.t.data().begin() + 80, p.t.data().end()));
  NormalEquations a(3, 2), b(3, 2), all(3, 2);
  a.add(z1, t1);
  b.add(z2, t2);
  all.add(p.z, p.t);
  a.merge(b);
  const auto da = fit_ridge(a, 0.2, 0), dall = fit_ridge(all, 0.2, 0);
  for (std::size_t i = 0; i < da.map.matrix.size(); ++i)
    CHECK(da.map.matrix[i] == doctest::Approx(dall.map.matrix[i]).epsilon(1e-6));
  CHECK(relative_lambda(all, 1.0) == doctest::Approx(all.mean_latent_scatter()));
}

TEST_CASE("patch decoding reconstructs a linear image model") {
  Engine rng(59);
  const std::size_t patch = 4;
  // Images whose patches are affine in a 6-dim latent.
  const auto proj = uniform_tensor(rng, 1, patch * patch * 3, 6, -0.05f, 0.05f);
  std::vector<FeatureTensor> zs, ts;
  for (int k = 0; k < 4; ++k) {
    const auto z = uniform_tensor(rng, 3, 5, 6);
    std::vector<float> pix;
    for (std::size_t i = 0; i < z.tokens(); ++i)
      for (std::size_t r = 0; r < patch * patch * 3; ++r) {
        double s = 0.5;
        for (std::size_t c = 0; c < 6; ++c) s += proj.token(r)[c] * z.token(i)[c];
        pix.push_back(static_cast<float>(s));
      }
    zs.push_back(z);
    ts.push_back(FeatureTensor(3, 5, patch * patch * 3, std::move(pix)));
  }
  const auto d = fit_ridge(zs, ts, 0.0, patch);
  const Image img = decode(d, zs[0]);
  CHECK(img.height == 12);
  CHECK(img.width == 20);
  const Image truth = assemble_patches(ts[0], patch);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(img.data[i] == doctest::Approx(truth.data[i]).epsilon(1e-4));

  TempDir dir;
  save_decoder(dir / "d.dtok", d);
  const auto back = load_decoder(dir / "d.dtok");
  CHECK(back.map == d.map);
  CHECK(back.patch_size == patch);
}

TEST_CASE("decode clamps to the unit range") {
  RidgeDecoder d;
  d.patch_size = 1;
  d.map = LinearMap{1, 3, {10, -10, 0}, {0, 0, 0.5f}};
  const Image img = decode(d, FeatureTensor(1, 1, 1, {1.0f}));
  CHECK(img.data == std::vector<double>{1.0, 0.0, 0.5});
}

TEST_CASE("patch extraction round trip and PPM IO") {
  Image img(8, 12);
  Engine rng(60);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : img.data) v = byte(rng) / 255.0;
  const auto patches = extract_patches(img, 4);
  CHECK(patches.grid_h() == 2);
  CHECK(patches.grid_w() == 3);
  CHECK(patches.channels() == 48);
  const auto rebuilt = assemble_patches(patches, 4);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(rebuilt.data[i] == static_cast<float>(img.data[i]));
  CHECK_THROWS_AS(extract_patches(img, 5), Error);

  TempDir dir;
  write_ppm(dir / "x.ppm", img);
  const auto back = read_ppm(dir / "x.ppm");
  CHECK(back.height == 8);
  CHECK(back.width == 12);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]));
}
