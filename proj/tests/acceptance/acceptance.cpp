// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>

#include "dtok/codebook.hpp"
#include "dtok/decoder.hpp"
#include "dtok/diagnostics.hpp"
#include "dtok/error.hpp"
#include "dtok/parallel.hpp"
#include "dtok/pca.hpp"
#include "dtok/random.hpp"
#include "dtok/tensor_io.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace dtok;
using namespace dtok::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<float> flat(const FeatureTensor& t) { return {t.data().begin(), t.data().end()}; }

Outcome lookup_oracle() {
  set_worker_count(1);
  Engine rng(1001);
  const auto tokens = uniform_tensor(rng, 1, 10000, 64);
  const auto entries = uniform_tensor(rng, 1, 1024, 64);
  const auto book = Codebook::from_entries(CodebookRole::kSemantic, 1024, 64, flat(entries));
  const auto uniform = ChannelWeights::uniform(64);

  const auto t0 = Clock::now();
  const auto weighted = assign(tokens, book, &uniform);
  const auto plain = assign(tokens, book, nullptr);
  const double elapsed = seconds_since(t0);

  const auto oracle_w = brute_nearest(tokens, flat(entries), 1024, uniform.weights);
  const auto oracle_p = brute_nearest(tokens, flat(entries), 1024, {});
  std::size_t match_w = 0, match_p = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    match_w += weighted.index[i] == oracle_w[i].index;
    match_p += plain.index[i] == oracle_p[i].index;
  }
  return {match_w == 10000 && match_p == 10000 && elapsed < 10.0,
          fmt("weighted %zu/10000, plain %zu/10000 match, %.2f s single-threaded", match_w, match_p, elapsed)};
}

Outcome argmin_invariance() {
  Rng rng(derive_seed(1002, 0));
  std::size_t changed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 4 + uniform_index(rng, 29), k = 2 + uniform_index(rng, 63);
    std::vector<float> token(d), entries(k * d);
    for (auto& v : token) v = static_cast<float>(2 * uniform01(rng) - 1);
    for (auto& v : entries) v = static_cast<float>(2 * uniform01(rng) - 1);
    std::vector<double> w(d);
    for (auto& v : w) v = uniform01(rng) + 1e-3;
    const auto book = Codebook::from_entries(CodebookRole::kSemantic, k, d, entries);
    const auto base = weighted_lookup(token, book, ChannelWeights{w}).index;
    for (double s : {0.1, 10.0}) {
      ChannelWeights scaled{w};
      for (auto& v : scaled.weights) v *= s;
      changed += weighted_lookup(token, book, scaled).index != base;
    }
  }
  return {changed == 0, fmt("1000 triples x scales {0.1, 1, 10}: %zu index changes", changed)};
}

Outcome pca_correctness() {
  const std::size_t c = 8, n = 100000;
  std::vector<double> planted(c), stddev(c);
  for (std::size_t i = 0; i < c; ++i) {
    planted[i] = 4.0 * std::pow(0.25, static_cast<double>(i));
    stddev[i] = std::sqrt(planted[i]);
  }
  Engine rng(1003);
  const auto data = gaussian_tensor(rng, 1, n, stddev);
  const PcaModel model = pca_finalize(pca_accumulate(CovarianceAccumulator{}, data));
  double worst_var = 0, worst_eig = 0;
  for (std::size_t i = 0; i < c; ++i) {
    worst_var = std::max(worst_var, std::abs(model.channel_variances[i] / planted[i] - 1));
    worst_eig = std::max(worst_eig, std::abs(model.eigenvalues[i] / planted[i] - 1));
  }
  const double trace = std::accumulate(model.channel_variances.begin(), model.channel_variances.end(), 0.0);
  const double eig_sum = std::accumulate(model.eigenvalues.begin(), model.eigenvalues.end(), 0.0);
  const double trace_err = std::abs(eig_sum - trace) / trace;
  return {worst_var < 0.05 && worst_eig < 0.05 && trace_err < 1e-6,
          fmt("max rel error: variances %.4f, eigenvalues %.4f; trace rel diff %.2e", worst_var, worst_eig, trace_err)};
}

Outcome concentration() {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> dims{2, 16, 128, 1024};
  const std::vector<double> norms{1.0, 2.0};
  const auto rows = concentration_sweep(dims, norms, 10000, 3, 1004);
  const double elapsed = seconds_since(t0);
  bool ok = rows.size() == 8;
  std::string detail;
  for (std::size_t i = 0; ok && i < rows.size(); ++i) {
    if (rows[i].degenerate) ok = false;
    if (i % 4 != 0 && !(rows[i].mean_contrast < rows[i - 1].mean_contrast)) ok = false;
    detail += fmt("%sp=%g d=%zu:%.4g", i ? " " : "", rows[i].p, rows[i].dimension, rows[i].mean_contrast);
  }
  return {ok && elapsed < 60.0, detail + fmt("; %.2f s", elapsed)};
}

Outcome codebook_training() {
  Engine rng(1005);
  const auto mix = lattice_mixture(rng, 16, 8, 500, 10.0, 1.0);
  const std::uint64_t seed = 1005;
  Codebook book =
      init_codebook(mix.tokens, 16, derive_seed(seed, kStreamTextureInit), CodebookRole::kTexture, nullptr, 8);
  EpochStats stats;
  for (int e = 0; e < 50; ++e) {
    auto out = train_codebook_epoch(std::move(book), mix.tokens, nullptr, kDefaultDecay,
                                    derive_seed(seed, kStreamTextureTrain));
    book = std::move(out.book);
    stats = out.stats;
  }
  std::set<std::size_t> matched;
  double worst = 0;
  for (std::size_t k = 0; k < 16; ++k) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t m = 0; m < 16; ++m) {
      double d = 0;
      for (std::size_t c = 0; c < 8; ++c) d += std::pow(book.entry(k)[c] - mix.means[m][c], 2);
      if (d < best) best = d, arg = m;
    }
    matched.insert(arg);
    worst = std::max(worst, std::sqrt(best) / mix.spacing);
  }
  const auto health = codebook_health(assign(mix.tokens, book, nullptr).index, 16);
  return {matched.size() == 16 && worst < 0.05 && health.perplexity >= 14.4 && stats.dead_entries == 0,
          fmt("distinct means %zu/16, max offset %.4f x spacing, perplexity %.3f, dead %zu", matched.size(), worst,
              health.perplexity, stats.dead_entries)};
}

// 32 high-variance clustered channels hidden among 736 unit-variance noise channels.
FeatureTensor semantic_plus_noise(Engine& rng, const std::vector<std::vector<double>>& centers, std::size_t n) {
  const std::size_t sem = 32, total = 768;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
  std::vector<float> data(n * total);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mu = centers[pick(rng)];
    for (std::size_t c = 0; c < total; ++c)
      data[i * total + c] = static_cast<float>(c < sem ? mu[c] + 0.5 * g(rng) : g(rng));
  }
  return FeatureTensor(1, n, total, std::move(data));
}

Outcome reweighting_benefit() {
  Engine rng(1006);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<std::vector<double>> centers(512, std::vector<double>(32));
  for (auto& c : centers)
    for (auto& v : c) v = g(rng);
  const auto train = semantic_plus_noise(rng, centers, 4096);
  const auto eval = semantic_plus_noise(rng, centers, 1024);
  const PcaModel pca = pca_finalize(pca_accumulate(CovarianceAccumulator{}, train));

  const std::uint64_t seed = 1006;
  auto run_arm = [&](const ChannelWeights& w) {
    Codebook book = init_codebook(train, 256, derive_seed(seed, kStreamSemanticInit), CodebookRole::kSemantic, &w);
    for (int e = 0; e < 8; ++e)
      book = train_codebook_epoch(std::move(book), train, &w, kDefaultDecay, derive_seed(seed, kStreamSemanticTrain)).book;
    const auto a = assign(eval, book, &w);
    std::vector<float> codes;
    for (auto k : a.index) codes.insert(codes.end(), book.entry(k).begin(), book.entry(k).end());
    return topk_channel_losses(eval, FeatureTensor(1, eval.tokens(), 768, std::move(codes)), pca, 32);
  };
  const LossPair weighted = run_arm(channel_weights(pca));
  const LossPair uniform = run_arm(ChannelWeights::uniform(768));
  const double cos_gain = 1 - weighted.cosine / uniform.cosine;
  const double mat_gain = 1 - weighted.matrix / uniform.matrix;
  return {weighted.cosine < uniform.cosine && weighted.matrix < uniform.matrix,
          fmt("top-32 cosine %.4g vs %.4g (%.1f%% lower), matrix %.4g vs %.4g (%.1f%% lower)", weighted.cosine,
              uniform.cosine, 100 * cos_gain, weighted.matrix, uniform.matrix, 100 * mat_gain)};
}

Outcome channel_subset_decoding() {
  const std::size_t c = 96, out = 48;
  Engine rng(1007);
  // Long-tail variances in shuffled channel order.
  auto stddev = long_tail_stddev(c, 0.93);
  std::shuffle(stddev.begin(), stddev.end(), rng);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(out * c), b(out);
  for (auto& v : a) v = g(rng) / std::sqrt(static_cast<double>(c));
  for (auto& v : b) v = 0.5 + 0.1 * g(rng);
  auto pixels = [&](const FeatureTensor& z) {
    std::vector<float> t(z.tokens() * out);
    for (std::size_t i = 0; i < z.tokens(); ++i)
      for (std::size_t r = 0; r < out; ++r) {
        double s = b[r] + 0.01 * g(rng);
        for (std::size_t k = 0; k < c; ++k) s += a[r * c + k] * z.token(i)[k];
        t[i * out + r] = static_cast<float>(s);
      }
    return FeatureTensor(z.grid_h(), z.grid_w(), out, std::move(t));
  };
  const auto z_train = gaussian_tensor(rng, 1, 4000, stddev);
  const auto z_test = gaussian_tensor(rng, 1, 2000, stddev);
  const auto t_train = pixels(z_train), t_test = pixels(z_test);

  const auto order = rank_channels(pca_finalize(pca_accumulate(CovarianceAccumulator{}, z_train)));
  const std::vector<std::size_t> top(order.begin(), order.begin() + c / 2), bottom(order.begin() + c / 2, order.end());
  auto mse_for = [&](const std::vector<std::size_t>& channels) {
    const auto ztr = select_channels(z_train, channels), zte = select_channels(z_test, channels);
    NormalEquations eq(ztr.channels(), out);
    eq.add(ztr, t_train);
    const auto dec = fit_ridge(eq, relative_lambda(eq), 0);
    return mean_squared_residual(dec, zte, t_test);
  };
  const double mse_top = mse_for(top), mse_bottom = mse_for(bottom);
  return {mse_top < mse_bottom, fmt("held-out MSE top-half %.5g vs bottom-half %.5g", mse_top, mse_bottom)};
}

Outcome loss_arithmetic() {
  Engine rng(1008);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(2, 24), side(1, 5);
    const std::size_t h = side(rng), w = side(rng), cd = dim(rng), cs = dim(rng);
    const auto deep = uniform_tensor(rng, h, w, cd), shallow = uniform_tensor(rng, h, w, cs);
    std::vector<double> raw(cd);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : raw) v = u(rng);
    const auto weights = ChannelWeights::from_values(raw);
    const auto sem = Codebook::from_entries(CodebookRole::kSemantic, 7, cd, flat(uniform_tensor(rng, 1, 7, cd)));
    const auto tex = Codebook::from_entries(CodebookRole::kTexture, 5, cs, flat(uniform_tensor(rng, 1, 5, cs)));
    const auto q = quantize_dual(deep, shallow, sem, tex, weights);
    const auto l = vq_losses(deep, shallow, q, weights, kDefaultBeta);
    const double s = scalar_vq_term(deep, q.semantic_codes, weights.weights);
    const double t = scalar_vq_term(shallow, q.texture_codes, {});
    worst = std::max({worst, std::abs(l.semantic() - 1.25 * s), std::abs(l.texture() - 1.25 * t)});
  }

  const auto deep = uniform_tensor(rng, 3, 3, 10), shallow = uniform_tensor(rng, 3, 3, 4);
  const auto w = ChannelWeights::from_values(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  auto q = quantize_dual(deep, shallow, Codebook::from_entries(CodebookRole::kSemantic, 9, 10, flat(deep)),
                         Codebook::from_entries(CodebookRole::kTexture, 9, 4, flat(shallow)), w);
  const auto zero = vq_losses(deep, shallow, q, w);
  const bool exact_zero = zero.total() == 0.0;

  const float delta = 0.25f;
  for (auto& v : q.semantic_codes.data()) v += delta;
  double expected = 0;
  for (double wc : w.weights) expected += (delta * wc) * (delta * wc);
  expected *= 1.25;
  const double uniform_err = std::abs(vq_losses(deep, shallow, q, w).semantic() - expected);
  return {worst <= 1e-6 && exact_zero && uniform_err <= 1e-6,
          fmt("max |loss - scalar loop| %.2e over 100 instances; F==q total %.1f; uniform-delta error %.2e", worst,
              zero.total(), uniform_err)};
}

Outcome metric_closed_forms() {
  Engine rng(1009);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  Image x(32, 32), y(32, 32);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    x.data[i] = u(rng);
    y.data[i] = x.data[i] + 0.1;
  }
  const double p = psnr(x, y);
  const double s = ssim(x, x);
  // Power-of-two alpha scales f32 values exactly, so both losses must vanish
  // exactly; other alpha round alpha*z to f32, so the per-term mean is held
  // to float32 precision.
  const auto z = uniform_tensor(rng, 6, 6, 20, 0.05f, 1.0f);
  const double tokens = 36.0, pairs = 36.0 * 36.0;
  double exact_worst = 0, rounded_worst = 0;
  for (float alpha : {0.5f, 2.0f, 3.0f, 7.25f}) {
    std::vector<float> scaled = flat(z);
    for (auto& v : scaled) v *= alpha;
    const FeatureTensor zh(6, 6, 20, std::move(scaled));
    const double cos = cosine_similarity_loss(z, zh), mat = distance_matrix_loss(z, zh);
    if (alpha == 0.5f || alpha == 2.0f)
      exact_worst = std::max({exact_worst, cos, mat});
    else
      rounded_worst = std::max({rounded_worst, cos / tokens, mat / pairs});
  }
  return {std::abs(p - 20.0) <= 1e-9 && std::abs(s - 1.0) <= 1e-12 && exact_worst == 0.0 && rounded_worst <= 1e-6,
          fmt("PSNR %.12f dB; SSIM(x,x) %.15f; losses for alpha in {0.5, 2}: %.1e; per-term mean for alpha in "
              "{3, 7.25}: %.1e",
              p, s, exact_worst, rounded_worst)};
}

Outcome interchange() {
  TempDir dir;
  Rng rng(derive_seed(1010, 0));
  std::size_t exact = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + uniform_index(rng, 8), w = 1 + uniform_index(rng, 8), c = 1 + uniform_index(rng, 64);
    std::vector<float> data(h * w * c);
    for (auto& v : data) {
      // Arbitrary finite bit patterns, not only values from a nice range.
      std::uint32_t bits;
      do bits = static_cast<std::uint32_t>(rng()); while (((bits >> 23) & 0xff) == 0xff);
      std::memcpy(&v, &bits, 4);
    }
    const FeatureTensor t(h, w, c, data);
    const fs::path p = dir / ("t" + std::to_string(i % 10) + ".dtok");
    write_tensor(p, t);
    const auto back = read_tensor(p);
    exact += back.grid_h() == h && back.grid_w() == w && back.channels() == c &&
             std::memcmp(back.data().data(), data.data(), data.size() * 4) == 0;
  }

  const FeatureTensor base(2, 2, 8, std::vector<float>(32, 1.5f));
  const auto good = encode(RawTensor{TensorKind::kFeature, DType::kF32, {2, 2, 8}, floats_to_words(base.data())});
  auto code_of = [](std::vector<std::uint8_t> bytes) {
    try {
      decode(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  struct Case {
    const char* name;
    std::function<void(std::vector<std::uint8_t>&)> corrupt;
    ErrorCode expect;
  };
  const std::vector<Case> cases{
      {"bad magic", [](auto& b) { b[0] = 'X'; }, ErrorCode::kBadMagic},
      {"version", [](auto& b) { b[4] = 7; }, ErrorCode::kVersionMismatch},
      {"short payload", [](auto& b) { b.resize(b.size() - 3); }, ErrorCode::kTruncated},
      {"short header", [](auto& b) { b.resize(14); }, ErrorCode::kTruncated},
      {"rank overflow", [](auto& b) { b[8] = 64; }, ErrorCode::kDimensionOverflow},
      {"dims overflow", [](auto& b) { std::fill(b.begin() + 12, b.begin() + 24, 0xff); }, ErrorCode::kDimensionOverflow},
  };
  std::size_t rejected = 0;
  std::string misses;
  for (const auto& c : cases) {
    auto b = good;
    c.corrupt(b);
    const ErrorCode got = code_of(b);
    if (got == c.expect) ++rejected;
    else misses += std::string(" ") + c.name + "->" + std::string(to_string(got));
  }
  return {exact == 1000 && rejected == cases.size(),
          fmt("%zu/1000 bit-exact round trips; %zu/%zu corrupted headers rejected with the expected class", exact,
              rejected, cases.size()) + misses};
}

}  // namespace

int main() {
  configure_threads_from_env();
  struct Criterion {
    const char* name;
    Outcome (*check)();
  };
  const Criterion criteria[] = {
      {"lookup-oracle-equivalence", lookup_oracle},
      {"argmin-weight-scale-invariance", argmin_invariance},
      {"pca-planted-covariance", pca_correctness},
      {"distance-concentration", concentration},
      {"codebook-training-mixture", codebook_training},
      {"reweighting-benefit", reweighting_benefit},
      {"channel-subset-decoding", channel_subset_decoding},
      {"vq-loss-arithmetic", loss_arithmetic},
      {"metric-closed-forms", metric_closed_forms},
      {"interchange-format", interchange},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
  return failures == 0 ? 0 : 1;
}
