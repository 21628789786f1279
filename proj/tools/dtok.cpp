// dtok: command-line driver for the feature tokenization pipeline.
//
// Directory conventions
//   features: <stem>.first.dtok (shallow layer) and <stem>.last.dtok (deep layer)
//   models:   pca.dtok, weights.dtok, projection.dtok, semantic.dtok, texture.dtok,
//             decoder.<variant>.dtok
//   latents:  <stem>.idx.dtok, <stem>.ae.dtok, <stem>.vq.dtok
//   images:   <stem>.ppm
// A stem is the file name up to its first '.'; directories are read in sorted order.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtok/codebook.hpp"
#include "dtok/decoder.hpp"
#include "dtok/diagnostics.hpp"
#include "dtok/error.hpp"
#include "dtok/image.hpp"
#include "dtok/latent.hpp"
#include "dtok/parallel.hpp"
#include "dtok/pca.hpp"
#include "dtok/random.hpp"
#include "dtok/report.hpp"
#include "dtok/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace dtok;

namespace {

constexpr const char* kFirstSuffix = ".first.dtok";
constexpr const char* kLastSuffix = ".last.dtok";

std::string stem_of(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.substr(0, name.find('.'));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// stem -> path for files in dir whose names end with suffix, sorted by stem.
std::map<std::string, fs::path> scan(const fs::path& dir, const std::string& suffix) {
  require(fs::is_directory(dir), ErrorCode::kIo, dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (ends_with(name, suffix) && name.find('.') == name.size() - suffix.size()) out[stem_of(e.path())] = e.path();
  }
  return out;
}

struct FeaturePair {
  std::string stem;
  fs::path first, last;
};

std::vector<FeaturePair> feature_pairs(const fs::path& dir) {
  const auto first = scan(dir, kFirstSuffix);
  const auto last = scan(dir, kLastSuffix);
  std::vector<FeaturePair> out;
  for (const auto& [stem, path] : last) {
    const auto it = first.find(stem);
    require(it != first.end(), ErrorCode::kInvalidArgument, "missing " + stem + kFirstSuffix);
    out.push_back({stem, it->second, path});
  }
  for (const auto& [stem, path] : first)
    require(last.count(stem) == 1, ErrorCode::kInvalidArgument, "missing " + stem + kLastSuffix);
  require(!out.empty(), ErrorCode::kEmpty, "no feature files in " + dir.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::kIo, "cannot create " + dir.string());
}

void verify(bool ok, const fs::path& path) {
  require(ok, ErrorCode::kIo, "re-read of " + path.string() + " does not match what was written");
}

void emit(const Report& report, const fs::path& json, bool rows_to_stdout = true) {
  std::cout << report.text(rows_to_stdout);
  report.save_json(json);
  verify(Report::load_json(json).to_json() == report.to_json(), json);
}

void append_row_text(std::ostream& out, const Report::Json& row) {
  bool first = true;
  for (const auto& [k, v] : row.items()) {
    out << (first ? "" : " ") << k << '=' << Report::format(v);
    first = false;
  }
  out << '\n';
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &pos);
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad integer '" + item + "'");
    }
    require(pos == item.size() && v > 0, ErrorCode::kInvalidArgument, "bad positive integer '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  require(!out.empty(), ErrorCode::kInvalidArgument, "empty list");
  return out;
}

// ---------------------------------------------------------------------------

struct Common {
  fs::path out;
  fs::path models;
  std::uint64_t seed = 0;
};

struct FitPcaOpts {
  fs::path features;
  std::size_t target_dim = kDefaultProjectionDim;
};

int cmd_fit_pca(const Common& c, const FitPcaOpts& o) {
  const auto pairs = feature_pairs(o.features);
  CovarianceAccumulator deep, shallow;
  for (const auto& p : pairs) {
    deep = pca_accumulate(std::move(deep), read_tensor(p.last));
    shallow = pca_accumulate(std::move(shallow), read_tensor(p.first));
  }
  const PcaModel model = pca_finalize(deep);
  const ChannelWeights weights = channel_weights(model);
  const ProjectionFit proj = fit_projection(shallow, o.target_dim);

  ensure_dir(c.out);
  save_pca(c.out / "pca.dtok", model);
  save_weights(c.out / "weights.dtok", weights);
  save_linear_map(c.out / "projection.dtok", proj.map);
  const PcaModel back = load_pca(c.out / "pca.dtok");
  bool same = back.channels == model.channels && back.eigenvalues.size() == model.eigenvalues.size();
  for (std::size_t i = 0; same && i < model.eigenvalues.size(); ++i)
    same = static_cast<float>(back.eigenvalues[i]) == static_cast<float>(model.eigenvalues[i]);
  verify(same, c.out / "pca.dtok");
  verify(load_weights(c.out / "weights.dtok").weights.size() == weights.weights.size(), c.out / "weights.dtok");
  verify(load_linear_map(c.out / "projection.dtok").map == proj.map, c.out / "projection.dtok");

  Report r("fit-pca");
  const double total = std::accumulate(model.eigenvalues.begin(), model.eigenvalues.end(), 0.0);
  r.set("files", pairs.size());
  r.set("tokens", static_cast<std::size_t>(model.sample_count));
  r.set("channels", model.channels);
  r.set("trace", total);
  for (std::size_t i = 0; i < std::min<std::size_t>(3, model.channels); ++i)
    r.set("eigen_head_" + std::to_string(i), model.eigenvalues[i]);
  r.set("eigen_tail", model.eigenvalues.back());
  for (std::size_t k : {8, 32, 64, 128}) {
    if (k > model.channels) break;
    const double top = std::accumulate(model.eigenvalues.begin(), model.eigenvalues.begin() + k, 0.0);
    r.set("top" + std::to_string(k) + "_fraction", total > 0 ? top / total : 0.0);
  }
  r.set("projection_dim", o.target_dim);
  r.set("projection_rank", proj.rank);
  double cumulative = 0;
  for (std::size_t i = 0; i < model.channels; ++i) {
    cumulative += model.eigenvalues[i];
    r.add_row({{"component", i},
               {"eigenvalue", model.eigenvalues[i]},
               {"cumulative_fraction", total > 0 ? cumulative / total : 0.0}});
  }
  emit(r, c.out / "fit-pca.json", false);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  fs::path features;
  std::size_t k = kDefaultCodebookSize;
  std::size_t epochs = 10;
  double decay = kDefaultDecay;
  double dead_threshold = kDefaultDeadThreshold;
  std::size_t init_sample = 65536;
  std::size_t init_restarts = 1;
  bool no_reweight = false;
  std::string texture_source = "projected";
  bool resume = false;
};

struct Datasets {
  FeatureTensor deep, shallow;
};

Datasets load_datasets(const fs::path& dir, const fs::path& models, const std::string& texture_source) {
  const auto pairs = feature_pairs(dir);
  std::optional<LinearMap> proj;
  if (texture_source == "projected") proj = load_linear_map(models / "projection.dtok").map;
  std::vector<FeatureTensor> deep, shallow;
  for (const auto& p : pairs) {
    deep.push_back(read_tensor(p.last));
    auto first = read_tensor(p.first);
    shallow.push_back(proj ? proj->apply(first) : std::move(first));
  }
  return {concat_tokens(deep), concat_tokens(shallow)};
}

ChannelWeights semantic_weights(const fs::path& models, bool no_reweight, std::size_t channels) {
  if (no_reweight) return ChannelWeights::uniform(channels);
  const fs::path path = models / "weights.dtok";
  require(fs::exists(path), ErrorCode::kInvalidArgument,
          "weighted mode needs " + path.string() + " (run fit-pca or pass --no-reweight)");
  auto w = load_weights(path);
  require(w.size() == channels, ErrorCode::kShapeMismatch, "weights do not match the deep channel count");
  return w;
}

FeatureTensor init_subsample(const FeatureTensor& data, std::size_t cap, std::uint64_t seed) {
  const std::size_t n = data.tokens();
  if (cap == 0 || cap >= n) return data;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<float> out;
  out.reserve(cap * data.channels());
  for (std::size_t i : idx) out.insert(out.end(), data.token(i).begin(), data.token(i).end());
  return FeatureTensor(1, cap, data.channels(), std::move(out));
}

void save_checked(const fs::path& path, const Codebook& book) {
  save_codebook(path, book);
  verify(load_codebook(path) == book, path);
}

int cmd_train(const Common& c, const TrainOpts& o) {
  require(o.texture_source == "projected" || o.texture_source == "raw", ErrorCode::kInvalidArgument,
          "--texture-source must be raw or projected");
  require(o.decay > 0 && o.decay < 1, ErrorCode::kInvalidArgument, "--decay must lie in (0, 1)");
  require(o.epochs > 0, ErrorCode::kInvalidArgument, "--epochs must be positive");
  const Datasets data = load_datasets(o.features, c.models, o.texture_source);
  const ChannelWeights weights = semantic_weights(c.models, o.no_reweight, data.deep.channels());

  ensure_dir(c.out);
  const fs::path sem_path = c.out / "semantic.dtok", tex_path = c.out / "texture.dtok";
  Codebook sem, tex;
  if (o.resume && fs::exists(sem_path) && fs::exists(tex_path)) {
    sem = load_codebook(sem_path);
    tex = load_codebook(tex_path);
    require(sem.epoch == tex.epoch, ErrorCode::kInvalidArgument, "checkpoint books are at different epochs");
    require(sem.dim == data.deep.channels() && tex.dim == data.shallow.channels(), ErrorCode::kShapeMismatch,
            "checkpoint does not match the feature dimensions");
  } else {
    sem = init_codebook(init_subsample(data.deep, o.init_sample, derive_seed(c.seed, kStreamInitSample, 0)), o.k,
                        derive_seed(c.seed, kStreamSemanticInit), CodebookRole::kSemantic, &weights, o.init_restarts);
    tex = init_codebook(init_subsample(data.shallow, o.init_sample, derive_seed(c.seed, kStreamInitSample, 1)), o.k,
                        derive_seed(c.seed, kStreamTextureInit), CodebookRole::kTexture, nullptr, o.init_restarts);
    sem.dead_threshold = tex.dead_threshold = o.dead_threshold;
    save_checked(sem_path, sem);
    save_checked(tex_path, tex);
  }

  std::ofstream log(c.out / "train.log", o.resume ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(log), ErrorCode::kIo, "cannot open train.log");
  Report r("train-codebooks");
  EpochStats last_sem, last_tex;
  while (sem.epoch < o.epochs) {
    auto s = train_codebook_epoch(std::move(sem), data.deep, &weights, o.decay, derive_seed(c.seed, kStreamSemanticTrain));
    auto t = train_codebook_epoch(std::move(tex), data.shallow, nullptr, o.decay, derive_seed(c.seed, kStreamTextureTrain));
    sem = std::move(s.book);
    tex = std::move(t.book);
    last_sem = s.stats;
    last_tex = t.stats;
    for (const auto& [name, st] : {std::pair{"semantic", s.stats}, std::pair{"texture", t.stats}}) {
      Report::Json row = {{"epoch", st.epoch},         {"book", name},
                          {"mean_error", st.mean_error}, {"perplexity", st.perplexity},
                          {"utilization", st.utilization}, {"dead", st.dead_entries},
                          {"reseeded", st.reseeded}};
      append_row_text(std::cout, row);
      append_row_text(log, row);
      r.add_row(std::move(row));
    }
    log.flush();
    save_checked(sem_path, sem);
    save_checked(tex_path, tex);
  }
  require(static_cast<bool>(log), ErrorCode::kIo, "write failed for train.log");

  r.set("k", sem.size);
  r.set("epochs", static_cast<std::size_t>(sem.epoch));
  r.set("tokens", data.deep.tokens());
  r.set("weighted", o.no_reweight ? "no" : "yes");
  r.set("texture_source", o.texture_source);
  r.set("semantic_perplexity", last_sem.perplexity);
  r.set("texture_perplexity", last_tex.perplexity);
  r.set("semantic_dead", last_sem.dead_entries);
  r.set("texture_dead", last_tex.dead_entries);
  emit(r, c.out / "train-codebooks.json", false);
  return 0;
}

// ---------------------------------------------------------------------------

struct QuantizeOpts {
  fs::path features;
  bool no_reweight = false;
  std::string texture_source = "projected";
  fs::path diff_against;
};

int cmd_quantize(const Common& c, const QuantizeOpts& o) {
  require(o.texture_source == "projected" || o.texture_source == "raw", ErrorCode::kInvalidArgument,
          "--texture-source must be raw or projected");
  const auto pairs = feature_pairs(o.features);
  const Codebook sem = load_codebook(c.models / "semantic.dtok");
  const Codebook tex = load_codebook(c.models / "texture.dtok");
  const LinearMap proj = load_linear_map(c.models / "projection.dtok").map;
  const ChannelWeights weights = semantic_weights(c.models, o.no_reweight, sem.dim);

  ensure_dir(c.out);
  std::vector<std::uint32_t> all_sem, all_tex;
  double sem_dist = 0, tex_dist = 0;
  std::size_t differing = 0, compared = 0;
  Report r("quantize");
  for (const auto& p : pairs) {
    const FeatureTensor deep = read_tensor(p.last);
    const FeatureTensor first = read_tensor(p.first);
    const FeatureTensor projected = proj.apply(first);
    const FeatureTensor& texture_in = o.texture_source == "raw" ? first : projected;
    require(deep.channels() == sem.dim && texture_in.channels() == tex.dim, ErrorCode::kShapeMismatch,
            p.stem + ": feature dimensions do not match the codebooks");
    const auto q = quantize_dual(deep, texture_in, sem, tex, weights);
    const auto ae = assemble_ae_latent(deep, first, proj);
    const auto vq = assemble_vq_latent(q, sem, tex);

    const fs::path idx = c.out / (p.stem + ".idx.dtok");
    const fs::path ae_path = c.out / (p.stem + ".ae.dtok");
    const fs::path vq_path = c.out / (p.stem + ".vq.dtok");
    write_indices(idx, q.index_grid());
    write_latent(ae_path, ae);
    write_latent(vq_path, vq);
    const IndexGrid back = read_indices(idx);
    verify(back.semantic == q.semantic_indices && back.texture == q.texture_indices, idx);
    verify(read_latent(ae_path).values == ae.values, ae_path);
    verify(read_latent(vq_path).values == vq.values, vq_path);

    if (!o.diff_against.empty()) {
      const IndexGrid other = read_indices(o.diff_against / (p.stem + ".idx.dtok"));
      require(other.semantic.size() == back.semantic.size(), ErrorCode::kShapeMismatch, p.stem + ": grid differs");
      for (std::size_t i = 0; i < other.semantic.size(); ++i) differing += other.semantic[i] != back.semantic[i];
      compared += other.semantic.size();
    }
    const double sd = std::accumulate(q.semantic_distances.begin(), q.semantic_distances.end(), 0.0);
    const double td = std::accumulate(q.texture_distances.begin(), q.texture_distances.end(), 0.0);
    sem_dist += sd;
    tex_dist += td;
    all_sem.insert(all_sem.end(), q.semantic_indices.begin(), q.semantic_indices.end());
    all_tex.insert(all_tex.end(), q.texture_indices.begin(), q.texture_indices.end());
    r.add_row({{"stem", p.stem},
               {"tokens", q.tokens()},
               {"semantic_distance", sd / q.tokens()},
               {"texture_distance", td / q.tokens()}});
  }
  const auto sh = codebook_health(all_sem, sem.size);
  const auto th = codebook_health(all_tex, tex.size);
  r.set("files", pairs.size());
  r.set("tokens", all_sem.size());
  r.set("weighted", o.no_reweight ? "no" : "yes");
  r.set("semantic_mean_distance", sem_dist / all_sem.size());
  r.set("texture_mean_distance", tex_dist / all_tex.size());
  r.set("semantic_perplexity", sh.perplexity);
  r.set("semantic_utilization", sh.utilization);
  r.set("texture_perplexity", th.perplexity);
  r.set("texture_utilization", th.utilization);
  if (!o.diff_against.empty()) {
    r.set("semantic_indices_compared", compared);
    r.set("semantic_indices_differing", differing);
  }
  emit(r, c.out / "quantize.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct DecoderOpts {
  fs::path latents;
  fs::path images;
  std::string variant = "ae";
  double lambda = -1.0;
  double relative = kDefaultRelativeLambda;
  std::size_t patch = kDefaultPatchSize;
};

void check_variant(const std::string& v) {
  require(v == "ae" || v == "vq", ErrorCode::kInvalidArgument, "--variant must be ae or vq");
}

int cmd_fit_decoder(const Common& c, const DecoderOpts& o) {
  check_variant(o.variant);
  const auto latents = scan(o.latents, "." + o.variant + ".dtok");
  require(!latents.empty(), ErrorCode::kEmpty, "no ." + o.variant + ".dtok files in " + o.latents.string());
  std::vector<FeatureTensor> zs, ts;
  NormalEquations eq;
  for (const auto& [stem, path] : latents) {
    const fs::path img_path = o.images / (stem + ".ppm");
    require(fs::exists(img_path), ErrorCode::kInvalidArgument, "missing image " + img_path.string());
    const LatentTensor z = read_latent(path);
    const FeatureTensor t = extract_patches(read_ppm(img_path), o.patch);
    require(z.values.same_grid(t), ErrorCode::kShapeMismatch, stem + ": latent grid does not match the image patches");
    if (eq.latent_dim() == 0) eq = NormalEquations(z.values.channels(), t.channels());
    eq.add(z.values, t);
    zs.push_back(z.values);
    ts.push_back(t);
  }
  const double lambda = o.lambda >= 0 ? o.lambda : relative_lambda(eq, o.relative);
  const RidgeDecoder dec = fit_ridge(eq, lambda, o.patch);

  ensure_dir(c.out);
  const fs::path out = c.out / ("decoder." + o.variant + ".dtok");
  save_decoder(out, dec);
  verify(load_decoder(out).map == dec.map, out);

  double mse = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    mse += mean_squared_residual(dec, zs[i], ts[i]) * zs[i].tokens();
    n += zs[i].tokens();
  }
  Report r("fit-decoder");
  r.set("variant", o.variant);
  r.set("files", zs.size());
  r.set("latent_dim", eq.latent_dim());
  r.set("patch", o.patch);
  r.set("lambda", lambda);
  r.set("train_mse", mse / n);
  emit(r, c.out / ("fit-decoder." + o.variant + ".json"));
  return 0;
}

int cmd_decode(const Common& c, const DecoderOpts& o) {
  check_variant(o.variant);
  const RidgeDecoder dec = load_decoder(c.models / ("decoder." + o.variant + ".dtok"));
  const auto latents = scan(o.latents, "." + o.variant + ".dtok");
  require(!latents.empty(), ErrorCode::kEmpty, "no ." + o.variant + ".dtok files in " + o.latents.string());
  ensure_dir(c.out);
  Report r("decode");
  r.set("variant", o.variant);
  r.set("files", latents.size());
  for (const auto& [stem, path] : latents) {
    const Image img = decode(dec, read_latent(path));
    const fs::path out = c.out / (stem + ".ppm");
    write_ppm(out, img);
    const Image back = read_ppm(out);
    verify(back.same_shape(img), out);
    r.add_row({{"stem", stem}, {"height", img.height}, {"width", img.width}});
  }
  emit(r, c.out / ("decode." + o.variant + ".json"));
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOpts {
  fs::path latents;
  fs::path reference_dir;
  std::string reference = "ae";
  std::string candidate = "vq";
  std::string topk = "32,64,128,all";
  fs::path images;
  fs::path recon;
};

int cmd_eval(const Common& c, const EvalOpts& o) {
  const fs::path ref_dir = o.reference_dir.empty() ? o.latents : o.reference_dir;
  const auto cand = scan(o.latents, "." + o.candidate + ".dtok");
  const auto ref = scan(ref_dir, "." + o.reference + ".dtok");
  require(!cand.empty(), ErrorCode::kEmpty, "no ." + o.candidate + ".dtok files in " + o.latents.string());
  for (const auto& [stem, _] : cand)
    require(ref.count(stem) == 1, ErrorCode::kInvalidArgument, "missing reference latent for " + stem);

  const PcaModel pca = load_pca(c.models / "pca.dtok");
  std::vector<std::size_t> ks;
  std::vector<std::string> labels;
  {
    std::stringstream ss(o.topk);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "all") {
        ks.push_back(pca.channels);
        labels.push_back("all");
      } else {
        const std::size_t k = parse_sizes(item)[0];
        if (k > pca.channels) continue;
        ks.push_back(k);
        labels.push_back(item);
      }
    }
    require(!ks.empty(), ErrorCode::kInvalidArgument, "--topk selects no channel counts");
  }

  std::vector<LossPair> sums(ks.size());
  for (const auto& [stem, path] : cand) {
    const FeatureTensor z_hat = read_latent(path).deep_branch();
    const FeatureTensor z = read_latent(ref.at(stem)).deep_branch();
    require(z.channels() == pca.channels, ErrorCode::kShapeMismatch, stem + ": deep branch does not match the PCA model");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto l = topk_channel_losses(z, z_hat, pca, ks[i]);
      sums[i].cosine += l.cosine;
      sums[i].matrix += l.matrix;
    }
  }

  Report r("eval");
  r.set("reference", o.reference);
  r.set("candidate", o.candidate);
  r.set("files", cand.size());
  if (!o.images.empty()) {
    require(!o.recon.empty(), ErrorCode::kInvalidArgument, "--images needs --recon");
    const auto originals = scan(o.images, ".ppm");
    double p = 0, s = 0;
    std::size_t n = 0;
    for (const auto& [stem, path] : originals) {
      const fs::path other = o.recon / (stem + ".ppm");
      require(fs::exists(other), ErrorCode::kInvalidArgument, "missing reconstruction " + other.string());
      const Image a = read_ppm(path), b = read_ppm(other);
      p += psnr(a, b);
      s += ssim(a, b);
      ++n;
    }
    require(n > 0, ErrorCode::kEmpty, "no images in " + o.images.string());
    r.set("images", n);
    r.set("psnr", p / n);
    r.set("ssim", s / n);
  }
  for (std::size_t i = 0; i < ks.size(); ++i)
    r.add_row({{"topk", labels[i]},
               {"channels", ks[i]},
               {"cosine_loss", sums[i].cosine / cand.size()},
               {"matrix_loss", sums[i].matrix / cand.size()}});
  ensure_dir(c.out);
  emit(r, c.out / "eval.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct ConcentrationOpts {
  std::string dims = "2,16,128,1024";
  std::string norms = "1,2";
  std::size_t samples = 10000;
  std::size_t trials = 3;
};

int cmd_concentration(const Common& c, const ConcentrationOpts& o) {
  const auto dims = parse_sizes(o.dims);
  std::vector<double> norms;
  for (std::size_t p : parse_sizes(o.norms)) norms.push_back(static_cast<double>(p));
  const auto rows = concentration_sweep(dims, norms, o.samples, o.trials, c.seed);
  Report r("diagnose-concentration");
  r.set("samples", o.samples);
  r.set("trials", o.trials);
  r.set("seed", static_cast<long long>(c.seed));
  for (double p : norms) {
    bool decreasing = true;
    double prev = INFINITY;
    for (const auto& row : rows)
      if (row.p == p) {
        decreasing = decreasing && !row.degenerate && row.mean_contrast < prev;
        prev = row.mean_contrast;
      }
    r.set("p" + std::to_string(static_cast<int>(p)) + "_strictly_decreasing", decreasing ? "yes" : "no");
  }
  for (const auto& row : rows)
    r.add_row({{"p", row.p},
               {"dimension", row.dimension},
               {"mean_relative_contrast", Report::number(row.mean_contrast)},
               {"degenerate", row.degenerate ? "yes" : "no"}});
  ensure_dir(c.out);
  emit(r, c.out / "diagnose-concentration.json");
  return 0;
}

// ---------------------------------------------------------------------------

struct ExportOpts {
  std::vector<fs::path> inputs;
  std::string format = "csv";
  fs::path output;
};

std::string csv_cell(const Report::Json& v) {
  std::string s = Report::format(v);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

int cmd_export(const ExportOpts& o) {
  require(o.format == "csv" || o.format == "text", ErrorCode::kInvalidArgument, "--format must be csv or text");
  require(!o.inputs.empty(), ErrorCode::kInvalidArgument, "no input reports");
  std::ostringstream out;
  if (o.format == "text") {
    for (const auto& in : o.inputs) {
      const Report r = Report::load_json(in);
      out << "command=" << r.command() << '\n' << r.text();
    }
  } else {
    // One table: a row per report row (or per report when it has none).
    std::vector<std::pair<std::string, Report::Json>> rows;
    std::vector<std::string> columns{"command"};
    auto add_columns = [&](const Report::Json& obj) {
      for (const auto& [k, _] : obj.items())
        if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
    };
    for (const auto& in : o.inputs) {
      const Report r = Report::load_json(in);
      if (r.rows().empty()) {
        add_columns(r.fields());
        rows.emplace_back(r.command(), r.fields());
      }
      for (const auto& row : r.rows()) {
        add_columns(row);
        rows.emplace_back(r.command(), row);
      }
    }
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& [cmd, row] : rows) {
      out << cmd;
      for (std::size_t i = 1; i < columns.size(); ++i)
        out << ',' << (row.contains(columns[i]) ? csv_cell(row[columns[i]]) : "");
      out << '\n';
    }
  }
  const std::string text = out.str();
  if (o.output.empty()) {
    std::cout << text;
    return 0;
  }
  {
    std::ofstream f(o.output, std::ios::trunc | std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + o.output.string());
    f << text;
    require(static_cast<bool>(f), ErrorCode::kIo, "write failed for " + o.output.string());
  }
  std::ifstream f(o.output, std::ios::binary);
  const std::string back((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  verify(back == text, o.output);
  std::cout << "wrote=" << o.output.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();

  CLI::App app{"dtok: tokenize frozen vision features with dual codebooks.\n"
               "Environment: DTOK_THREADS caps the number of worker threads.\n"
               "Every command prints key=value lines (and 'row k=v ...' table lines) and writes\n"
               "the same report as JSON (<out>/<command>.json)."};
  app.set_config("--config", "", "INI/TOML file of option values; command-line flags win");
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool models, bool seed) {
    sub->add_option("--out", common.out, "Output directory")->required();
    if (models) sub->add_option("--models", common.models, "Directory holding model files")->required();
    if (seed) sub->add_option("--seed", common.seed, "Root seed; per-component seeds derive from it")->required();
  };

  FitPcaOpts pca_opts;
  auto* fit_pca = app.add_subcommand("fit-pca", "Global PCA on deep features, channel weights, shallow projection.\n"
                                                "Writes pca.dtok, weights.dtok, projection.dtok, fit-pca.json.");
  fit_pca->add_option("--features", pca_opts.features, "Feature directory")->required();
  fit_pca->add_option("--target-dim", pca_opts.target_dim, "Shallow projection width")->capture_default_str();
  add_common(fit_pca, false, false);

  TrainOpts train;
  auto* train_cmd = app.add_subcommand(
      "train-codebooks", "Train semantic (weighted) and texture (plain) codebooks with EMA updates.\n"
                         "Writes semantic.dtok, texture.dtok (checkpointed every epoch), train.log, "
                         "train-codebooks.json.\nLog rows: epoch book mean_error perplexity utilization dead reseeded.");
  train_cmd->add_option("--features", train.features, "Feature directory")->required();
  train_cmd->add_option("--k", train.k, "Entries per codebook")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "Total epochs (a resumed run continues up to this)")
      ->capture_default_str();
  train_cmd->add_option("--decay", train.decay, "EMA decay in (0, 1)")->capture_default_str();
  train_cmd->add_option("--dead-threshold", train.dead_threshold, "Re-seed entries used fewer times per epoch")
      ->capture_default_str();
  train_cmd->add_option("--init-sample", train.init_sample, "Tokens sampled for k-means++ init (0 = all)")
      ->capture_default_str();
  train_cmd->add_option("--init-restarts", train.init_restarts, "k-means++ seedings tried; lowest potential kept")
      ->capture_default_str();
  train_cmd->add_flag("--no-reweight", train.no_reweight, "Train the semantic book with uniform weights");
  train_cmd->add_option("--texture-source", train.texture_source, "Texture branch input: projected or raw")
      ->capture_default_str();
  train_cmd->add_flag("--resume", train.resume, "Continue from the books in --out");
  add_common(train_cmd, true, true);

  QuantizeOpts quant;
  auto* quant_cmd = app.add_subcommand(
      "quantize", "Dual quantization per image. Writes <stem>.idx.dtok, <stem>.ae.dtok, <stem>.vq.dtok,\n"
                  "quantize.json (fields: *_mean_distance, *_perplexity, *_utilization).");
  quant_cmd->add_option("--features", quant.features, "Feature directory")->required();
  quant_cmd->add_flag("--no-reweight", quant.no_reweight, "Use uniform weights for the semantic lookup");
  quant_cmd->add_option("--texture-source", quant.texture_source, "Texture branch input: projected or raw")
      ->capture_default_str();
  quant_cmd->add_option("--diff-against", quant.diff_against, "Count semantic indices differing from this run");
  add_common(quant_cmd, true, false);

  DecoderOpts dec;
  auto* fit_dec = app.add_subcommand("fit-decoder", "Closed-form ridge decoder from latents to image patches.\n"
                                                    "Writes decoder.<variant>.dtok and fit-decoder.<variant>.json.");
  fit_dec->add_option("--latents", dec.latents, "Latent directory")->required();
  fit_dec->add_option("--images", dec.images, "Directory of <stem>.ppm targets")->required();
  fit_dec->add_option("--variant", dec.variant, "Latent variant: ae or vq")->capture_default_str();
  fit_dec->add_option("--lambda", dec.lambda, "Absolute ridge strength (overrides --relative-lambda)");
  fit_dec->add_option("--relative-lambda", dec.relative, "Ridge strength relative to mean latent scatter")
      ->capture_default_str();
  fit_dec->add_option("--patch", dec.patch, "Pixels per token side")->capture_default_str();
  add_common(fit_dec, false, false);

  auto* decode_cmd = app.add_subcommand("decode", "Decode latents to <stem>.ppm with decoder.<variant>.dtok.");
  decode_cmd->add_option("--latents", dec.latents, "Latent directory")->required();
  decode_cmd->add_option("--variant", dec.variant, "Latent variant: ae or vq")->capture_default_str();
  add_common(decode_cmd, true, false);

  EvalOpts ev;
  auto* eval_cmd = app.add_subcommand(
      "eval", "Cosine and matrix losses of candidate vs reference deep latents over top-k PCA channels,\n"
              "plus PSNR/SSIM when images are given. Rows: topk channels cosine_loss matrix_loss\n"
              "(per-image means). Fields psnr=inf when images are identical.");
  eval_cmd->add_option("--latents", ev.latents, "Directory of candidate latents")->required();
  eval_cmd->add_option("--reference-dir", ev.reference_dir, "Directory of reference latents (default --latents)");
  eval_cmd->add_option("--reference", ev.reference, "Reference suffix: ae or vq")->capture_default_str();
  eval_cmd->add_option("--candidate", ev.candidate, "Candidate suffix: ae or vq")->capture_default_str();
  eval_cmd->add_option("--topk", ev.topk, "Channel counts, comma separated; 'all' = every channel")
      ->capture_default_str();
  eval_cmd->add_option("--images", ev.images, "Original <stem>.ppm directory");
  eval_cmd->add_option("--recon", ev.recon, "Reconstructed <stem>.ppm directory");
  add_common(eval_cmd, true, false);

  ConcentrationOpts conc;
  auto* conc_cmd = app.add_subcommand(
      "diagnose-concentration", "Monte Carlo relative contrast (Dmax - Dmin) / Dmin of iid U[0,1]^d data.\n"
                                "Rows: p dimension mean_relative_contrast degenerate.");
  conc_cmd->add_option("--dims", conc.dims, "Dimensions, comma separated")->capture_default_str();
  conc_cmd->add_option("--norms", conc.norms, "Minkowski p values, comma separated")->capture_default_str();
  conc_cmd->add_option("--samples", conc.samples, "Points per set")->capture_default_str();
  conc_cmd->add_option("--trials", conc.trials, "Point sets per dimension")->capture_default_str();
  add_common(conc_cmd, false, true);

  ExportOpts ex;
  auto* export_cmd = app.add_subcommand("export-report", "Merge JSON reports into one plot-ready table.");
  export_cmd->add_option("inputs", ex.inputs, "Report JSON files")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--format", ex.format, "csv or text")->capture_default_str();
  export_cmd->add_option("--output", ex.output, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit_pca) return cmd_fit_pca(common, pca_opts);
    if (*train_cmd) return cmd_train(common, train);
    if (*quant_cmd) return cmd_quantize(common, quant);
    if (*fit_dec) return cmd_fit_decoder(common, dec);
    if (*decode_cmd) return cmd_decode(common, dec);
    if (*eval_cmd) return cmd_eval(common, ev);
    if (*conc_cmd) return cmd_concentration(common, conc);
    if (*export_cmd) return cmd_export(ex);
  } catch (const std::exception& e) {
    std::cerr << "dtok: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
