#include "dtok/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "dtok/error.hpp"

namespace dtok {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(get_u32(p)) | static_cast<std::uint64_t>(get_u32(p + 4)) << 32;
}

// Returns false on overflow.
bool checked_product(std::span<const std::uint32_t> dims, std::uint64_t& product) {
  product = 1;
  for (auto d : dims) {
    if (d != 0 && product > std::numeric_limits<std::uint64_t>::max() / 4 / d) return false;
    product *= d;
  }
  return true;
}

bool known_kind(std::uint8_t k) { return k <= static_cast<std::uint8_t>(TensorKind::kLatent); }
bool known_dtype(std::uint8_t d) { return d <= static_cast<std::uint8_t>(DType::kU32); }

}  // namespace

std::vector<std::uint8_t> encode(const RawTensor& raw) {
  require(raw.dims.size() <= kMaxRank, ErrorCode::kDimensionOverflow,
          "rank " + std::to_string(raw.dims.size()) + " exceeds " + std::to_string(kMaxRank));
  std::uint64_t count = 0;
  require(checked_product(raw.dims, count), ErrorCode::kDimensionOverflow, "dims product overflows");
  require(count == raw.words.size(), ErrorCode::kShapeMismatch,
          "dims product " + std::to_string(count) + " != payload elements " +
              std::to_string(raw.words.size()));

  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * raw.dims.size() + 8 + 4 * raw.words.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u16(out, kFormatVersion);
  out.push_back(static_cast<std::uint8_t>(raw.kind));
  out.push_back(static_cast<std::uint8_t>(raw.dtype));
  put_u32(out, static_cast<std::uint32_t>(raw.dims.size()));
  for (auto d : raw.dims) put_u32(out, d);
  put_u64(out, count * 4);
  for (auto w : raw.words) put_u32(out, w);
  return out;
}

RawTensor decode(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 4, ErrorCode::kTruncated, "file shorter than magic");
  require(std::equal(kMagic.begin(), kMagic.end(), bytes.begin()), ErrorCode::kBadMagic,
          "magic is not DTOK");
  require(bytes.size() >= 12, ErrorCode::kTruncated, "header truncated");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
  require(version == kFormatVersion, ErrorCode::kVersionMismatch,
          "version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  require(known_kind(bytes[6]), ErrorCode::kUnsupported, "unknown kind " + std::to_string(bytes[6]));
  require(known_dtype(bytes[7]), ErrorCode::kUnsupported, "unknown dtype " + std::to_string(bytes[7]));

  RawTensor raw;
  raw.kind = static_cast<TensorKind>(bytes[6]);
  raw.dtype = static_cast<DType>(bytes[7]);
  const std::uint32_t rank = get_u32(bytes.data() + 8);
  require(rank <= kMaxRank, ErrorCode::kDimensionOverflow, "rank " + std::to_string(rank));
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(rank) + 8;
  require(bytes.size() >= header, ErrorCode::kTruncated, "header truncated");
  raw.dims.resize(rank);
  for (std::uint32_t i = 0; i < rank; ++i) raw.dims[i] = get_u32(bytes.data() + 12 + 4 * i);

  std::uint64_t count = 0;
  require(checked_product(raw.dims, count), ErrorCode::kDimensionOverflow, "dims product overflows");
  const std::uint64_t declared = get_u64(bytes.data() + 12 + 4 * rank);
  require(declared == count * 4, ErrorCode::kShapeMismatch,
          "declared payload " + std::to_string(declared) + " bytes but dims imply " +
              std::to_string(count * 4));
  const std::uint64_t available = bytes.size() - header;
  require(available >= declared, ErrorCode::kTruncated,
          "payload has " + std::to_string(available) + " of " + std::to_string(declared) + " bytes");
  require(available == declared, ErrorCode::kShapeMismatch,
          std::to_string(available - declared) + " trailing bytes after payload");

  raw.words.resize(count);
  const std::uint8_t* p = bytes.data() + header;
  for (std::uint64_t i = 0; i < count; ++i) raw.words[i] = get_u32(p + 4 * i);
  return raw;
}

void write_raw(const std::filesystem::path& path, const RawTensor& raw) {
  const auto bytes = encode(raw);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCode::kIo, "cannot move file into place at " + path.string());
  }
}

RawTensor read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint32_t> floats_to_words(std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = std::bit_cast<std::uint32_t>(values[i]);
  return words;
}

std::vector<float> words_to_floats(std::span<const std::uint32_t> words) {
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    values[i] = std::bit_cast<float>(words[i]);
    require(std::isfinite(values[i]), ErrorCode::kNonFinite,
            "payload element " + std::to_string(i) + " is not finite");
  }
  return values;
}

RawTensor pack_composite(TensorKind kind, const Manifest& manifest, std::span<const float> body) {
  RawTensor raw;
  raw.kind = kind;
  raw.dtype = DType::kF32;
  const std::size_t total = kManifestSlots + body.size();
  require(total <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::kDimensionOverflow,
          "composite payload too large for a rank-1 dim");
  raw.dims = {static_cast<std::uint32_t>(total)};
  raw.words.reserve(total);
  for (float m : manifest) raw.words.push_back(std::bit_cast<std::uint32_t>(m));
  for (float v : body) {
    require(std::isfinite(v), ErrorCode::kNonFinite, "non-finite value in composite body");
    raw.words.push_back(std::bit_cast<std::uint32_t>(v));
  }
  return raw;
}

Manifest unpack_composite(const RawTensor& raw, TensorKind kind, std::vector<float>& body) {
  require(raw.kind == kind, ErrorCode::kWrongKind,
          "expected kind " + std::to_string(static_cast<int>(kind)) + ", found " +
              std::to_string(static_cast<int>(raw.kind)));
  require(raw.dtype == DType::kF32, ErrorCode::kUnsupported, "composite tensors must be f32");
  require(raw.dims.size() == 1 && raw.words.size() >= kManifestSlots, ErrorCode::kShapeMismatch,
          "composite tensor must be rank 1 with a manifest");
  auto values = words_to_floats(raw.words);
  Manifest m{};
  std::copy_n(values.begin(), kManifestSlots, m.begin());
  body.assign(values.begin() + kManifestSlots, values.end());
  return m;
}

std::uint64_t manifest_count(const Manifest& m, std::size_t slot) {
  const float v = m.at(slot);
  require(v >= 0.0f && v <= 16777216.0f && std::floor(v) == v, ErrorCode::kShapeMismatch,
          "manifest slot " + std::to_string(slot) + " is not a count");
  return static_cast<std::uint64_t>(v);
}

void store_wide_count(Manifest& m, std::size_t slot, std::uint64_t value) {
  constexpr std::uint64_t base = 1ull << 24;
  require(value < base * base, ErrorCode::kDimensionOverflow, "count too large for manifest");
  m.at(slot) = static_cast<float>(value / base);
  m.at(slot + 1) = static_cast<float>(value % base);
}

std::uint64_t load_wide_count(const Manifest& m, std::size_t slot) {
  return manifest_count(m, slot) * (1ull << 24) + manifest_count(m, slot + 1);
}

void write_tensor(const std::filesystem::path& path, const FeatureTensor& tensor) {
  tensor.validate();
  RawTensor raw;
  raw.kind = TensorKind::kFeature;
  raw.dtype = DType::kF32;
  for (auto d : {tensor.grid_h(), tensor.grid_w(), tensor.channels()}) {
    require(d <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::kDimensionOverflow,
            "dimension exceeds u32");
    raw.dims.push_back(static_cast<std::uint32_t>(d));
  }
  raw.words = floats_to_words(tensor.data());
  write_raw(path, raw);
}

FeatureTensor read_tensor(const std::filesystem::path& path) {
  const RawTensor raw = read_raw(path);
  require(raw.kind == TensorKind::kFeature, ErrorCode::kWrongKind, path.string() + " is not a feature tensor");
  require(raw.dtype == DType::kF32, ErrorCode::kUnsupported, "feature tensors must be f32");
  require(raw.dims.size() == 3, ErrorCode::kShapeMismatch, "feature tensors must be rank 3");
  return FeatureTensor(raw.dims[0], raw.dims[1], raw.dims[2], words_to_floats(raw.words));
}

void write_latent(const std::filesystem::path& path, const LatentTensor& latent) {
  latent.validate();
  Manifest m{};
  m[0] = static_cast<float>(latent.values.grid_h());
  m[1] = static_cast<float>(latent.values.grid_w());
  m[2] = static_cast<float>(latent.values.channels());
  m[3] = static_cast<float>(latent.branch_split);
  m[4] = static_cast<float>(static_cast<int>(latent.variant));
  write_raw(path, pack_composite(TensorKind::kLatent, m, latent.values.data()));
}

LatentTensor read_latent(const std::filesystem::path& path) {
  std::vector<float> body;
  const Manifest m = unpack_composite(read_raw(path), TensorKind::kLatent, body);
  const auto variant = manifest_count(m, 4);
  require(variant <= 1, ErrorCode::kUnsupported, "unknown latent variant");
  LatentTensor latent{FeatureTensor(manifest_count(m, 0), manifest_count(m, 1), manifest_count(m, 2),
                                    std::move(body)),
                      manifest_count(m, 3), static_cast<LatentVariant>(variant)};
  latent.validate();
  return latent;
}

void write_indices(const std::filesystem::path& path, const IndexGrid& indices) {
  const std::size_t n = indices.tokens();
  require(indices.semantic.size() == n && indices.texture.size() == n, ErrorCode::kShapeMismatch,
          "index stream length does not match grid");
  RawTensor raw;
  raw.kind = TensorKind::kLatent;
  raw.dtype = DType::kU32;
  raw.dims = {static_cast<std::uint32_t>(indices.grid_h), static_cast<std::uint32_t>(indices.grid_w), 2};
  raw.words.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    raw.words.push_back(indices.semantic[i]);
    raw.words.push_back(indices.texture[i]);
  }
  write_raw(path, raw);
}

IndexGrid read_indices(const std::filesystem::path& path) {
  const RawTensor raw = read_raw(path);
  require(raw.kind == TensorKind::kLatent && raw.dtype == DType::kU32, ErrorCode::kWrongKind,
          path.string() + " is not an index stream");
  require(raw.dims.size() == 3 && raw.dims[2] == 2, ErrorCode::kShapeMismatch,
          "index streams must have dims [h, w, 2]");
  IndexGrid grid{raw.dims[0], raw.dims[1], {}, {}};
  const std::size_t n = grid.tokens();
  grid.semantic.resize(n);
  grid.texture.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid.semantic[i] = raw.words[2 * i];
    grid.texture[i] = raw.words[2 * i + 1];
  }
  return grid;
}

}  // namespace dtok
