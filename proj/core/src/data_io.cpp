#include "cdvae/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cdvae/errors.hpp"
#include "cdvae/numeric.hpp"
#include "cdvae/rng.hpp"
#include "cdvae/smoothing.hpp"

namespace cdvae {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

// Little-endian helpers for the synthetic container.
template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> b, std::size_t& off) {
  if (off + sizeof(T) > b.size()) {
    throw ParseError("synthetic cache truncated: need " + std::to_string(off + sizeof(T)) + " bytes, have " +
                         std::to_string(b.size()),
                     off);
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{b[off + i]} << (8 * i);
  off += sizeof(T);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

constexpr char kCacheMagic[4] = {'C', 'D', 'V', 'S'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// IDX

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("IDX header truncated: expected 4 bytes, got " + std::to_string(bytes.size()), 0);
  if (bytes[0] != 0 || bytes[1] != 0) throw ParseError("IDX bad magic: leading bytes must be zero", 0);
  if (bytes[2] != 0x08) throw ParseError("IDX bad magic: only unsigned-byte tensors are supported", 2);
  IdxTensor t;
  t.magic = read_be32(bytes, 0);
  if (t.magic != kIdxImagesMagic && t.magic != kIdxLabelsMagic) {
    throw ParseError("IDX bad magic: expected 0x00000803 or 0x00000801", 0);
  }
  const std::size_t ndims = bytes[3];
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw ParseError("IDX header truncated: expected " + std::to_string(header) + " bytes, got " +
                         std::to_string(bytes.size()),
                     bytes.size());
  }
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::uint32_t dim = read_be32(bytes, 4 + 4 * d);
    t.dims.push_back(dim);
    if (dim != 0 && count > (std::uint64_t{1} << 40) / dim) throw ParseError("IDX dimension overflow", 4 + 4 * d);
    count *= dim;
  }
  const std::uint64_t expected = header + count;
  if (bytes.size() != expected) {
    throw ParseError("IDX payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(bytes.size()),
                     std::min<std::size_t>(bytes.size(), expected));
  }
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return t;
}

std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * t.dims.size() + t.payload.size());
  put_be32(out, (t.magic & 0xFFFFFF00U) | static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_be32(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

IdxTensor read_idx_file(const std::filesystem::path& path) { return parse_idx(slurp(path)); }

void write_idx_file(const std::filesystem::path& path, const IdxTensor& t) { dump(path, serialize_idx(t)); }

Dataset read_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
  const IdxTensor img = read_idx_file(images);
  if (img.dims.size() != 3) throw ParseError("IDX images must be 3-D", 3);
  Dataset d;
  const std::size_t n = img.dims[0];
  d.height = img.dims[1];
  d.width = img.dims[2];
  const std::size_t k = d.height * d.width;
  d.items.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n * k; ++i) d.items.data()[i] = img.payload[i] / 255.0;
  if (labels) {
    const IdxTensor lab = read_idx_file(*labels);
    if (lab.dims.size() != 1) throw ParseError("IDX labels must be 1-D", 3);
    if (lab.dims[0] != n) {
      throw ParseError("IDX label count " + std::to_string(lab.dims[0]) + " != image count " + std::to_string(n), 4);
    }
    d.labels = lab.payload;
  }
  return d;
}

Dataset downsample_2x2(const Dataset& d) {
  if (d.height < 2 || d.width < 2) throw ShapeError("downsample_2x2: image smaller than 2x2");
  Dataset out;
  out.height = d.height / 2;
  out.width = d.width / 2;
  out.labels = d.labels;
  out.messages = d.messages;
  out.items.resize(d.items.rows(), static_cast<Eigen::Index>(out.height * out.width));
  for (Eigen::Index i = 0; i < d.items.rows(); ++i) {
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t c = 0; c < out.width; ++c) {
        auto at = [&](std::size_t rr, std::size_t cc) {
          return d.items(i, static_cast<Eigen::Index>(rr * d.width + cc));
        };
        out.items(i, static_cast<Eigen::Index>(r * out.width + c)) =
            0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1));
      }
    }
  }
  return out;
}

Dataset slice(const Dataset& d, std::size_t begin, std::size_t count) {
  begin = std::min(begin, d.size());
  count = std::min(count, d.size() - begin);
  Dataset out;
  out.height = d.height;
  out.width = d.width;
  out.items = d.items.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  if (!d.labels.empty()) {
    out.labels.assign(d.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      d.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  if (!d.messages.empty()) {
    out.messages.assign(d.messages.begin() + static_cast<std::ptrdiff_t>(begin),
                        d.messages.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (info_bits == 0 || repeat == 0 || hidden == 0 || count == 0 || height == 0 || width == 0) {
    throw ConfigError("SyntheticSpec: dimensions must be positive");
  }
  if (!(noise_scale >= 0.0)) throw ConfigError("SyntheticSpec: noise scale must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("SyntheticSpec: beta must be positive");
}

std::uint64_t SyntheticSpec::hash() const {
  std::ostringstream s;
  s.precision(17);
  s << info_bits << ' ' << repeat << ' ' << beta << ' ' << hidden << ' ' << noise_scale << ' ' << count << ' ' << seed
    << ' ' << height << ' ' << width << ' ' << gain;
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : s.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Dataset synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const CodeSpec code(spec.info_bits, spec.repeat);
  const SmoothingParams smoothing(spec.beta);
  const std::size_t k = spec.height * spec.width;

  Rng net_rng = Rng(spec.seed).split(0);
  NetworkPlan plan{{code.code_len(), spec.hidden, k}, Activation::kLeakyRelu, Activation::kLogistic};
  ParamStore gen = ParamStore::glorot(plan, net_rng);
  gen.layers().front().weight *= spec.gain;
  gen.layers().back().weight *= spec.gain;
  for (Eigen::Index j = 0; j < gen.layers().front().bias.size(); ++j) {
    gen.layers().front().bias(j) = 0.5 * (2.0 * net_rng.uniform() - 1.0);
  }

  Rng rng = Rng(spec.seed).split(1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.height = spec.height;
  d.width = spec.width;
  d.messages.reserve(spec.count);
  Batch z(static_cast<Eigen::Index>(spec.count), static_cast<Eigen::Index>(code.code_len()));
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::vector<std::uint8_t> bits(spec.info_bits);
    for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
    BitWord m(std::move(bits));
    const BitWord c = hard_encode(code, m);
    for (std::size_t j = 0; j < c.size(); ++j) {
      const double rho = std::clamp(rng.uniform(), kNoiseClip, 1.0 - kNoiseClip);
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = conditional_inverse_cdf(c[j], rho, smoothing);
    }
    d.messages.push_back(std::move(m));
  }
  d.items = forward_mlp(plan, gen, z).output;
  if (spec.noise_scale > 0.0) {
    for (Eigen::Index i = 0; i < d.items.size(); ++i) {
      d.items.data()[i] = std::clamp(d.items.data()[i] + spec.noise_scale * gauss(rng.engine()), 0.0, 1.0);
    }
  }
  return d;
}

void write_synthetic_cache(const std::filesystem::path& path, const SyntheticSpec& spec, const Dataset& d) {
  if (d.messages.size() != d.size()) throw ShapeError("write_synthetic_cache: every item needs a message");
  std::vector<std::uint8_t> out(std::begin(kCacheMagic), std::end(kCacheMagic));
  put_le<std::uint32_t>(out, kCacheVersion);
  put_le<std::uint64_t>(out, spec.hash());
  put_le<std::uint64_t>(out, d.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.height));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.width));
  const std::size_t M = d.messages.empty() ? 0 : d.messages.front().size();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(M));
  for (Eigen::Index i = 0; i < d.items.size(); ++i) put_le<double>(out, d.items.data()[i]);
  for (const auto& m : d.messages) out.insert(out.end(), m.bits().begin(), m.bits().end());
  dump(path, out);
}

Dataset read_synthetic_cache(const std::filesystem::path& path, std::uint64_t* spec_hash) {
  const auto bytes = slurp(path);
  const std::span<const std::uint8_t> b(bytes);
  if (b.size() < 4 || !std::equal(std::begin(kCacheMagic), std::end(kCacheMagic), b.begin())) {
    throw ParseError("synthetic cache: bad magic", 0);
  }
  std::size_t off = 4;
  if (get_le<std::uint32_t>(b, off) != kCacheVersion) throw ParseError("synthetic cache: unsupported version", 4);
  const auto hash = get_le<std::uint64_t>(b, off);
  const auto n = get_le<std::uint64_t>(b, off);
  Dataset d;
  d.height = get_le<std::uint32_t>(b, off);
  d.width = get_le<std::uint32_t>(b, off);
  const auto M = get_le<std::uint32_t>(b, off);
  const std::uint64_t k = std::uint64_t{d.height} * d.width;
  const std::uint64_t expected = off + n * k * 8 + n * M;
  if (b.size() != expected) {
    throw ParseError("synthetic cache size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(b.size()),
                     std::min<std::size_t>(b.size(), expected));
  }
  d.items.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < d.items.size(); ++i) d.items.data()[i] = get_le<double>(b, off);
  if (M > 0) {
    for (std::uint64_t i = 0; i < n; ++i) {
      std::vector<std::uint8_t> bits(b.begin() + static_cast<std::ptrdiff_t>(off),
                                     b.begin() + static_cast<std::ptrdiff_t>(off + M));
      off += M;
      d.messages.emplace_back(std::move(bits));
    }
  }
  if (spec_hash != nullptr) *spec_hash = hash;
  return d;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (n == 0) throw ShapeError("batch_iter: empty dataset");
  if (batch_size == 0) throw DomainError("batch_iter: batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_iter(const Dataset& d, std::size_t batch_size, std::uint64_t seed) {
  return batch_iter(d.size(), batch_size, seed);
}

Batch gather_rows(const Batch& b, std::span<const std::size_t> rows) {
  Batch out(static_cast<Eigen::Index>(rows.size()), b.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = b.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace cdvae
