#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/diffcore.hpp"

namespace cdvae {

/// N items of H*W intensities in [0, 1], optionally with labels (IDX) or the
/// ground-truth messages that generated them (synthetic).
struct Dataset {
  Batch items;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;
  std::vector<BitWord> messages;

  std::size_t size() const noexcept { return static_cast<std::size_t>(items.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(items.cols()); }
};

/// Raw big-endian IDX tensor of unsigned bytes.
struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

IdxTensor parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxTensor& t);
IdxTensor read_idx_file(const std::filesystem::path& path);
void write_idx_file(const std::filesystem::path& path, const IdxTensor& t);

/// Images scaled by 1/255; labels attached when a label file is given.
Dataset read_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels = {});

/// 2x2 mean pooling (28x28 -> 14x14). Odd trailing rows/columns are dropped.
Dataset downsample_2x2(const Dataset& d);
/// Rows [begin, begin + count) clipped to the dataset size.
Dataset slice(const Dataset& d, std::size_t begin, std::size_t count);

struct SyntheticSpec {
  std::size_t info_bits = 5;  // M
  std::size_t repeat = 4;     // L
  double beta = 15.0;
  std::size_t hidden = 32;
  double noise_scale = 0.05;
  std::size_t count = 1000;   // N
  std::uint64_t seed = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  /// Multiplier on the generator's output-layer weights; sets image contrast.
  double gain = 3.0;

  void validate() const;
  std::uint64_t hash() const;
};

/// Items from a fixed random repetition-coded generator: m ~ Ber(0.5)^M,
/// c = repeat(m), z ~ p(z|c), x = clip(sigmoid(f(z)) + noise, 0, 1).
Dataset synth_generate(const SyntheticSpec& spec);

/// Binary container for synthetic datasets (see README for the layout).
void write_synthetic_cache(const std::filesystem::path& path, const SyntheticSpec& spec, const Dataset& d);
Dataset read_synthetic_cache(const std::filesystem::path& path, std::uint64_t* spec_hash = nullptr);

/// Seeded permutation of [0, n) cut into batches; the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed);
std::vector<std::vector<std::size_t>> batch_iter(const Dataset& d, std::size_t batch_size, std::uint64_t seed);

Batch gather_rows(const Batch& b, std::span<const std::size_t> rows);

}  // namespace cdvae
