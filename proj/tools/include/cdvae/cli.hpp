#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdvae/config.hpp"
#include "cdvae/data_io.hpp"

namespace cdvae::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4 };

inline constexpr const char* kSeedEnv = "CODEDVAE_SEED";

/// Runs one invocation. Diagnostics go to `err` as a single line:
///   error code=<n> kind=<kind> message="<text>"
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Train and test splits described by the data section of `cfg`.
std::pair<Dataset, Dataset> load_data(const RunConfig& cfg);

/// Binary PGM (P5); values in [0, 1] are scaled to 0..255.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const double> pixels);
/// Images tiled row-major into a grid with a one-pixel black border.
void write_pgm_grid(const std::filesystem::path& path, const std::vector<std::vector<double>>& images,
                    std::size_t height, std::size_t width, std::size_t columns);

/// Image shape for a flat width: square when possible, else one row.
std::pair<std::size_t, std::size_t> guess_shape(std::size_t dim);

}  // namespace cdvae::cli
