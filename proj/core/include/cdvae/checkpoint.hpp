#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "cdvae/models.hpp"

namespace cdvae {

/// Plain-text checkpoint: header lines describing the model, then every
/// parameter array by name and shape, written with round-trip precision.
void write_checkpoint(std::ostream& out, const Model& m, std::uint64_t seed = 0);
Model read_checkpoint(std::istream& in, std::uint64_t* seed = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Model& m, std::uint64_t seed = 0);
Model load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

}  // namespace cdvae
