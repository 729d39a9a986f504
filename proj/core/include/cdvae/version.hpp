#pragma once

namespace cdvae {

inline constexpr const char* kVersionString = "0.1.0";

}  // namespace cdvae
