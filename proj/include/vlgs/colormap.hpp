#pragma once

#include <array>
#include <cstdint>

namespace vlgs {

/// 256-entry RGB lookup table used for heatmap PNGs (viridis).
extern const std::array<std::array<std::uint8_t, 3>, 256> kHeatmapLut;

}  // namespace vlgs
