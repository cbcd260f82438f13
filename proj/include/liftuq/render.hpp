#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "liftuq/tensor_field.hpp"

namespace liftuq {

enum class FieldSelector { Residual, Sigma, Band, CoverageMask, Input, Truth, Mean };

FieldSelector parse_selector(const std::string& s);
std::string selector_name(FieldSelector s);

struct ColorRange {
  std::optional<double> min, max;  // auto when unset
};

/// Piecewise-linear ramp: t = 0 blue, 0.5 white, 1 red; t is clamped.
std::array<std::uint8_t, 3> ramp_color(double t);

/// Binary P6 image of channel 0 of `f`, one pixel per node. Image rows run
/// from y = 1 (top) to y = 0 (bottom). An automatic range that collapses to a
/// single value v becomes [v - 1, v + 1].
std::vector<std::uint8_t> render_ppm(const Field& f, const ColorRange& range);

/// 1 where the point is missed and 0 where covered, so render_ppm with range
/// [0, 1] paints misses red and covered points blue.
Field miss_mask_field(const Field& residual, const Field& band);

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace liftuq
