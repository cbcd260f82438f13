#include "liftuq/tensor_field.hpp"

#include <cmath>
#include <string>

namespace liftuq {

Grid2D::Grid2D(int nx, int ny) : nx_(nx), ny_(ny) {
  if (nx < 3 || ny < 3) {
    throw ConfigError("grid too small: " + std::to_string(nx) + "x" + std::to_string(ny) +
                      " (need at least 3x3)");
  }
}

Field::Field(Grid2D grid, int channels) : grid_(grid), channels_(channels) {
  if (channels < 1) throw ConfigError("field needs at least one channel");
  values_.assign(grid.size() * channels, 0.0);
}

Field::Field(Grid2D grid, int channels, std::vector<double> values)
    : grid_(grid), channels_(channels), values_(std::move(values)) {
  if (channels < 1) throw ConfigError("field needs at least one channel");
  if (values_.size() != grid.size() * channels) {
    throw ConfigError("field value count " + std::to_string(values_.size()) + " does not match " +
                      std::to_string(grid.size()) + " points x " + std::to_string(channels) +
                      " channels");
  }
  require_finite("field");
}

void Field::require_finite(std::string_view what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericalError(std::string(what) + ": non-finite value at point " +
                           std::to_string(i / channels_) + ", channel " +
                           std::to_string(i % channels_));
    }
  }
}

Field field_zeros(const Grid2D& grid, int channels) { return Field(grid, channels); }

Field extract_channel(const Field& f, int c) {
  if (c < 0 || c >= f.channels()) throw ConfigError("channel index out of range");
  Field out(f.grid(), 1);
  for (std::size_t n = 0; n < f.points(); ++n) out.at(n, 0) = f.at(n, c);
  return out;
}

Field subtract(const Field& a, const Field& b) {
  if (!a.same_shape(b)) throw ConfigError("subtract: shape mismatch");
  Field out(a.grid(), a.channels());
  auto o = out.values();
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return out;
}

double frobenius_norm(const Field& f) {
  double s = 0.0;
  for (double v : f.values()) s += v * v;
  return std::sqrt(s);
}

Field with_positional_encoding(const Field& coefficient) {
  if (coefficient.channels() != 1) {
    throw ConfigError("positional encoding expects a one-channel coefficient field");
  }
  const Grid2D& g = coefficient.grid();
  Field out(g, 3);
  for (int iy = 0; iy < g.ny(); ++iy) {
    for (int ix = 0; ix < g.nx(); ++ix) {
      const std::size_t n = g.index(ix, iy);
      out.at(n, 0) = coefficient.at(n, 0);
      out.at(n, 1) = g.x(ix);
      out.at(n, 2) = g.y(iy);
    }
  }
  return out;
}

}  // namespace liftuq
