#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "liftuq/errors.hpp"

namespace liftuq {

/// Uniform node-centred grid on the unit square, boundary nodes included.
/// Point index n = iy * nx + ix.
class Grid2D {
 public:
  Grid2D() = default;
  /// Throws ConfigError("grid too small") unless nx >= 3 and ny >= 3.
  Grid2D(int nx, int ny);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t size() const { return static_cast<std::size_t>(nx_) * ny_; }
  double hx() const { return 1.0 / (nx_ - 1); }
  double hy() const { return 1.0 / (ny_ - 1); }
  double x(int ix) const { return ix * hx(); }
  double y(int iy) const { return iy * hy(); }
  std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * nx_ + ix; }
  bool on_boundary(int ix, int iy) const {
    return ix == 0 || iy == 0 || ix == nx_ - 1 || iy == ny_ - 1;
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  int nx_ = 3;
  int ny_ = 3;
};

/// Channel-valued grid function stored as N x d doubles, [point][channel].
class Field {
 public:
  Field() = default;
  Field(Grid2D grid, int channels);
  Field(Grid2D grid, int channels, std::vector<double> values);

  const Grid2D& grid() const { return grid_; }
  int channels() const { return channels_; }
  std::size_t points() const { return grid_.size(); }

  double& at(std::size_t n, int c) { return values_[n * channels_ + c]; }
  double at(std::size_t n, int c) const { return values_[n * channels_ + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  /// Throws NumericalError naming `what` and the first offending entry.
  void require_finite(std::string_view what) const;
  bool same_shape(const Field& other) const {
    return grid_ == other.grid_ && channels_ == other.channels_;
  }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  Grid2D grid_;
  int channels_ = 1;
  std::vector<double> values_ = std::vector<double>(9, 0.0);
};

Field field_zeros(const Grid2D& grid, int channels);

/// Single channel `c` of `f` as a one-channel field.
Field extract_channel(const Field& f, int c);

/// a - b; shapes must match.
Field subtract(const Field& a, const Field& b);

/// Frobenius norm over all points and channels.
double frobenius_norm(const Field& f);

/// Input tensor (a, x, y) used by the operator: the physical coefficient
/// followed by absolute node coordinates.
Field with_positional_encoding(const Field& coefficient);

}  // namespace liftuq
