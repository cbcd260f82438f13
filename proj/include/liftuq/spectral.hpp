#pragma once

#include <memory>
#include <span>

#include <Eigen/Core>

#include "liftuq/tensor_field.hpp"

namespace liftuq {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// Truncated real 2D DFT on a grid, keeping |kx| < k_max and 0 <= ky < k_max.
///
/// y is the half-spectrum axis. Modes are indexed m = ky * (2 k_max - 1) +
/// (kx + k_max - 1). The inverse projects onto real fields:
///   v(x, y) = 1/N sum_kx [ Re(Z(kx,0) e^{i phi}) + 2 sum_{ky>0} Re(Z(kx,ky) e^{i phi}) ]
/// which is exactly the real inverse of the conjugate-symmetric extension.
class SpectralPlan {
 public:
  SpectralPlan(const Grid2D& grid, int k_max);

  /// Shared, immutable plan for (grid, k_max).
  static std::shared_ptr<const SpectralPlan> get(const Grid2D& grid, int k_max);

  const Grid2D& grid() const { return grid_; }
  int k_max() const { return k_; }
  int kx_count() const { return 2 * k_ - 1; }
  int mode_count() const { return k_ * (2 * k_ - 1); }
  int mode_index(int kx, int ky) const { return ky * kx_count() + kx + k_ - 1; }

  /// Spectrum of a real N x C field: re, im are mode_count x C.
  void analyze(const double* v, int channels, RowMatrix& re, RowMatrix& im) const;
  /// Real N x C field from mode_count x C spectrum; result is added to `out`.
  void synthesize_add(const RowMatrix& re, const RowMatrix& im, double* out, int channels) const;
  /// Adjoint of analyze: accumulates into dv (N x C).
  void analyze_adjoint_add(const RowMatrix& dre, const RowMatrix& dim, double* dv, int channels) const;
  /// Adjoint of synthesize_add: spectrum gradient from dout (N x C).
  void synthesize_adjoint(const double* dout, int channels, RowMatrix& dre, RowMatrix& dim) const;

 private:
  // x-stage kernels on ky-blocked matrices, shared by the forward maps and
  // their adjoints.
  void x_forward(const RowMatrix& gre, const RowMatrix& gim, RowMatrix& hre, RowMatrix& him,
                 int channels) const;
  void x_inverse(const RowMatrix& ore, const RowMatrix& oim, RowMatrix& pre, RowMatrix& pim,
                 int channels) const;

  Grid2D grid_;
  int k_;
  RowMatrix cos_y_, sin_y_;  // k x ny, forward y transform
  RowMatrix syn_cos_y_, syn_sin_y_;  // ny x k, weighted and 1/N scaled
  RowMatrix cos_x_, sin_x_;  // (2k-1) x nx
};

/// Complex channel mixing per mode: out[m] = in[m] * R[m], with R stored as
/// [mode][re|im][in][out].
void spectral_mix(std::span<const double> weights, int c_in, int c_out, const RowMatrix& in_re,
                  const RowMatrix& in_im, RowMatrix& out_re, RowMatrix& out_im);

/// Input part of the adjoint of spectral_mix only.
void spectral_mix_input_adjoint(std::span<const double> weights, int c_in, int c_out,
                                const RowMatrix& dout_re, const RowMatrix& dout_im,
                                RowMatrix& din_re, RowMatrix& din_im);

/// Adjoint of spectral_mix. Overwrites d_weights and d_in.
void spectral_mix_adjoint(std::span<const double> weights, int c_in, int c_out,
                          const RowMatrix& in_re, const RowMatrix& in_im, const RowMatrix& dout_re,
                          const RowMatrix& dout_im, std::span<double> d_weights, RowMatrix& din_re,
                          RowMatrix& din_im);

}  // namespace liftuq
