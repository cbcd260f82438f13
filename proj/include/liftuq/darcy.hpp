#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "liftuq/container.hpp"
#include "liftuq/rng.hpp"
#include "liftuq/tensor_field.hpp"

namespace liftuq {

/// Two-level coefficient law: a_high where a smoothed Gaussian latent field
/// exceeds `threshold`, a_low elsewhere.
struct CoefficientConfig {
  double correlation_length = 0.15;
  double a_low = 3.0;
  double a_high = 12.0;
  double threshold = 0.0;

  /// Throws ConfigError when the levels are not 0 < a_low < a_high or the
  /// correlation length is not resolvable on `grid` (must exceed 2h).
  void validate(const Grid2D& grid) const;
};

struct DarcySample {
  Field a;
  Field u;
};

inline constexpr double kDefaultSolverTol = 1e-10;

/// Unit-variance latent field: i.i.d. normals on a padded grid smoothed by a
/// separable Gaussian kernel of width `correlation_length`.
Field sample_latent_field(RngStream& rng, const Grid2D& grid, double correlation_length);

Field sample_coefficient(RngStream& rng, const Grid2D& grid, const CoefficientConfig& cfg);

/// Solves -div(a grad u) = 1 with u = 0 on the boundary.
///
/// Five-point finite-volume stencil with harmonic means of the nodal
/// coefficient on cell faces, solved by Jacobi-preconditioned CG until the
/// interior max-norm residual is at most tol (the right-hand side is 1).
/// Throws NumericalError carrying the last residual if 20*N iterations do
/// not suffice, ConfigError for non-positive coefficients.
Field solve_darcy(const Field& a, double tol = kDefaultSolverTol);

/// max over interior nodes of |(-div_h(a grad_h u))(x) - 1|.
double stencil_residual_inf(const Field& a, const Field& u);

/// Strided subsampling keeping boundary nodes; (n-1) must divide by factor.
Field downsample(const Field& f, int factor);

struct DarcySplits {
  DatasetContainer train;
  DatasetContainer calibration;
  DatasetContainer test;
};

/// Generates the three splits. Split s uses stream root.fork(s) and sample i
/// of that split uses fork(i) of the split stream, so every sample is a pure
/// function of (seed, split, index) and independent of worker count.
DarcySplits generate_dataset(std::uint64_t seed, const Grid2D& grid, const CoefficientConfig& cfg,
                             int n_train, int n_cal, int n_test, double tol = kDefaultSolverTol);

/// Packs samples into a container with tensors `a` and `u` of shape
/// [samples, ny, nx, 1].
DatasetContainer pack_samples(const std::vector<DarcySample>& samples, const Grid2D& grid);
std::vector<DarcySample> unpack_samples(const DatasetContainer& container);
Grid2D container_grid(const DatasetContainer& container);

}  // namespace liftuq
