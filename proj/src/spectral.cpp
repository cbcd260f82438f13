#include "liftuq/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>

namespace liftuq {

namespace {

// Reduces the phase argument modulo the period before evaluating sin/cos so
// the tables are accurate for large k * n products.
double phase(long long k, long long n, long long period) {
  const long long r = ((k * n) % period + period) % period;
  return 2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(period);
}

}  // namespace

SpectralPlan::SpectralPlan(const Grid2D& grid, int k_max) : grid_(grid), k_(k_max) {
  const int nx = grid.nx();
  const int ny = grid.ny();
  if (k_max < 1 || k_max > std::min(nx, ny) / 2) {
    throw ConfigError("k_max " + std::to_string(k_max) + " exceeds the Nyquist bound " +
                      std::to_string(std::min(nx, ny) / 2) + " for a " + std::to_string(nx) + "x" +
                      std::to_string(ny) + " grid");
  }
  const double inv_n = 1.0 / static_cast<double>(grid.size());
  cos_y_.resize(k_, ny);
  sin_y_.resize(k_, ny);
  syn_cos_y_.resize(ny, k_);
  syn_sin_y_.resize(ny, k_);
  for (int ky = 0; ky < k_; ++ky) {
    const double w = (ky == 0 ? 1.0 : 2.0) * inv_n;
    for (int y = 0; y < ny; ++y) {
      const double t = phase(ky, y, ny);
      cos_y_(ky, y) = std::cos(t);
      sin_y_(ky, y) = std::sin(t);
      syn_cos_y_(y, ky) = w * std::cos(t);
      syn_sin_y_(y, ky) = w * std::sin(t);
    }
  }
  cos_x_.resize(kx_count(), nx);
  sin_x_.resize(kx_count(), nx);
  for (int i = 0; i < kx_count(); ++i) {
    const int kx = i - (k_ - 1);
    for (int x = 0; x < nx; ++x) {
      const double t = phase(kx, x, nx);
      cos_x_(i, x) = std::cos(t);
      sin_x_(i, x) = std::sin(t);
    }
  }
}

std::shared_ptr<const SpectralPlan> SpectralPlan::get(const Grid2D& grid, int k_max) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const SpectralPlan>> cache;
  const auto key = std::make_tuple(grid.nx(), grid.ny(), k_max);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<const SpectralPlan>(grid, k_max);
  cache.emplace(key, plan);
  return plan;
}

void SpectralPlan::x_forward(const RowMatrix& gre, const RowMatrix& gim, RowMatrix& hre,
                             RowMatrix& him, int channels) const {
  const int nx = grid_.nx();
  const int mx = kx_count();
  hre.resize(mode_count(), channels);
  him.resize(mode_count(), channels);
  for (int ky = 0; ky < k_; ++ky) {
    ConstRowMap gr(gre.data() + static_cast<std::ptrdiff_t>(ky) * nx * channels, nx, channels);
    ConstRowMap gi(gim.data() + static_cast<std::ptrdiff_t>(ky) * nx * channels, nx, channels);
    auto hr = hre.middleRows(ky * mx, mx);
    auto hi = him.middleRows(ky * mx, mx);
    hr.noalias() = cos_x_ * gr;
    hr.noalias() += sin_x_ * gi;
    hi.noalias() = cos_x_ * gi;
    hi.noalias() -= sin_x_ * gr;
  }
}

void SpectralPlan::x_inverse(const RowMatrix& ore, const RowMatrix& oim, RowMatrix& pre,
                             RowMatrix& pim, int channels) const {
  const int nx = grid_.nx();
  const int mx = kx_count();
  pre.resize(k_, static_cast<Eigen::Index>(nx) * channels);
  pim.resize(k_, static_cast<Eigen::Index>(nx) * channels);
  for (int ky = 0; ky < k_; ++ky) {
    RowMap pr(pre.data() + static_cast<std::ptrdiff_t>(ky) * nx * channels, nx, channels);
    RowMap pi(pim.data() + static_cast<std::ptrdiff_t>(ky) * nx * channels, nx, channels);
    const auto orr = ore.middleRows(ky * mx, mx);
    const auto oii = oim.middleRows(ky * mx, mx);
    pr.noalias() = cos_x_.transpose() * orr;
    pr.noalias() -= sin_x_.transpose() * oii;
    pi.noalias() = cos_x_.transpose() * oii;
    pi.noalias() += sin_x_.transpose() * orr;
  }
}

void SpectralPlan::analyze(const double* v, int channels, RowMatrix& re, RowMatrix& im) const {
  const Eigen::Index cols = static_cast<Eigen::Index>(grid_.nx()) * channels;
  ConstRowMap vm(v, grid_.ny(), cols);
  RowMatrix gre = cos_y_ * vm;
  RowMatrix gim = -(sin_y_ * vm);
  x_forward(gre, gim, re, im, channels);
}

void SpectralPlan::synthesize_add(const RowMatrix& re, const RowMatrix& im, double* out,
                                  int channels) const {
  RowMatrix pre, pim;
  x_inverse(re, im, pre, pim, channels);
  RowMap om(out, grid_.ny(), static_cast<Eigen::Index>(grid_.nx()) * channels);
  om.noalias() += syn_cos_y_ * pre;
  om.noalias() -= syn_sin_y_ * pim;
}

void SpectralPlan::analyze_adjoint_add(const RowMatrix& dre, const RowMatrix& dim, double* dv,
                                       int channels) const {
  RowMatrix gre, gim;
  x_inverse(dre, dim, gre, gim, channels);
  RowMap dm(dv, grid_.ny(), static_cast<Eigen::Index>(grid_.nx()) * channels);
  dm.noalias() += cos_y_.transpose() * gre;
  dm.noalias() -= sin_y_.transpose() * gim;
}

void SpectralPlan::synthesize_adjoint(const double* dout, int channels, RowMatrix& dre,
                                      RowMatrix& dim) const {
  ConstRowMap dm(dout, grid_.ny(), static_cast<Eigen::Index>(grid_.nx()) * channels);
  RowMatrix pre = syn_cos_y_.transpose() * dm;
  RowMatrix pim = -(syn_sin_y_.transpose() * dm);
  x_forward(pre, pim, dre, dim, channels);
}

void spectral_mix(std::span<const double> weights, int c_in, int c_out, const RowMatrix& in_re,
                  const RowMatrix& in_im, RowMatrix& out_re, RowMatrix& out_im) {
  const Eigen::Index modes = in_re.rows();
  const std::size_t block = static_cast<std::size_t>(c_in) * c_out;
  out_re.resize(modes, c_out);
  out_im.resize(modes, c_out);
  for (Eigen::Index m = 0; m < modes; ++m) {
    ConstRowMap wr(weights.data() + 2 * block * m, c_in, c_out);
    ConstRowMap wi(weights.data() + 2 * block * m + block, c_in, c_out);
    out_re.row(m).noalias() = in_re.row(m) * wr;
    out_re.row(m).noalias() -= in_im.row(m) * wi;
    out_im.row(m).noalias() = in_re.row(m) * wi;
    out_im.row(m).noalias() += in_im.row(m) * wr;
  }
}

void spectral_mix_input_adjoint(std::span<const double> weights, int c_in, int c_out,
                                const RowMatrix& dout_re, const RowMatrix& dout_im,
                                RowMatrix& din_re, RowMatrix& din_im) {
  const Eigen::Index modes = dout_re.rows();
  const std::size_t block = static_cast<std::size_t>(c_in) * c_out;
  din_re.resize(modes, c_in);
  din_im.resize(modes, c_in);
  for (Eigen::Index m = 0; m < modes; ++m) {
    ConstRowMap wr(weights.data() + 2 * block * m, c_in, c_out);
    ConstRowMap wi(weights.data() + 2 * block * m + block, c_in, c_out);
    din_re.row(m).noalias() = dout_re.row(m) * wr.transpose();
    din_re.row(m).noalias() += dout_im.row(m) * wi.transpose();
    din_im.row(m).noalias() = dout_im.row(m) * wr.transpose();
    din_im.row(m).noalias() -= dout_re.row(m) * wi.transpose();
  }
}

void spectral_mix_adjoint(std::span<const double> weights, int c_in, int c_out,
                          const RowMatrix& in_re, const RowMatrix& in_im, const RowMatrix& dout_re,
                          const RowMatrix& dout_im, std::span<double> d_weights, RowMatrix& din_re,
                          RowMatrix& din_im) {
  const Eigen::Index modes = in_re.rows();
  const std::size_t block = static_cast<std::size_t>(c_in) * c_out;
  din_re.resize(modes, c_in);
  din_im.resize(modes, c_in);
  for (Eigen::Index m = 0; m < modes; ++m) {
    ConstRowMap wr(weights.data() + 2 * block * m, c_in, c_out);
    ConstRowMap wi(weights.data() + 2 * block * m + block, c_in, c_out);
    RowMap dwr(d_weights.data() + 2 * block * m, c_in, c_out);
    RowMap dwi(d_weights.data() + 2 * block * m + block, c_in, c_out);
    din_re.row(m).noalias() = dout_re.row(m) * wr.transpose();
    din_re.row(m).noalias() += dout_im.row(m) * wi.transpose();
    din_im.row(m).noalias() = dout_im.row(m) * wr.transpose();
    din_im.row(m).noalias() -= dout_re.row(m) * wi.transpose();
    dwr.noalias() = in_re.row(m).transpose() * dout_re.row(m);
    dwr.noalias() += in_im.row(m).transpose() * dout_im.row(m);
    dwi.noalias() = in_re.row(m).transpose() * dout_im.row(m);
    dwi.noalias() -= in_im.row(m).transpose() * dout_re.row(m);
  }
}

}  // namespace liftuq
