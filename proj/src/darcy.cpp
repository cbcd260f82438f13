#include "liftuq/darcy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "liftuq/parallel.hpp"
#include "liftuq/text.hpp"

namespace liftuq {

void CoefficientConfig::validate(const Grid2D& grid) const {
  if (!(a_low > 0.0) || !(a_high > a_low)) {
    throw ConfigError("coefficient levels must satisfy 0 < a_low < a_high");
  }
  const double bound = 2.0 * std::max(grid.hx(), grid.hy());
  if (!(correlation_length > bound) || !(correlation_length < 1.0)) {
    throw ConfigError("correlation_length " + format_double(correlation_length) +
                      " is not resolvable on this grid (need " + format_double(bound) +
                      " < length < 1)");
  }
}

namespace {

std::vector<double> gaussian_taps(double h, double length, int radius) {
  std::vector<double> w(2 * radius + 1);
  double sq = 0.0;
  for (int j = -radius; j <= radius; ++j) {
    const double d = j * h;
    w[j + radius] = std::exp(-d * d / (2.0 * length * length));
    sq += w[j + radius] * w[j + radius];
  }
  const double norm = 1.0 / std::sqrt(sq);
  for (double& v : w) v *= norm;
  return w;
}

}  // namespace

Field sample_latent_field(RngStream& rng, const Grid2D& grid, double correlation_length) {
  const int rx = static_cast<int>(std::ceil(3.0 * correlation_length / grid.hx()));
  const int ry = static_cast<int>(std::ceil(3.0 * correlation_length / grid.hy()));
  const auto wx = gaussian_taps(grid.hx(), correlation_length, rx);
  const auto wy = gaussian_taps(grid.hy(), correlation_length, ry);
  const int px = grid.nx() + 2 * rx;
  const int py = grid.ny() + 2 * ry;

  std::vector<double> noise(static_cast<std::size_t>(px) * py);
  for (double& v : noise) v = rng.normal();

  // Smooth along x on all padded rows, then along y onto the grid.
  std::vector<double> rows(static_cast<std::size_t>(py) * grid.nx(), 0.0);
  for (int j = 0; j < py; ++j) {
    for (int i = 0; i < grid.nx(); ++i) {
      double s = 0.0;
      for (int k = 0; k <= 2 * rx; ++k) s += wx[k] * noise[static_cast<std::size_t>(j) * px + i + k];
      rows[static_cast<std::size_t>(j) * grid.nx() + i] = s;
    }
  }
  Field out(grid, 1);
  for (int j = 0; j < grid.ny(); ++j) {
    for (int i = 0; i < grid.nx(); ++i) {
      double s = 0.0;
      for (int k = 0; k <= 2 * ry; ++k) s += wy[k] * rows[static_cast<std::size_t>(j + k) * grid.nx() + i];
      out.at(grid.index(i, j), 0) = s;
    }
  }
  return out;
}

Field sample_coefficient(RngStream& rng, const Grid2D& grid, const CoefficientConfig& cfg) {
  cfg.validate(grid);
  Field latent = sample_latent_field(rng, grid, cfg.correlation_length);
  Field a(grid, 1);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    a.at(n, 0) = latent.at(n, 0) > cfg.threshold ? cfg.a_high : cfg.a_low;
  }
  return a;
}

namespace {

double harmonic(double p, double q) { return 2.0 * p * q / (p + q); }

/// Face coefficients of the five-point operator, stored per node.
struct Stencil {
  Grid2D grid;
  std::vector<double> east, west, north, south, diag;

  explicit Stencil(const Field& a) : grid(a.grid()) {
    const std::size_t n = grid.size();
    east.assign(n, 0.0);
    west.assign(n, 0.0);
    north.assign(n, 0.0);
    south.assign(n, 0.0);
    diag.assign(n, 0.0);
    const double ihx2 = 1.0 / (grid.hx() * grid.hx());
    const double ihy2 = 1.0 / (grid.hy() * grid.hy());
    for (int j = 1; j < grid.ny() - 1; ++j) {
      for (int i = 1; i < grid.nx() - 1; ++i) {
        const std::size_t k = grid.index(i, j);
        const double c = a.at(k, 0);
        east[k] = harmonic(c, a.at(grid.index(i + 1, j), 0)) * ihx2;
        west[k] = harmonic(c, a.at(grid.index(i - 1, j), 0)) * ihx2;
        north[k] = harmonic(c, a.at(grid.index(i, j + 1), 0)) * ihy2;
        south[k] = harmonic(c, a.at(grid.index(i, j - 1), 0)) * ihy2;
        diag[k] = east[k] + west[k] + north[k] + south[k];
      }
    }
  }

  /// y = A x on interior nodes; boundary entries of y are zero.
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    const int nx = grid.nx();
    for (int j = 1; j < grid.ny() - 1; ++j) {
      for (int i = 1; i < nx - 1; ++i) {
        const std::size_t k = grid.index(i, j);
        y[k] = diag[k] * x[k] - east[k] * x[k + 1] - west[k] * x[k - 1] - north[k] * x[k + nx] -
               south[k] * x[k - nx];
      }
    }
  }
};

}  // namespace

Field solve_darcy(const Field& a, double tol) {
  if (a.channels() != 1) throw ConfigError("solve_darcy expects a one-channel coefficient");
  for (double v : a.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("coefficient must be strictly positive");
  }
  if (!(tol > 0.0)) throw ConfigError("solver tolerance must be positive");
  const Grid2D& g = a.grid();
  const Stencil st(a);
  const std::size_t n = g.size();

  std::vector<double> x(n, 0.0), r(n, 0.0), z(n, 0.0), p(n, 0.0), q(n, 0.0);
  std::vector<std::size_t> interior;
  interior.reserve(n);
  for (int j = 1; j < g.ny() - 1; ++j) {
    for (int i = 1; i < g.nx() - 1; ++i) interior.push_back(g.index(i, j));
  }
  for (std::size_t k : interior) r[k] = 1.0;

  auto max_abs = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (std::size_t k : interior) m = std::max(m, std::abs(v[k]));
    return m;
  };

  double rz = 0.0;
  for (std::size_t k : interior) {
    z[k] = r[k] / st.diag[k];
    p[k] = z[k];
    rz += r[k] * z[k];
  }
  const std::size_t cap = 20 * n;
  double res = max_abs(r);
  std::size_t it = 0;
  while (res > tol) {
    if (it++ >= cap) {
      throw NumericalError("darcy CG did not converge in " + std::to_string(cap) +
                           " iterations, final residual " + format_double(res));
    }
    st.apply(p, q);
    double pq = 0.0;
    for (std::size_t k : interior) pq += p[k] * q[k];
    const double alpha = rz / pq;
    for (std::size_t k : interior) {
      x[k] += alpha * p[k];
      r[k] -= alpha * q[k];
    }
    res = max_abs(r);
    // Recompute the true residual now and then so drift cannot fake convergence.
    if (res <= tol || it % 200 == 0) {
      st.apply(x, q);
      for (std::size_t k : interior) r[k] = 1.0 - q[k];
      res = max_abs(r);
    }
    double rz_new = 0.0;
    for (std::size_t k : interior) {
      z[k] = r[k] / st.diag[k];
      rz_new += r[k] * z[k];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t k : interior) p[k] = z[k] + beta * p[k];
  }
  Field u(g, 1, std::move(x));
  return u;
}

double stencil_residual_inf(const Field& a, const Field& u) {
  if (!a.same_shape(u) || a.channels() != 1) throw ConfigError("stencil_residual: shape mismatch");
  const Stencil st(a);
  std::vector<double> x(u.values().begin(), u.values().end());
  std::vector<double> y(x.size(), 0.0);
  st.apply(x, y);
  double m = 0.0;
  const Grid2D& g = a.grid();
  for (int j = 1; j < g.ny() - 1; ++j) {
    for (int i = 1; i < g.nx() - 1; ++i) m = std::max(m, std::abs(y[g.index(i, j)] - 1.0));
  }
  return m;
}

Field downsample(const Field& f, int factor) {
  const Grid2D& g = f.grid();
  if (factor < 1 || (g.nx() - 1) % factor != 0 || (g.ny() - 1) % factor != 0) {
    throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide grid " +
                      std::to_string(g.nx() - 1) + "x" + std::to_string(g.ny() - 1) + " intervals");
  }
  const Grid2D coarse((g.nx() - 1) / factor + 1, (g.ny() - 1) / factor + 1);
  Field out(coarse, f.channels());
  for (int j = 0; j < coarse.ny(); ++j) {
    for (int i = 0; i < coarse.nx(); ++i) {
      for (int c = 0; c < f.channels(); ++c) {
        out.at(coarse.index(i, j), c) = f.at(g.index(i * factor, j * factor), c);
      }
    }
  }
  return out;
}

DatasetContainer pack_samples(const std::vector<DarcySample>& samples, const Grid2D& grid) {
  const std::size_t s = samples.size();
  const std::size_t n = grid.size();
  Tensor a{"a", {s, static_cast<std::size_t>(grid.ny()), static_cast<std::size_t>(grid.nx()), 1}, {}};
  Tensor u{"u", a.shape, {}};
  a.data.reserve(s * n);
  u.data.reserve(s * n);
  for (const auto& smp : samples) {
    if (smp.a.grid() != grid || smp.u.grid() != grid || smp.a.channels() != 1 || smp.u.channels() != 1) {
      throw ConfigError("pack_samples: sample shape does not match grid");
    }
    a.data.insert(a.data.end(), smp.a.values().begin(), smp.a.values().end());
    u.data.insert(u.data.end(), smp.u.values().begin(), smp.u.values().end());
  }
  DatasetContainer c;
  c.set_meta("kind", "darcy");
  c.set_meta("nx", std::to_string(grid.nx()));
  c.set_meta("ny", std::to_string(grid.ny()));
  c.set_meta("input_channels", "1");
  c.set_meta("output_channels", "1");
  c.set_meta("samples", std::to_string(s));
  c.add(std::move(a));
  c.add(std::move(u));
  return c;
}

Grid2D container_grid(const DatasetContainer& container) {
  return Grid2D(static_cast<int>(parse_int(container.require_meta("nx"))),
                static_cast<int>(parse_int(container.require_meta("ny"))));
}

std::vector<DarcySample> unpack_samples(const DatasetContainer& container) {
  const Grid2D grid = container_grid(container);
  const std::size_t s = static_cast<std::size_t>(parse_int(container.require_meta("samples")));
  const Tensor& a = container.get("a");
  const Tensor& u = container.get("u");
  const std::vector<std::size_t> shape{s, static_cast<std::size_t>(grid.ny()),
                                       static_cast<std::size_t>(grid.nx()), 1};
  if (a.shape != shape) throw IoError("tensor 'a' shape does not match manifest sample count/grid");
  if (u.shape != shape) throw IoError("tensor 'u' shape does not match manifest sample count/grid");
  const std::size_t n = grid.size();
  std::vector<DarcySample> out;
  out.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    out.push_back({Field(grid, 1, std::vector<double>(a.data.begin() + i * n, a.data.begin() + (i + 1) * n)),
                   Field(grid, 1, std::vector<double>(u.data.begin() + i * n, u.data.begin() + (i + 1) * n))});
  }
  return out;
}

DarcySplits generate_dataset(std::uint64_t seed, const Grid2D& grid, const CoefficientConfig& cfg,
                             int n_train, int n_cal, int n_test, double tol) {
  if (n_train < 1 || n_cal < 1 || n_test < 1) {
    throw ConfigError("generate_dataset: every split needs at least one sample");
  }
  cfg.validate(grid);
  const RngStream root(seed);
  const char* names[3] = {"train", "calibration", "test"};
  const int counts[3] = {n_train, n_cal, n_test};
  DatasetContainer out[3];
  for (int s = 0; s < 3; ++s) {
    const RngStream split = root.fork(static_cast<std::uint64_t>(s));
    std::vector<DarcySample> samples(counts[s]);
    parallel_for(samples.size(), [&](std::size_t i) {
      RngStream rng = split.fork(i);
      Field a = sample_coefficient(rng, grid, cfg);
      Field u;
      try {
        u = solve_darcy(a, tol);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(names[s]) + " sample " + std::to_string(i) + ": " + e.what());
      }
      samples[i] = {std::move(a), std::move(u)};
    });
    out[s] = pack_samples(samples, grid);
    out[s].set_meta("split", names[s]);
    out[s].set_meta("seed", std::to_string(seed));
    out[s].set_meta("split_stream", std::to_string(s));
    out[s].set_meta("coefficient.law", "two-level threshold of gaussian-smoothed white noise");
    out[s].set_meta("coefficient.correlation_length", format_double(cfg.correlation_length));
    out[s].set_meta("coefficient.a_low", format_double(cfg.a_low));
    out[s].set_meta("coefficient.a_high", format_double(cfg.a_high));
    out[s].set_meta("coefficient.threshold", format_double(cfg.threshold));
    out[s].set_meta("solver", "5-point harmonic-mean finite volume, jacobi-pcg, max-norm residual");
    out[s].set_meta("solver.tol", format_double(tol));
    out[s].set_meta("forcing", "1");
  }
  return {std::move(out[0]), std::move(out[1]), std::move(out[2])};
}

}  // namespace liftuq
