#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "liftuq/darcy.hpp"
#include "../support/oracles.hpp"

using namespace liftuq;
using oracle::center_double_series;
using oracle::center_single_series;

namespace {

Field constant(const Grid2D& g, double c) {
  Field a(g, 1);
  for (double& v : a.values()) v = c;
  return a;
}

}  // namespace

TEST_CASE("a = 1 on 65x65 matches the sine-series centre value") {
  const double series = center_double_series(3001);
  CHECK(std::abs(series - center_single_series()) < 1e-6);
  CHECK(std::abs(series - 0.07367) < 1e-5);
  const Grid2D g(65, 65);
  const Field u = solve_darcy(constant(g, 1.0));
  CHECK(std::abs(u.at(g.index(32, 32), 0) - series) <= 2e-3);
  CHECK(stencil_residual_inf(constant(g, 1.0), u) <= 1e-9);
}

TEST_CASE("constant coefficient scales the solution as 1/c") {
  const Grid2D g(33, 33);
  const double tol = 1e-10;
  const Field u1 = solve_darcy(constant(g, 1.0), tol);
  for (double c : {2.5, 7.0}) {
    const Field uc = solve_darcy(constant(g, c), tol);
    double worst = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n) {
      worst = std::max(worst, std::abs(c * uc.at(n, 0) - u1.at(n, 0)));
      scale = std::max(scale, std::abs(u1.at(n, 0)));
    }
    CHECK(worst / scale <= 10 * tol);
  }
}

TEST_CASE("x-y symmetric coefficient gives a symmetric solution") {
  const Grid2D g(33, 33);
  Field a(g, 1);
  for (int iy = 0; iy < 33; ++iy) {
    for (int ix = 0; ix < 33; ++ix) {
      a.at(g.index(ix, iy), 0) = (ix + iy) % 7 < 3 || (ix * iy) % 5 == 1 ? 12.0 : 3.0;
    }
  }
  const Field u = solve_darcy(a, 1e-10);
  double worst = 0.0;
  for (int iy = 0; iy < 33; ++iy) {
    for (int ix = 0; ix < 33; ++ix) worst = std::max(worst, std::abs(u.at(g.index(ix, iy), 0) - u.at(g.index(iy, ix), 0)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("solver rejects non-positive coefficients") {
  const Grid2D g(9, 9);
  Field a = constant(g, 1.0);
  a.at(g.index(4, 4), 0) = 0.0;
  CHECK_THROWS_AS(solve_darcy(a), ConfigError);
  CHECK_THROWS_AS(solve_darcy(field_zeros(g, 2)), ConfigError);
}

TEST_CASE("coefficient law") {
  const Grid2D g(33, 33);
  CoefficientConfig cfg;
  RngStream rng(1);
  cfg.threshold = -std::numeric_limits<double>::infinity();
  for (const Field tmp = sample_coefficient(rng, g, cfg); double v : tmp.values()) CHECK(v == cfg.a_high);
  cfg.threshold = std::numeric_limits<double>::infinity();
  for (const Field tmp = sample_coefficient(rng, g, cfg); double v : tmp.values()) CHECK(v == cfg.a_low);

  cfg.threshold = 0.0;
  RngStream draws(2);
  double high = 0.0, total = 0.0;
  for (int i = 0; i < 100; ++i) {
    RngStream r = draws.fork(static_cast<std::uint64_t>(i));
    for (const Field tmp = sample_coefficient(r, g, cfg); double v : tmp.values()) {
      high += v == cfg.a_high;
      total += 1.0;
    }
  }
  CHECK(high / total >= 0.35);
  CHECK(high / total <= 0.65);

  RngStream r1(4), r2(4);
  CHECK(sample_coefficient(r1, g, cfg) == sample_coefficient(r2, g, cfg));
}

TEST_CASE("coefficient config validation") {
  const Grid2D g(33, 33);
  CoefficientConfig cfg;
  cfg.correlation_length = 2 * g.hx();
  CHECK_THROWS_AS(cfg.validate(g), ConfigError);
  cfg = {};
  cfg.a_low = 12;
  cfg.a_high = 3;
  CHECK_THROWS_AS(cfg.validate(g), ConfigError);
  cfg = {};
  cfg.a_low = 0;
  CHECK_THROWS_AS(cfg.validate(g), ConfigError);
}

TEST_CASE("raising a_high never raises max(u)") {
  const Grid2D g(33, 33);
  RngStream root(8);
  for (int i = 0; i < 10; ++i) {
    RngStream r = root.fork(static_cast<std::uint64_t>(i));
    const Field latent = sample_latent_field(r, g, 0.15);
    Field lo(g, 1), hi(g, 1);
    for (std::size_t n = 0; n < g.size(); ++n) {
      lo.at(n, 0) = latent.at(n, 0) > 0 ? 12.0 : 3.0;
      hi.at(n, 0) = latent.at(n, 0) > 0 ? 20.0 : 3.0;
    }
    const auto max_of = [](const Field& f) { return *std::max_element(f.values().begin(), f.values().end()); };
    CHECK(max_of(solve_darcy(hi)) <= max_of(solve_darcy(lo)));
  }
}

TEST_CASE("downsample") {
  const Grid2D g(65, 65);
  Field f(g, 1);
  for (std::size_t n = 0; n < g.size(); ++n) f.at(n, 0) = static_cast<double>(n);
  CHECK(downsample(f, 1) == f);
  const Field d = downsample(f, 2);
  REQUIRE(d.grid() == Grid2D(33, 33));
  CHECK(d.at(0, 0) == f.at(0, 0));
  CHECK(d.at(d.grid().index(32, 0), 0) == f.at(g.index(64, 0), 0));
  CHECK(d.at(d.grid().index(32, 32), 0) == f.at(g.index(64, 64), 0));
  CHECK(d.at(d.grid().index(5, 7), 0) == f.at(g.index(10, 14), 0));
  CHECK_THROWS_AS(downsample(d, 2 * 3), ConfigError);
  CHECK_THROWS_AS(downsample(Field(Grid2D(33, 33), 1), 2 * 2 * 2 * 2 * 2 * 2), ConfigError);
  CHECK_THROWS_AS(downsample(Field(Grid2D(34, 33), 1), 2), ConfigError);
}

TEST_CASE("generated splits: invariants and determinism") {
  const Grid2D g(17, 17);
  const CoefficientConfig cfg;
  const DarcySplits a = generate_dataset(1, g, cfg, 6, 2, 2);
  const DarcySplits b = generate_dataset(1, g, cfg, 6, 2, 2);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(!(a.train == generate_dataset(2, g, cfg, 6, 2, 2).train));
  for (const auto* c : {&a.train, &a.calibration, &a.test}) {
    for (const auto& s : unpack_samples(*c)) {
      for (int iy = 0; iy < 17; ++iy) {
        for (int ix = 0; ix < 17; ++ix) {
          if (g.on_boundary(ix, iy)) CHECK(s.u.at(g.index(ix, iy), 0) == 0.0);
        }
      }
      for (double v : s.u.values()) CHECK(v >= -1e-10);
      CHECK(stencil_residual_inf(s.a, s.u) <= 10 * kDefaultSolverTol);
    }
  }
  CHECK(a.train.require_meta("samples") == "6");
  CHECK(unpack_samples(a.calibration).size() == 2);
  // Calibration and test draw from distinct streams.
  CHECK(!(unpack_samples(a.calibration)[0].a == unpack_samples(a.test)[0].a));
  CHECK_THROWS_AS(generate_dataset(1, g, cfg, 0, 2, 2), ConfigError);
}
