#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

#include "liftuq/render.hpp"

using namespace liftuq;

namespace {

std::string header_of(const std::vector<std::uint8_t>& b, std::size_t len) {
  return std::string(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(len));
}

std::array<std::uint8_t, 3> pixel(const std::vector<std::uint8_t>& b, std::size_t header, int nx,
                                  int row, int col) {
  const std::size_t o = header + 3 * (static_cast<std::size_t>(row) * nx + col);
  return {b[o], b[o + 1], b[o + 2]};
}

}  // namespace

TEST_CASE("ramp endpoints") {
  CHECK(ramp_color(0.0) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(ramp_color(0.5) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(ramp_color(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});
  CHECK(ramp_color(-3.0) == ramp_color(0.0));
  CHECK(ramp_color(7.0) == ramp_color(1.0));
}

TEST_CASE("header and size") {
  const Grid2D g(4, 3);
  const auto b = render_ppm(field_zeros(g, 1), {});
  const std::string h = "P6\n4 3\n255\n";
  CHECK(header_of(b, h.size()) == h);
  CHECK(b.size() == h.size() + 3 * 12);
}

TEST_CASE("constant field renders white") {
  const Grid2D g(5, 5);
  Field f(g, 1);
  for (double& v : f.values()) v = 2.5;
  const auto b = render_ppm(f, {});
  const std::size_t h = std::string("P6\n5 5\n255\n").size();
  for (std::size_t i = h; i < b.size(); ++i) CHECK(b[i] == 255);
}

TEST_CASE("coverage mask colors and orientation") {
  const Grid2D g(3, 3);
  const Field r(g, 1, {0, 2, 0, 0, 0, 0, 0, 0, 0});
  Field band(g, 1);
  for (double& v : band.values()) v = 1.0;
  const Field m = miss_mask_field(r, band);
  CHECK(m.values()[1] == 1.0);
  CHECK(m.values()[0] == 0.0);
  const auto b = render_ppm(m, ColorRange{0.0, 1.0});
  const std::size_t h = std::string("P6\n3 3\n255\n").size();
  // Point (ix=1, iy=0) is on the bottom image row.
  CHECK(pixel(b, h, 3, 2, 1) == std::array<std::uint8_t, 3>{255, 0, 0});
  CHECK(pixel(b, h, 3, 2, 0) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(pixel(b, h, 3, 0, 1) == std::array<std::uint8_t, 3>{0, 0, 255});
}

TEST_CASE("explicit range clamps") {
  const Grid2D g(3, 3);
  const Field f(g, 1, {-5, 0, 5, 0, 0, 0, 0, 0, 0});
  const auto b = render_ppm(f, ColorRange{-1.0, 1.0});
  const std::size_t h = std::string("P6\n3 3\n255\n").size();
  CHECK(pixel(b, h, 3, 2, 0) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK(pixel(b, h, 3, 2, 1) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(pixel(b, h, 3, 2, 2) == std::array<std::uint8_t, 3>{255, 0, 0});
  CHECK_THROWS_AS(render_ppm(f, ColorRange{1.0, 1.0}), ConfigError);
}

TEST_CASE("NaN is rejected with its location") {
  const Grid2D g(3, 3);
  Field f(g, 1);
  f.values()[4] = std::numeric_limits<double>::quiet_NaN();
  try {
    render_ppm(f, {});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find('4') != std::string::npos);
  }
}

TEST_CASE("rendering is deterministic") {
  const Grid2D g(6, 4);
  Field f(g, 1);
  for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = std::sin(0.7 * i);
  CHECK(render_ppm(f, {}) == render_ppm(f, {}));
}

TEST_CASE("selector names") {
  for (auto s : {FieldSelector::Residual, FieldSelector::Sigma, FieldSelector::Band,
                 FieldSelector::CoverageMask, FieldSelector::Input, FieldSelector::Truth,
                 FieldSelector::Mean}) {
    CHECK(parse_selector(selector_name(s)) == s);
  }
  CHECK(selector_name(FieldSelector::CoverageMask) == "coverage-mask");
  CHECK_THROWS_AS(parse_selector("nope"), ConfigError);
}
