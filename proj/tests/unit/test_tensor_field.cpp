#include <doctest.h>

#include <cmath>
#include <limits>

#include "liftuq/tensor_field.hpp"

using namespace liftuq;

TEST_CASE("grid geometry") {
  Grid2D g(5, 3);
  CHECK(g.size() == 15);
  CHECK(g.hx() == 0.25);
  CHECK(g.hy() == 0.5);
  CHECK(g.x(4) == 1.0);
  CHECK(g.index(2, 1) == 7);
  CHECK(g.on_boundary(0, 1));
  CHECK_FALSE(g.on_boundary(2, 1));
  CHECK_THROWS_WITH_AS(Grid2D(2, 5), doctest::Contains("grid too small"), ConfigError);
  CHECK_THROWS_AS(Grid2D(5, 2), ConfigError);
}

TEST_CASE("field_zeros shapes") {
  const Grid2D g(3, 3);
  CHECK(field_zeros(g, 1).values().size() == 9);
  CHECK(field_zeros(g, 2).values().size() == 18);
  for (const Field tmp = field_zeros(g, 2); double v : tmp.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(field_zeros(g, 0), ConfigError);
}

TEST_CASE("fields reject wrong lengths and non-finite values") {
  const Grid2D g(3, 3);
  CHECK_THROWS_AS(Field(g, 1, std::vector<double>(8, 0.0)), ConfigError);
  std::vector<double> v(9, 1.0);
  v[4] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Field(g, 1, v), NumericalError);
  v[4] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(Field(g, 1, v), NumericalError);
}

TEST_CASE("layout is [point][channel] with point = iy*nx + ix") {
  const Grid2D g(4, 3);
  Field f(g, 2);
  f.at(g.index(3, 2), 1) = 5.0;
  CHECK(f.values()[(2 * 4 + 3) * 2 + 1] == 5.0);
}

TEST_CASE("helpers") {
  const Grid2D g(3, 3);
  Field a(g, 2), b(g, 2);
  for (std::size_t n = 0; n < 9; ++n) {
    a.at(n, 0) = static_cast<double>(n);
    a.at(n, 1) = 1.0;
    b.at(n, 0) = 1.0;
  }
  const Field d = subtract(a, b);
  CHECK(d.at(4, 0) == 3.0);
  CHECK(d.at(4, 1) == 1.0);
  CHECK(extract_channel(a, 1).values()[5] == 1.0);
  CHECK(frobenius_norm(b) == doctest::Approx(3.0));
  CHECK_THROWS_AS(subtract(a, field_zeros(g, 1)), ConfigError);
}

TEST_CASE("positional encoding appends node coordinates") {
  const Grid2D g(5, 3);
  Field a(g, 1);
  for (double& v : a.values()) v = 7.0;
  const Field A = with_positional_encoding(a);
  REQUIRE(A.channels() == 3);
  const auto n = g.index(3, 2);
  CHECK(A.at(n, 0) == 7.0);
  CHECK(A.at(n, 1) == 0.75);
  CHECK(A.at(n, 2) == 1.0);
}
