#include <doctest.h>

#include <cmath>
#include <vector>

#include "liftuq/rng.hpp"

using namespace liftuq;

TEST_CASE("philox4x32-10 known answers") {
  struct Kat {
    std::uint32_t ctr[4], key[2], out[4];
  };
  const Kat kats[] = {
      {{0, 0, 0, 0}, {0, 0}, {0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}},
      {{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
       {0xffffffff, 0xffffffff},
       {0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}},
      {{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
       {0xa4093822, 0x299f31d0},
       {0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}},
  };
  for (const auto& k : kats) {
    std::uint32_t out[4];
    philox4x32(k.ctr, k.key, out);
    for (int i = 0; i < 4; ++i) CHECK(out[i] == k.out[i]);
  }
}

TEST_CASE("same seed and stream give the same sequence") {
  RngStream a(42, 3), b(42, 3);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("fork is deterministic, distinct per id, and leaves the parent alone") {
  RngStream parent(9);
  RngStream untouched(9);
  RngStream c1 = parent.fork(7), c2 = parent.fork(7), c3 = parent.fork(8);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const double x = c1.uniform();
    CHECK(x == c2.uniform());
    differs = differs || x != c3.uniform();
  }
  CHECK(differs);
  for (int i = 0; i < 100; ++i) CHECK(parent.next_u64() == untouched.next_u64());
}

TEST_CASE("forking mid-stream does not depend on draws already made") {
  RngStream a(5), b(5);
  for (int i = 0; i < 17; ++i) a.next_u64();
  RngStream ca = a.fork(2), cb = b.fork(2);
  for (int i = 0; i < 50; ++i) CHECK(ca.next_u64() == cb.next_u64());
}

TEST_CASE("uniform lies in [0, 1) and normal has unit moments") {
  RngStream r(1);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(n));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("below covers its range uniformly") {
  RngStream r(11);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) ++hist[r.below(7)];
  for (int h : hist) CHECK(std::abs(h - 10000) < 500);
}
