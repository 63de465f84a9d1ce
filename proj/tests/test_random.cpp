#include "jdd/random.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace jdd;

TEST_SUITE("random") {
  // Known-answer vectors of the reference Philox4x32-10 implementation.
  TEST_CASE("philox known answers") {
    using B = Philox4x32::Block;
    CHECK(Philox4x32(0)(B{0, 0, 0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(Philox4x32(0xffffffffffffffffULL)(B{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}) ==
          B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(Philox4x32(0x299f31d0a4093822ULL)(B{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}) ==
          B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
  }

  TEST_CASE("streams are reproducible and distinct") {
    CounterRng a(42, 1), b(42, 1), c(42, 2);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const auto x = a.next_u64();
      CHECK(x == b.next_u64());
      differs = differs || x != c.next_u64();
    }
    CHECK(differs);
  }

  TEST_CASE("uniform stays in the open unit interval") {
    CounterRng r(7);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const double u = r.uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
      sum += u;
    }
    CHECK(sum / 100000 == doctest::Approx(0.5).epsilon(0.01));
  }

  TEST_CASE("below covers the range without bias beyond noise") {
    CounterRng r(3);
    std::array<int, 6> hist{};
    for (int i = 0; i < 60000; ++i) ++hist[r.below(6)];
    for (int h : hist) CHECK(std::abs(h - 10000) < 500);
  }

  TEST_CASE("normal moments") {
    CounterRng r(11);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double g = r.normal();
      s += g;
      s2 += g * g;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
  }

  TEST_CASE("shuffle is a permutation") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    CounterRng r(5);
    r.shuffle(v);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
  }
}
