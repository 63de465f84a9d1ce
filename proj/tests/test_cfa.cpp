#include "jdd/cfa.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace jdd;

namespace {

// Counts samples per channel over a mask region.
std::array<int, 3> channel_counts(const CfaMask& m, Index y0, Index x0, Index h, Index w) {
  std::array<int, 3> n{};
  for (Index y = y0; y < y0 + h; ++y)
    for (Index x = x0; x < x0 + w; ++x) ++n[static_cast<std::size_t>(m.channel(y, x))];
  return n;
}

bool channel_sum_is_one(const CfaMask& m) {
  const Planes<float> sum = m.bits().colwise().sum();
  return (sum.array() == 1.0f).all();
}

}  // namespace

TEST_SUITE("cfa") {
  TEST_CASE("bayer RGGB cell") {
    const CfaMask m = make_bayer_mask(4, 6, CfaPattern::BayerRGGB);
    CHECK(m.channel(0, 0) == 0);
    CHECK(m.channel(0, 1) == 1);
    CHECK(m.channel(1, 0) == 1);
    CHECK(m.channel(1, 1) == 2);
    CHECK(m.channel(2, 2) == 0);
    CHECK(m.channel(3, 5) == 2);
  }

  TEST_CASE("bayer channel sums are one for any size") {
    for (Index h : {2, 3, 7})
      for (Index w : {2, 5, 8})
        for (auto p : {CfaPattern::BayerRGGB, CfaPattern::BayerGRBG, CfaPattern::BayerGBRG, CfaPattern::BayerBGGR})
          CHECK(channel_sum_is_one(make_bayer_mask(h, w, p)));
  }

  TEST_CASE("RGGB shifted by one column is GRBG") {
    CHECK(make_bayer_mask(6, 6, CfaPattern::BayerRGGB, {0, 1}) == make_bayer_mask(6, 6, CfaPattern::BayerGRBG));
    CHECK(make_bayer_mask(6, 6, CfaPattern::BayerRGGB, {1, 0}) == make_bayer_mask(6, 6, CfaPattern::BayerGBRG));
    CHECK(make_bayer_mask(6, 6, CfaPattern::BayerRGGB, {1, 1}) == make_bayer_mask(6, 6, CfaPattern::BayerBGGR));
  }

  TEST_CASE("bayer rejects tiny masks") { CHECK_THROWS(make_bayer_mask(1, 4)); }

  TEST_CASE("x-trans composition") {
    const CfaMask m = make_xtrans_mask(12, 18);
    CHECK(channel_sum_is_one(m));
    for (Index ty = 0; ty < 12; ty += 6)
      for (Index tx = 0; tx < 18; tx += 6) {
        const auto n = channel_counts(m, ty, tx, 6, 6);
        CHECK(n[1] == 20);
        CHECK(n[0] == 8);
        CHECK(n[2] == 8);
      }
    // Every row and column of a tile contains all three colours.
    for (Index r = 0; r < 6; ++r) {
      const auto row = channel_counts(m, r, 0, 1, 6);
      const auto col = channel_counts(m, 0, r, 6, 1);
      for (int c = 0; c < 3; ++c) {
        CHECK(row[static_cast<std::size_t>(c)] > 0);
        CHECK(col[static_cast<std::size_t>(c)] > 0);
      }
    }
  }

  TEST_CASE("x-trans periodicity") {
    const CfaMask m = make_xtrans_mask(18, 18, {2, 3});
    for (Index y = 0; y < 12; ++y)
      for (Index x = 0; x < 12; ++x) {
        CHECK(m.channel(y, x) == m.channel(y + 6, x));
        CHECK(m.channel(y, x) == m.channel(y, x + 6));
      }
    CHECK_THROWS(make_xtrans_mask(5, 12));
  }

  TEST_CASE("mosaick is idempotent and zeroes unsampled entries") {
    const PlanarImage x = test::random_image(6, 8, 1);
    for (const CfaMask& m : {make_bayer_mask(6, 8), make_xtrans_mask(6, 8)}) {
      const PlanarImage y = mosaick(x, m);
      CHECK(mosaick(y, m) == y);
      for (Index i = 0; i < y.data.size(); ++i)
        CHECK(y.data.data()[i] == (m.bits().data()[i] != 0.0f ? x.data.data()[i] : 0.0f));
    }
    CHECK(mosaick(x, make_full_mask(6, 8)) == x);
  }

  TEST_CASE("constant 255 mosaicks to the mask") {
    PlanarImage x(4, 4);
    x.data.setConstant(255.0f);
    const CfaMask m = make_bayer_mask(4, 4);
    CHECK(mosaick(x, m).data == (m.bits() * 255.0f).eval());
  }

  TEST_CASE("inject matches the elementwise formula") {
    const CfaMask m = make_bayer_mask(5, 6, CfaPattern::BayerGBRG);
    const PlanarImage x = test::random_image(5, 6, 2);
    const PlanarImage y = mosaick(test::random_image(5, 6, 3), m);
    const PlanarImage z = inject(y, x, m);
    for (Index i = 0; i < z.data.size(); ++i)
      CHECK(z.data.data()[i] == y.data.data()[i] + (1.0f - m.bits().data()[i]) * x.data.data()[i]);
    CHECK(inject(y, PlanarImage(5, 6), m) == y);
    CHECK(inject(x, y, make_full_mask(5, 6)) == x);
  }

  TEST_CASE("reflect index mirrors without repeating the edge") {
    CHECK(reflect_index(-1, 5) == 1);
    CHECK(reflect_index(-2, 5) == 2);
    CHECK(reflect_index(5, 5) == 3);
    CHECK(reflect_index(6, 5) == 2);
    CHECK(reflect_index(0, 1) == 0);
  }

  TEST_CASE("bilinear reproduces constants and keeps observations") {
    PlanarImage flat(8, 10);
    flat.data.setConstant(77.0f);
    for (const CfaMask& m : {make_bayer_mask(8, 10, CfaPattern::BayerBGGR), make_xtrans_mask(12, 12)}) {
      PlanarImage c(m.height(), m.width());
      c.data.setConstant(77.0f);
      CHECK(bilinear_init(mosaick(c, m), m).data == c.data);
    }
    const CfaMask m = make_bayer_mask(8, 10);
    const PlanarImage y = mosaick(test::random_image(8, 10, 4), m);
    const PlanarImage b = bilinear_init(y, m);
    for (Index i = 0; i < y.data.size(); ++i)
      if (m.bits().data()[i] != 0.0f) CHECK(b.data.data()[i] == y.data.data()[i]);
  }

  TEST_CASE("bilinear is exact on interior linear ramps") {
    const Index h = 10, w = 12;
    PlanarImage ramp(h, w);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) ramp.data(c, y * w + x) = static_cast<float>(3 * x + 2 * y + 10 * c);
    const CfaMask m = make_bayer_mask(h, w);
    const PlanarImage b = bilinear_init(mosaick(ramp, m), m);
    for (Index c = 0; c < 3; ++c)
      for (Index y = 1; y < h - 1; ++y)
        for (Index x = 1; x < w - 1; ++x) CHECK(b.data(c, y * w + x) == doctest::Approx(ramp.data(c, y * w + x)).epsilon(1e-6));
  }

  TEST_CASE("bilinear strict mode rejects x-trans") {
    const CfaMask m = make_xtrans_mask(6, 6);
    CHECK_THROWS_AS(bilinear_init(PlanarImage(6, 6), m, true), UnsupportedPattern);
    CHECK_NOTHROW(bilinear_init(PlanarImage(6, 6), make_bayer_mask(6, 6), true));
  }

  TEST_CASE("crop and flips keep the layout consistent") {
    const CfaMask m = make_bayer_mask(8, 8, CfaPattern::BayerRGGB);
    const CfaMask c = m.crop(1, 1, 4, 4);
    CHECK(c == make_bayer_mask(4, 4, CfaPattern::BayerBGGR));
    const CfaMask hf = m.hflip();
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) CHECK(hf.channel(y, x) == m.channel(y, 7 - x));
    CHECK(hf == make_bayer_mask(8, 8, CfaPattern::BayerGRBG));
    const CfaMask xt = make_xtrans_mask(12, 12);
    const CfaMask xv = xt.vflip();
    for (Index y = 0; y < 12; ++y)
      for (Index x = 0; x < 12; ++x) CHECK(xv.channel(y, x) == xt.channel(11 - y, x));
    CHECK_THROWS(m.crop(6, 6, 4, 4));
  }

  TEST_CASE("pattern names round-trip") {
    for (auto p : {CfaPattern::BayerRGGB, CfaPattern::BayerGRBG, CfaPattern::BayerGBRG, CfaPattern::BayerBGGR, CfaPattern::XTrans,
                   CfaPattern::Full})
      CHECK(parse_pattern(to_string(p)) == p);
    CHECK(parse_pattern("bayer") == CfaPattern::BayerRGGB);
    CHECK_FALSE(parse_pattern("quad").has_value());
  }
}
