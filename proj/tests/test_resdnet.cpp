#include "jdd/gradcheck.hpp"
#include "jdd/mmnet.hpp"
#include "jdd/resdnet.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace jdd;
using P = Planes<double>;
using V = Vector<double>;

namespace {

ResDNetConfig toy(int depth = 1, int features = 8) {
  ResDNetConfig c;
  c.depth = depth;
  c.features = features;
  return c;
}

struct Net {
  ResDNetConfig cfg;
  ParameterStore<double> store;
};

Net make_net(const ResDNetConfig& cfg, std::uint64_t seed) {
  Net n{cfg, {}};
  init_denoiser(n.store, cfg, seed);
  // Spread the slopes so the PReLU gradients are not all identical.
  for (int b = 0; b < cfg.blocks(); ++b) n.store[block_name(b) + ".kappa"].value = test::random_planes(cfg.features, 1, seed + b, 0.1, 0.4);
  return n;
}

}  // namespace

TEST_SUITE("resdnet") {
  TEST_CASE("output shape and range") {
    const Net n = make_net(toy(2, 8), 1);
    const auto w = materialize(n.store, n.cfg);
    const P x = test::random_planes(3, 9 * 11, 2, -50.0, 300.0);
    const P out = resdnet_forward<double>(x, 9, 11, 10.0, 0.0, w);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 99);
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.maxCoeff() <= 255.0);
  }

  TEST_CASE("sigma zero passes the clipped input through") {
    const Net n = make_net(toy(1, 8), 3);
    const auto w = materialize(n.store, n.cfg);
    const P x = test::random_planes(3, 64, 4, -20.0, 280.0);
    CHECK(resdnet_forward<double>(x, 8, 8, 0.0, 1.5, w) == ops::clip_0_255(x));
  }

  TEST_CASE("residual is bounded by the projection radius") {
    const Net n = make_net(toy(1, 8), 5);
    const auto w = materialize(n.store, n.cfg);
    for (int t = 0; t < 20; ++t) {
      const P x = test::random_planes(3, 100, 10 + t, 30.0, 220.0);
      const double sigma = 0.5 + t, gamma = 0.1 * t - 1.0;
      const P out = resdnet_forward<double>(x, 10, 10, sigma, gamma, w);
      const double eps = ops::projection_radius(sigma, gamma, Index{300});
      ResDNetTape<double> tape;
      (void)resdnet_forward<double>(x, 10, 10, sigma, gamma, w, &tape);
      if ((tape.pre_clip.array() >= 0.0).all() && (tape.pre_clip.array() <= 255.0).all())
        CHECK((x - out).norm() <= eps * (1 + 1e-12));
      // Clipping toward an in-range input can only shrink the distance.
      CHECK((ops::clip_0_255(x) - out).norm() <= eps * (1 + 1e-12));
    }
  }

  TEST_CASE("deterministic") {
    const Net n = make_net(toy(1, 8), 6);
    const auto w = materialize(n.store, n.cfg);
    const P x = test::random_planes(3, 64, 7, 0.0, 255.0);
    CHECK(resdnet_forward<double>(x, 8, 8, 5.0, 0.3, w) == resdnet_forward<double>(x, 8, 8, 5.0, 0.3, w));
  }

  TEST_CASE("mismatched parameters are rejected") {
    Net n = make_net(toy(1, 8), 8);
    ResDNetConfig other = toy(1, 16);
    CHECK_THROWS_AS(materialize(n.store, other), ShapeError);
    ResDNetConfig deeper = toy(2, 8);
    CHECK_THROWS(materialize(n.store, deeper));
    const auto w = materialize(n.store, n.cfg);
    CHECK_THROWS_AS(resdnet_forward<double>(P(2, 64), 8, 8, 1.0, 0.0, w), ShapeError);
    CHECK_THROWS(resdnet_forward<double>(P::Zero(3, 64), 8, 8, -1.0, 0.0, w));
  }

  TEST_CASE("parameter count closed form") {
    ResDNetConfig c = toy(1, 4);
    // head 4*3*25, 2 blocks of 4*4*9, tail 4*3*25; scales 4 per bank; slopes 4 per block.
    const Index expect_u = 300 + 2 * 144 + 300, expect_s = 4 * 4, expect_k = 8;
    for (int k : {1, 3}) {
      const ParameterCount pc = count_parameters(c, k);
      CHECK(pc.filter_raw == expect_u);
      CHECK(pc.filter_scale == expect_s);
      CHECK(pc.prelu_slope == expect_k);
      CHECK(pc.total() == expect_u + expect_s + expect_k + 2 * k);
      const auto store = init_mmnet<double>(MMNetConfig{c, k, 2.0, 0.0}, 1);
      CHECK(store.scalar_count() == pc.total());
    }
    ResDNetConfig d2 = c;
    d2.depth = 2;
    CHECK(count_parameters(d2, 1).total() - count_parameters(c, 1).total() == 2 * (144 + 4 + 4));
  }

  TEST_CASE("reference configuration count") {
    const ParameterCount pc = count_parameters(ResDNetConfig{}, 10);
    CHECK(pc.filter_raw == 378240);
    CHECK(pc.filter_scale == 768);
    CHECK(pc.prelu_slope == 640);
    CHECK(pc.total() == 379668);
    CHECK(std::abs(static_cast<double>(pc.total()) - 380356.0) / 380356.0 < 0.01);
  }

  TEST_CASE("gradient check: full network, D=1") {
    const ResDNetConfig cfg = toy(1, 8);
    const Index h = 8, w = 8;
    double worst_in = 0.0, worst_par = 0.0, worst_gamma = 0.0;
    Index probes = 0;
    for (int t = 0; t < 4; ++t) {
      Net n = make_net(cfg, 50 + t);
      const P x = test::random_planes(3, h * w, 60 + t, 40.0, 215.0);
      // Zero-mean filters make the plain output sum nearly parameter-free, so weight it.
      const P wgt = test::random_planes(3, h * w, 70 + t);
      const double sigma = 5.0 + 5 * t;
      const double gamma = t % 2 ? 1.0 : -1.0;  // exercises both projection branches
      auto loss_of = [&](const ParameterStore<double>& s, const P& in, double g) {
        return resdnet_forward<double>(in, h, w, sigma, g, materialize(s, cfg)).cwiseProduct(wgt).sum();
      };
      const auto weights = materialize(n.store, cfg);
      ResDNetTape<double> tape;
      (void)resdnet_forward<double>(x, h, w, sigma, gamma, weights, &tape);
      DenoiserGrads<double> g(weights);
      P gin = P::Zero(3, h * w);
      const double ggamma = resdnet_backward(tape, weights, wgt, g, &gin);
      n.store.zero_grad();
      accumulate_denoiser_grads(n.store, weights, g);

      const auto r_in = grad_check([&](const V& v) { return loss_of(n.store, Eigen::Map<const P>(v.data(), 3, h * w), gamma); },
                                   Eigen::Map<const V>(x.data(), x.size()), Eigen::Map<const V>(gin.data(), gin.size()), 1e-6, 60, t);
      const V theta = n.store.flat_values();
      ParameterStore<double> probe_store = n.store;
      const auto r_par = grad_check(
          [&](const V& v) {
            probe_store.set_flat_values(v);
            return loss_of(probe_store, x, gamma);
          },
          theta, n.store.flat_grads(), 1e-6, 60, 100 + t);
      const auto r_g = grad_check([&](const V& v) { return loss_of(n.store, x, v[0]); }, V::Constant(1, gamma), V::Constant(1, ggamma));
      worst_in = std::max(worst_in, r_in.max_relative_error);
      worst_par = std::max(worst_par, r_par.max_relative_error);
      worst_gamma = std::max(worst_gamma, r_g.max_relative_error);
      probes += r_in.probes + r_par.probes + r_g.probes;
    }
    CHECK(probes >= 100);
    CHECK(worst_in < 1e-3);
    CHECK(worst_par < 1e-3);
    CHECK(worst_gamma < 1e-3);
  }

  TEST_CASE("tape registers its activations with the meter") {
    const Net n = make_net(toy(1, 8), 9);
    const auto w = materialize(n.store, n.cfg);
    const std::size_t before = ActivationMeter::global().current();
    {
      ResDNetTape<double> tape;
      (void)resdnet_forward<double>(test::random_planes(3, 64, 1, 0.0, 255.0), 8, 8, 5.0, 0.0, w, &tape);
      CHECK(ActivationMeter::global().current() == before + tape.bytes());
    }
    CHECK(ActivationMeter::global().current() == before);
  }
}
