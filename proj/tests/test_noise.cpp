#include "jdd/noise.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace jdd;

TEST_SUITE("noise") {
  TEST_CASE("AWGN statistics and determinism") {
    const PlanarImage x(Planes<float>::Constant(3, 1000 * 334, 100.0f), 1000, 334);
    const PlanarImage n = add_awgn(x, 10.0, 7);
    const Eigen::ArrayXd d = (n.data - x.data).cast<double>().reshaped().array();
    const double mean = d.mean();
    const double sd = std::sqrt((d - mean).square().sum() / static_cast<double>(d.size() - 1));
    CHECK(d.size() >= 1000000);
    CHECK(sd >= 9.97);
    CHECK(sd <= 10.03);
    CHECK(std::abs(mean) < 0.03);
    CHECK(add_awgn(x, 10.0, 7).data == n.data);
    CHECK(add_awgn(x, 10.0, 8).data != n.data);
    CHECK(add_awgn(x, 0.0, 7).data == x.data);
    CHECK_THROWS(add_awgn(x, -1.0, 0));
  }

  TEST_CASE("AWGN is not clipped") {
    const PlanarImage x(Planes<float>::Constant(3, 100, 250.0f), 10, 10);
    CHECK(add_awgn(x, 20.0, 1).data.maxCoeff() > 255.0f);
  }

  TEST_CASE("affine noise variance") {
    const PlanarImage x(Planes<float>::Constant(3, 200000, 100.0f), 1, 200000);
    const PlanarImage n = add_affine_noise(x, 0.5, 4.0, 3);
    const Eigen::ArrayXd d = (n.data - x.data).cast<double>().reshaped().array();
    const double var = (d - d.mean()).square().sum() / static_cast<double>(d.size() - 1);
    CHECK(var == doctest::Approx(54.0).epsilon(0.03));
    const PlanarImage zero(Planes<float>::Zero(3, 16), 4, 4);
    CHECK(add_affine_noise(zero, 0.7, 0.0, 1).data.isZero());
    const PlanarImage r = test::random_image(8, 8, 2);
    CHECK(add_affine_noise(r, 0.0, 25.0, 9).data == add_awgn(r, 5.0, 9).data);
    CHECK(add_noise(r, Awgn{5.0}, 9).data == add_awgn(r, 5.0, 9).data);
    CHECK(add_noise(r, AffineNoise{0.0, 25.0}, 9).data == add_awgn(r, 5.0, 9).data);
    CHECK_THROWS(add_affine_noise(r, -0.1, 1.0, 0));
    CHECK_THROWS(add_affine_noise(r, 0.1, -1.0, 0));
  }

  TEST_CASE("wavelet MAD estimate") {
    for (double sigma : {5.0, 10.0, 15.0}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const PlanarImage flat(Planes<float>::Constant(3, 128 * 128, 120.0f), 128, 128);
        const Plane p = add_awgn(flat, sigma, seed).data.row(0).reshaped<Eigen::RowMajor>(128, 128);
        const double est = estimate_sigma(p);
        CAPTURE(sigma);
        CHECK(est >= 0.85 * sigma);
        CHECK(est <= 1.15 * sigma);
      }
    }
    CHECK(estimate_sigma(Plane(Plane::Constant(9, 7, 42.0f))) == 0.0);
    const Plane p = add_awgn(PlanarImage(Planes<float>::Constant(3, 64 * 64, 0.0f), 64, 64), 7.0, 1).data.row(0).reshaped<Eigen::RowMajor>(64, 64);
    const double e = estimate_sigma(p);
    CHECK(estimate_sigma(Plane(p.array() + 30.0f)) == doctest::Approx(e).epsilon(1e-5));
    CHECK(estimate_sigma(Plane(p * 3.0f)) == doctest::Approx(3.0 * e).epsilon(1e-5));
    CHECK_THROWS(estimate_sigma(Plane(Plane::Zero(1, 5))));
  }

  TEST_CASE("estimate on natural-like mosaics") {
    int within = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      // Grey content: on a raw plane the diagonal band also carries chroma (R + B - 2G).
      PlanarImage truth = synthesize_image(128, 128, 100 + seed);
      const Eigen::RowVectorXf grey = truth.data.colwise().mean();
      truth.data = grey.replicate(3, 1);
      const CfaMask m = make_bayer_mask(128, 128);
      const PlanarImage y = mosaick(add_awgn(truth, 5.0, seed), m);
      const double e = estimate_sigma(y);
      within += std::abs(e - 5.0) <= 1.0;  // +-20%
    }
    CHECK(within >= 8);
  }

  TEST_CASE("chroma on the raw plane biases the estimate upward") {
    const PlanarImage truth = synthesize_image(128, 128, 100);
    const CfaMask m = make_bayer_mask(128, 128);
    CHECK(estimate_sigma(mosaick(truth, m)) > 5.0);
  }

  TEST_CASE("sigma sources") {
    DatasetSample s;
    s.truth = test::random_image(8, 8, 1);
    s.mask = make_bayer_mask(8, 8);
    s.observed = mosaick(add_awgn(s.truth, 6.0, 2), s.mask);
    CHECK_THROWS_AS(resolve_sigma(s, SigmaSource::Oracle), std::invalid_argument);
    s.sigma = 6.0f;
    CHECK(resolve_sigma(s, SigmaSource::Oracle) == 6.0f);
    CHECK(resolve_sigma(s, SigmaSource::Fixed, 2.5) == 2.5f);
    CHECK(resolve_sigma(s, SigmaSource::Estimate) == static_cast<float>(estimate_sigma(s.observed)));
    for (SigmaSource src : {SigmaSource::Oracle, SigmaSource::Estimate, SigmaSource::Fixed})
      CHECK(parse_sigma_source(to_string(src)) == src);
    CHECK(!parse_sigma_source("bogus"));
  }
}
