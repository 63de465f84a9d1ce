#include "jdd/eval.hpp"

#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

using namespace jdd;
using P = Planes<double>;

namespace {

// Direct quadratic-form evaluation with explicit loops.
double brute_distance(const P& x, const P& x0, const P& bits, double sigma, double alpha) {
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - x0.data()[i];
    acc += d * d * (alpha - bits.data()[i]);
  }
  return acc / (2.0 * sigma * sigma);
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("PSNR values") {
    const PlanarImage a(Planes<float>::Constant(3, 16, 100.0f), 4, 4);
    PlanarImage b = a;
    CHECK(psnr(a, b) == kInfinitePsnr);
    // MSE = 255^2 / 100 gives exactly 20 dB.
    b.data.array() += 25.5f;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(psnr(a.data, b.data, 1.0) == doctest::Approx(20.0 - 20.0 * std::log10(255.0)).epsilon(1e-6));
    CHECK_THROWS(psnr(a, PlanarImage(Planes<float>::Zero(3, 4), 2, 2)));
  }

  TEST_CASE("majorizer distance and rewrite") {
    const CfaMask m = make_xtrans_mask(6, 6);
    const P bits = m.bits_as<double>();
    CounterRng rng(4, 2);
    for (int t = 0; t < 200; ++t) {
      const P x = test::random_planes(3, 36, 10 + t, 0.0, 255.0), x0 = test::random_planes(3, 36, 500 + t, 0.0, 255.0);
      const P y = bits.cwiseProduct(test::random_planes(3, 36, 900 + t, 0.0, 255.0));
      const double sigma = rng.uniform(0.5, 20.0), alpha = rng.uniform(1.0, 2.0) + 1e-9;
      CHECK(majorizer_distance(x, x0, bits, sigma, alpha) == doctest::Approx(brute_distance(x, x0, bits, sigma, alpha)).epsilon(1e-12));
      const MajorizerCheck c = majorizer_gap(x, x0, y, m, sigma, alpha);
      CHECK(c.gap > 0.0);
      CHECK(c.relative_residual < 1e-6);
      CHECK(majorizer_gap(x0, x0, y, bits, sigma, alpha).gap == 0.0);
    }
  }

  TEST_CASE("surrogate centre reduces to inject at alpha = 1") {
    const CfaMask m = make_bayer_mask(4, 4);
    const P bits = m.bits_as<double>();
    const P x0 = test::random_planes(3, 16, 1, 0.0, 255.0);
    const P y = bits.cwiseProduct(test::random_planes(3, 16, 2, 0.0, 255.0));
    CHECK((surrogate_center(x0, y, bits, 1.0) - inject<double>(y, x0, bits)).cwiseAbs().maxCoeff() < 1e-12);
    const P z = surrogate_center(x0, y, bits, 1.5);
    CHECK((z - (x0 + (y - bits.cwiseProduct(x0)) / 1.5)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("alpha = 1 degenerates on observed pixels") {
    const CfaMask m = make_bayer_mask(2, 2);
    const P bits = m.bits_as<double>();
    const P x0 = P::Constant(3, 4, 10.0);
    P x = x0;
    x(0, 0) += 5.0;  // R is observed at (0, 0) in RGGB
    CHECK(majorizer_distance(x, x0, bits, 1.0, 1.0) == 0.0);
    CHECK(majorizer_distance(x, x0, bits, 1.0, 1.01) > 0.0);
    CHECK_THROWS_AS(majorizer_gap(x, x0, bits, bits, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(majorizer_gap(x, x0, bits, bits, 0.0, 1.5), std::invalid_argument);
  }

  TEST_CASE("bilinear evaluation and reports") {
    std::vector<DatasetSample> samples;
    for (int i = 0; i < 3; ++i) {
      DatasetSample s;
      s.name = "img" + std::to_string(i);
      s.truth = i == 0 ? PlanarImage(Planes<float>::Constant(3, 64, 80.0f), 8, 8) : synthesize_image(16, 16, i);
      s.mask = make_bayer_mask(s.truth.height, s.truth.width);
      s.observed = mosaick(s.truth, s.mask);
      samples.push_back(s);
    }
    EvalOptions opt;
    opt.sigma_source = SigmaSource::Fixed;
    const EvalReport r = evaluate_samples(samples, nullptr, opt);
    CHECK(r.method == "bilinear");
    CHECK(!r.noisy_dataset);
    REQUIRE(r.images.size() == 3);
    // A constant image is reproduced exactly and is left out of the mean.
    CHECK(r.images[0].psnr_lin == kInfinitePsnr);
    CHECK(r.infinite_lin == 1);
    CHECK(r.mean_psnr_lin == doctest::Approx((r.images[1].psnr_lin + r.images[2].psnr_lin) / 2));
    opt.threads = 3;
    const EvalReport r3 = evaluate_samples(samples, nullptr, opt);
    CHECK(r3.mean_psnr_lin == r.mean_psnr_lin);

    const auto j = nlohmann::json::parse(report_json(r));
    CHECK(j["method"] == "bilinear");
    CHECK(j["images"].size() == 3);
    CHECK(j["images"][0]["psnr_lin"] == "inf");
    CHECK(j["infinite_lin"] == 1);
    CHECK(report_csv(r).rfind("image,sigma,psnr_lin,psnr_srgb\n", 0) == 0);
    CHECK(report_table(r).find("n/a") == std::string::npos);

    samples[1].sigma = 5.0f;
    opt.sigma_source = SigmaSource::Oracle;
    opt.threads = 1;
    samples[0].sigma = samples[2].sigma = 0.0f;
    const EvalReport noisy = evaluate_samples(samples, nullptr, opt);
    CHECK(noisy.noisy_dataset);
    CHECK(report_table(noisy).find("n/a") != std::string::npos);
    CHECK(report_table(noisy, true).find("n/a") == std::string::npos);
  }

  TEST_CASE("model evaluation and runtime benchmark") {
    Checkpoint ck;
    ck.meta.model = MMNetConfig{ResDNetConfig{1, 4}, 2, 2.0, 0.0};
    ck.params = init_mmnet<float>(ck.meta.model, 1);
    DatasetSample s;
    s.name = "a";
    s.truth = synthesize_image(12, 12, 3);
    s.mask = make_bayer_mask(12, 12);
    s.sigma = 3.0f;
    s.observed = mosaick(add_awgn(s.truth, 3.0, 1), s.mask);
    EvalOptions opt;
    const EvalReport r = evaluate_samples({s}, &ck, opt);
    CHECK(r.method == "mmnet");
    CHECK(std::isfinite(r.mean_psnr_lin));
    const auto rows = benchmark_runtime(ck, {1, 2}, 0.0016, 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].iterations == 1);
    CHECK(rows[1].runs == 2);
    CHECK(rows[1].mean_seconds > 0.0);
    CHECK(rows[1].sec_per_mpixel == doctest::Approx(rows[1].mean_seconds / rows[1].megapixels));
  }
}
