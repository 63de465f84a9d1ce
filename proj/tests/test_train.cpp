#include "jdd/train.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace jdd;
using P = Planes<double>;

namespace {

// Scalar AMSGRAD without bias correction, written out per element.
struct ScalarAmsgrad {
  double m = 0, v = 0, vhat = 0;
  double step(double theta, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    vhat = std::max(vhat, v);
    return theta - lr * m / (std::sqrt(vhat) + eps);
  }
};

std::vector<DatasetSample> toy_samples(int n, Index size, std::uint64_t seed) {
  std::vector<DatasetSample> v;
  for (int i = 0; i < n; ++i) {
    DatasetSample s;
    s.name = "t" + std::to_string(i);
    s.truth = synthesize_image(size, size, seed + i);
    s.mask = make_bayer_mask(size, size);
    s.sigma = 2.0f + i;
    s.observed = mosaick(add_awgn(s.truth, *s.sigma, seed + 100 + i), s.mask);
    v.push_back(std::move(s));
  }
  return v;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.depth = 1;
  c.features = 4;
  c.iterations = 2;
  c.gamma_max = 2.0;
  c.epochs = 2;
  c.batch_size = 2;
  c.patch_size = 12;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("loss sums and gradients match element-wise evaluation") {
    const P a = test::random_planes(3, 10, 1, -5.0, 5.0), b = test::random_planes(3, 10, 2, -5.0, 5.0);
    double l1 = 0, l2 = 0;
    for (Index i = 0; i < a.size(); ++i) {
      l1 += std::abs(a.data()[i] - b.data()[i]);
      l2 += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    }
    P g1 = P::Zero(3, 10), g2 = P::Zero(3, 10);
    CHECK(loss_sum(LossKind::L1, a, b, &g1, 0.5) == doctest::Approx(l1));
    CHECK(loss_sum(LossKind::MSE, a, b, &g2, 0.5) == doctest::Approx(l2));
    for (Index i = 0; i < a.size(); ++i) {
      const double d = a.data()[i] - b.data()[i];
      CHECK(g1.data()[i] == 0.5 * ((d > 0) - (d < 0)));
      CHECK(g2.data()[i] == doctest::Approx(d));
    }
    P g0 = P::Zero(3, 10);
    (void)loss_sum(LossKind::L1, a, a, &g0);
    CHECK(g0.isZero());
    CHECK_THROWS_AS(loss_sum(LossKind::L1, a, P(P::Zero(3, 9))), ShapeError);
  }

  TEST_CASE("batch losses are means over every element") {
    const std::vector<PlanarImage> pred{PlanarImage(Planes<float>::Constant(3, 4, 2.0f), 2, 2),
                                        PlanarImage(Planes<float>::Constant(3, 8, 1.0f), 2, 4)};
    const std::vector<PlanarImage> truth{PlanarImage(Planes<float>::Zero(3, 4), 2, 2), PlanarImage(Planes<float>::Zero(3, 8), 2, 4)};
    CHECK(l1_loss(pred, truth) == doctest::Approx((12 * 2.0 + 24 * 1.0) / 36.0));
    CHECK(mse_loss(pred, truth) == doctest::Approx((12 * 4.0 + 24 * 1.0) / 36.0));
    CHECK_THROWS(l1_loss(pred, std::vector<PlanarImage>{truth[0]}));
  }

  TEST_CASE("AMSGRAD matches a scalar reference") {
    ParameterStore<double> store;
    store.add("a", ParamGroup::FilterScale, {3}, P(Vector<double>::LinSpaced(3, 1.0, 3.0)));
    std::vector<ScalarAmsgrad> ref(3);
    std::vector<double> theta{1.0, 2.0, 3.0};
    // First step: m = 0.1 g, vhat = 0.001 g^2, so |delta| = lr * 0.1 / sqrt(0.001) = 0.0316 for lr = 1e-2.
    store["a"].grad = P(Vector<double>::Constant(3, 4.0));
    amsgrad_step(store, 1e-2);
    CHECK(store["a"].value(0) == doctest::Approx(1.0 - 0.01 * 0.1 / std::sqrt(0.001)).epsilon(1e-6));
    for (int i = 0; i < 3; ++i) theta[i] = ref[i].step(theta[i], 4.0, 1e-2);
    CounterRng rng(3, 1);
    for (int t = 0; t < 50; ++t) {
      Vector<double> g(3);
      for (int i = 0; i < 3; ++i) g[i] = rng.normal() * (t < 10 ? 10.0 : 0.1);
      store["a"].grad = P(g);
      amsgrad_step(store, 1e-2);
      for (int i = 0; i < 3; ++i) theta[i] = ref[i].step(theta[i], g[i], 1e-2);
    }
    for (int i = 0; i < 3; ++i) {
      CHECK(store["a"].value(i) == doctest::Approx(theta[i]).epsilon(1e-12));
      CHECK(store["a"].vhat(i) == doctest::Approx(ref[i].vhat).epsilon(1e-12));
    }
  }

  TEST_CASE("zero learning rate leaves parameters bit-identical") {
    auto store = init_mmnet<float>(MMNetConfig{ResDNetConfig{1, 4}, 2, 2.0, 0.0}, 1);
    const auto before = store.flat_values();
    for (auto& e : store.entries()) e.grad = test::random_planes<float>(e.value.rows(), e.value.cols(), 4);
    amsgrad_step(store, 0.0);
    CHECK(store.flat_values() == before);
  }

  TEST_CASE("missing gradient is a logic error") {
    auto store = init_mmnet<float>(MMNetConfig{ResDNetConfig{1, 4}, 2, 2.0, 0.0}, 1);
    store["w"].grad.resize(0, 0);
    CHECK_THROWS_AS(amsgrad_step(store, 1e-2), std::logic_error);
  }

  TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    CHECK(learning_rate(c, 0) == 1e-2);
    CHECK(learning_rate(c, 99) == 1e-2);
    CHECK(learning_rate(c, 100) == doctest::Approx(1e-3));
    CHECK(learning_rate(c, 250) == doctest::Approx(1e-4));
  }

  TEST_CASE("stage schedule") {
    const auto s = stage_schedule(20, 4);
    REQUIRE(s.size() == 5);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s[i].first == static_cast<int>(4 * i + 1));
      CHECK(s[i].second == 4);
    }
    const auto r = stage_schedule(10, 3);
    REQUIRE(r.size() == 4);
    CHECK(r.back() == std::pair<int, int>{10, 1});
    CHECK(stage_schedule(2, 2).size() == 1);
    CHECK_THROWS(stage_schedule(4, 5));
    CHECK_THROWS(stage_schedule(4, 0));
  }

  TEST_CASE("intermediate stage losses are down-weighted") {
    const MMNetConfig m{ResDNetConfig{1, 4}, 6, 2.0, 0.0};
    auto store = init_mmnet<double>(m, 2);
    const auto samples = toy_samples(1, 8, 3);
    std::vector<TrainItem<double>> batch{make_train_item<double>(samples[0], *samples[0].sigma, InitMode::Bilinear)};
    const auto reports = tbptt_gradients(store, m.denoiser, batch, 2, 0.5, LossKind::L1, {});
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].weight == 0.5);
    CHECK(reports[1].weight == 0.5);
    CHECK(reports[2].weight == 1.0);
    // The last stage's gradient is the unit-weight gradient of its loss; re-running it at weight 0.5 halves it.
    auto state = initial_states(batch);
    auto s2 = store;
    s2.zero_grad();
    for (int st = 0; st < 2; ++st) (void)stage_gradients(s2, m.denoiser, batch, state, 2 * st + 1, 2, 0.5, LossKind::L1);
    auto full = state;
    s2.zero_grad();
    (void)stage_gradients(s2, m.denoiser, batch, state, 5, 2, 1.0, LossKind::L1);
    const auto g1 = s2.flat_grads();
    s2.zero_grad();
    (void)stage_gradients(s2, m.denoiser, batch, full, 5, 2, 0.5, LossKind::L1);
    CHECK((s2.flat_grads() * 2.0 - g1).cwiseAbs().maxCoeff() <= 1e-12 * g1.cwiseAbs().maxCoeff());
  }

  TEST_CASE("configuration parsing") {
    TrainConfig c;
    apply_train_setting(c, "K", "20");
    apply_train_setting(c, " stage ", " 4 ");
    apply_train_setting(c, "pattern", "xtrans");
    apply_train_setting(c, "init", "zero");
    apply_train_setting(c, "resample_noise", "true");
    CHECK(c.iterations == 20);
    CHECK(c.effective_stage() == 4);
    CHECK(c.pattern == CfaPattern::XTrans);
    CHECK(c.init == InitMode::ZeroFill);
    CHECK(c.resample_noise);
    CHECK(c.effective_patch() == 126);
    CHECK(TrainConfig{}.effective_patch() == 128);
    apply_train_setting(c, "patch_size", "64");
    CHECK(c.effective_patch() == 64);
    apply_train_setting(c, "patch_size", "auto");
    CHECK(c.effective_patch() == 126);
    CHECK_THROWS_AS(apply_train_setting(c, "nonsense", "1"), std::invalid_argument);
    CHECK_THROWS_AS(apply_train_setting(c, "K", "abc"), std::invalid_argument);
    CHECK_THROWS_AS(apply_train_setting(c, "lr", "1e-2x"), std::invalid_argument);
    c.validate();
    c.stage = 21;
    CHECK_THROWS(c.validate());
    c.stage = 0;
    CHECK(c.effective_stage() == 20);

    const auto dir = test::scratch_dir("train_cfg");
    std::ofstream(dir / "a.cfg") << "# comment\n\ndepth = 3\nfeatures=16\nlr = 0.005 # trailing\n";
    const TrainConfig f = load_train_config(dir / "a.cfg");
    CHECK(f.depth == 3);
    CHECK(f.features == 16);
    CHECK(f.lr == 0.005);
    std::ofstream(dir / "b.cfg") << describe(c);
    const TrainConfig g = load_train_config(dir / "b.cfg");
    CHECK(describe(g) == describe(c));
    std::ofstream(dir / "c.cfg") << "depth 3\n";
    CHECK_THROWS(load_train_config(dir / "c.cfg"));
    CHECK_THROWS(load_train_config(dir / "missing.cfg"));
  }

  TEST_CASE("memory budget guard") {
    TrainConfig c;
    c.memory_budget_mb = 1.0;
    CHECK_THROWS_AS(check_memory_budget(c, 128 * 128), std::runtime_error);
    c.memory_budget_mb = 1e6;
    CHECK_NOTHROW(check_memory_budget(c, 128 * 128));
    c.memory_budget_mb = 1.0;
    c.stage = 1;
    const std::size_t per_stage = activation_bytes_per_pixel(c.model().denoiser) * 64 * 64 * c.batch_size;
    CHECK(per_stage > 0);
  }

  TEST_CASE("joint training is reproducible and thread-count independent") {
    const auto train = toy_samples(4, 16, 10), val = toy_samples(2, 16, 20);
    TrainConfig c = toy_config();
    const TrainResult a = train_joint(train, val, c);
    const TrainResult b = train_joint(train, val, c);
    c.threads = 3;
    const TrainResult d = train_joint(train, val, c);
    CHECK(a.last.params.flat_values() == b.last.params.flat_values());
    CHECK(a.last.params.flat_values() == d.last.params.flat_values());
    REQUIRE(a.history.size() == 2);
    CHECK(a.history[1].val_psnr_lin == d.history[1].val_psnr_lin);
    c.seed = 6;
    const TrainResult e = train_joint(train, val, c);
    CHECK(e.last.params.flat_values() != a.last.params.flat_values());
    CHECK(a.last.meta.epoch == 1);
    CHECK(audit_filters(a.last.params, c.model().denoiser).max_abs_mean < kFilterMeanTolerance);
  }

  TEST_CASE("truncated training runs every stage and logs per-stage validation") {
    const auto train = toy_samples(2, 16, 30), val = toy_samples(1, 16, 40);
    TrainConfig c = toy_config();
    c.iterations = 4;
    c.stage = 2;
    c.epochs = 1;
    std::ostringstream log;
    TrainHooks h;
    h.log = &log;
    const TrainResult r = train_joint(train, val, c, nullptr, nullptr, h);
    REQUIRE(r.history.size() == 1);
    CHECK(r.history[0].stage_val_psnr.size() == 2);
    CHECK(log.str().find("2 stages") != std::string::npos);
  }

  TEST_CASE("pretraining, checkpoints, CSV log and resume") {
    const auto dir = test::scratch_dir("train_resume");
    const auto samples = toy_samples(3, 16, 50);
    std::vector<PlanarImage> clean;
    for (const auto& s : samples) clean.push_back(s.truth);
    TrainConfig c = toy_config();
    TrainHooks h;
    h.checkpoint_dir = dir / "pre";
    const TrainResult pre = pretrain_denoiser(clean, {clean[0]}, c, h);
    CHECK(std::filesystem::exists(dir / "pre" / "best.ckpt"));
    CHECK(pre.best.params["w"].size() == 1);

    h.checkpoint_dir = dir / "joint";
    h.csv_log = dir / "log.csv";
    c.epochs = 1;
    const TrainResult first = train_joint(samples, samples, c, &pre.best.params, nullptr, h);
    // The denoiser starts from the pretrained weights.
    const Checkpoint resume = load_checkpoint(dir / "joint" / "last.ckpt", c.model());
    c.epochs = 3;
    const TrainResult resumed = train_joint(samples, samples, c, nullptr, &resume, h);
    CHECK(resumed.history.size() == 2);
    CHECK(resumed.history.front().epoch == 1);
    CHECK(resumed.last.meta.epoch == 2);
    const TrainResult straight = train_joint(samples, samples, c, &pre.best.params, nullptr, {});
    CHECK(straight.last.params.flat_values() == resumed.last.params.flat_values());

    std::ifstream csv(dir / "log.csv");
    std::string header, line;
    std::getline(csv, header);
    CHECK(header == "epoch,lr,train_loss,val_psnr_lin,val_psnr_srgb");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 3);
    (void)first;

    MMNetConfig other = c.model();
    other.iterations = 3;
    c.iterations = 3;
    CHECK_THROWS(train_joint(samples, samples, c, nullptr, &resume, {}));
  }
}
