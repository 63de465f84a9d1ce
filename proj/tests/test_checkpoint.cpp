#include "jdd/checkpoint.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>

using namespace jdd;

namespace {

Checkpoint toy_checkpoint(int k = 3) {
  Checkpoint c;
  c.meta.model.denoiser.depth = 1;
  c.meta.model.denoiser.features = 4;
  c.meta.model.iterations = k;
  c.meta.model.gamma_max = 2.0;
  c.meta.model.gamma_min = 0.0;
  c.meta.pattern = CfaPattern::XTrans;
  c.meta.epoch = 7;
  c.meta.best_val_psnr = 31.25;
  c.params = init_mmnet<float>(c.meta.model, 3);
  for (auto& e : c.params.entries()) {
    e.m = test::random_planes<float>(e.value.rows(), e.value.cols(), 10);
    e.v = test::random_planes<float>(e.value.rows(), e.value.cols(), 11, 0.0, 1.0);
    e.vhat = e.v * 2.0f;
  }
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip preserves values, optimizer state and metadata") {
    const auto dir = test::scratch_dir("ckpt_roundtrip");
    const Checkpoint c = toy_checkpoint();
    save_checkpoint(dir / "a.ckpt", c);
    const Checkpoint r = load_checkpoint(dir / "a.ckpt", c.meta.model);
    CHECK(r.meta.model == c.meta.model);
    CHECK(r.meta.pattern == CfaPattern::XTrans);
    CHECK(r.meta.epoch == 7);
    CHECK(r.meta.best_val_psnr == 31.25);
    REQUIRE(r.params.entries().size() == c.params.entries().size());
    for (std::size_t i = 0; i < c.params.entries().size(); ++i) {
      const auto& a = c.params.entries()[i];
      const auto& b = r.params.entries()[i];
      CAPTURE(a.name);
      CHECK(a.name == b.name);
      CHECK(a.group == b.group);
      CHECK(a.shape == b.shape);
      CHECK(a.value == b.value);
      CHECK(a.m == b.m);
      CHECK(a.v == b.v);
      CHECK(a.vhat == b.vhat);
    }
  }

  TEST_CASE("optimizer state can be omitted") {
    const auto dir = test::scratch_dir("ckpt_noopt");
    const Checkpoint c = toy_checkpoint();
    save_checkpoint(dir / "a.ckpt", c, false);
    save_checkpoint(dir / "b.ckpt", c, true);
    CHECK(std::filesystem::file_size(dir / "a.ckpt") < std::filesystem::file_size(dir / "b.ckpt"));
    const Checkpoint r = load_checkpoint(dir / "a.ckpt");
    CHECK(r.params.flat_values() == c.params.flat_values());
    for (const auto& e : r.params.entries()) CHECK(e.vhat.isZero());
  }

  TEST_CASE("untrained metadata survives") {
    const auto dir = test::scratch_dir("ckpt_nan");
    Checkpoint c = toy_checkpoint();
    c.meta.epoch = -1;
    c.meta.best_val_psnr = std::numeric_limits<double>::quiet_NaN();
    save_checkpoint(dir / "a.ckpt", c);
    const Checkpoint r = load_checkpoint(dir / "a.ckpt");
    CHECK(r.meta.epoch == -1);
    CHECK(std::isnan(r.meta.best_val_psnr));
  }

  TEST_CASE("configuration mismatch is rejected") {
    const auto dir = test::scratch_dir("ckpt_mismatch");
    const Checkpoint c = toy_checkpoint(3);
    save_checkpoint(dir / "a.ckpt", c);
    MMNetConfig other = c.meta.model;
    other.iterations = 4;
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other), CheckpointError);
    other = c.meta.model;
    other.denoiser.features = 8;
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other), CheckpointError);
  }

  TEST_CASE("corrupt or missing files are rejected") {
    const auto dir = test::scratch_dir("ckpt_corrupt");
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
    save_checkpoint(dir / "a.ckpt", toy_checkpoint());
    const std::string good = slurp(dir / "a.ckpt");

    spit(dir / "trunc.ckpt", good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), CheckpointError);

    spit(dir / "long.ckpt", good + "xyz");
    CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), CheckpointError);

    std::string magic = good;
    magic[0] = 'X';
    spit(dir / "magic.ckpt", magic);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);

    std::string version = good;
    version.replace(version.find("JDDCKPT 1"), 9, "JDDCKPT 9");
    spit(dir / "version.ckpt", version);
    CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), CheckpointError);

    spit(dir / "empty.ckpt", "");
    CHECK_THROWS_AS(load_checkpoint(dir / "empty.ckpt"), CheckpointError);
  }

  TEST_CASE("filter audit on load") {
    const auto dir = test::scratch_dir("ckpt_audit");
    Checkpoint c = toy_checkpoint();
    const FilterAudit ok = audit_filters(c.params, c.meta.model.denoiser);
    CHECK(ok.filters == 4 * 4);
    CHECK(ok.max_abs_mean < kFilterMeanTolerance);
    CHECK(ok.max_norm_deviation < kFilterNormTolerance);

    // A constant raw filter has no zero-mean direction to normalize.
    c.params["block0.u"].value.row(1).setConstant(0.5f);
    CHECK_THROWS(audit_filters(c.params, c.meta.model.denoiser));
    save_checkpoint(dir / "bad.ckpt", c);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
  }
}
