#pragma once

#include "jdd/checkpoint.hpp"
#include "jdd/imgio.hpp"
#include "jdd/mmnet.hpp"
#include "jdd/noise.hpp"
#include "jdd/parallel.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace jdd {

struct TrainConfig {
  // model
  int depth = 5;
  int features = 64;
  int iterations = 10;  // K
  double gamma_max = 15.0;
  double gamma_min = 0.0;
  CfaPattern pattern = CfaPattern::BayerRGGB;

  // optimization
  double lr = 1e-2;
  double lr_decay = 0.1;
  int lr_decay_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 200;
  int batch_size = 4;     // d
  int patch_size = -1;    // -1: 128 for Bayer, 126 for X-Trans (a period multiple); 0: whole images
  int stage = 0;          // k; 0 means k = K
  double intermediate_loss_weight = 0.5;

  // data
  double sigma_min = 0.0;  // pretraining noise range
  double sigma_max = 15.0;
  double val_sigma = 15.0;  // pretraining validation noise level
  bool augment = true;
  bool resample_noise = false;  // redraw AWGN at the sample's sigma every epoch
  InitMode init = InitMode::Auto;
  SigmaSource sigma_source = SigmaSource::Oracle;
  double fixed_sigma = 1.0;

  // runtime
  std::uint64_t seed = 0;
  int threads = 1;
  double memory_budget_mb = 4096.0;

  int effective_stage() const { return stage <= 0 ? iterations : stage; }
  int effective_patch() const { return patch_size >= 0 ? patch_size : (pattern == CfaPattern::XTrans ? 126 : 128); }
  MMNetConfig model() const;
  void validate() const;
};

/// Applies one `key = value` setting; std::invalid_argument for unknown keys or bad values.
void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Reads a key-value file (`key = value`, '#' comments) on top of `base`.
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
/// Fully resolved configuration in the same key-value syntax.
std::string describe(const TrainConfig& cfg);

/// lr0 * decay^floor(epoch / every).
double learning_rate(const TrainConfig& cfg, int epoch);

// ---------------------------------------------------------------- losses

enum class LossKind { L1, MSE };

/// Sum of |pred - truth| (L1) or (pred - truth)^2 (MSE); adds `scale` times
/// its derivative into `grad` when given. sign(0) is taken as 0.
template <typename Scalar>
double loss_sum(LossKind kind, const Planes<Scalar>& pred, const Planes<Scalar>& truth, Planes<Scalar>* grad = nullptr,
                double scale = 1.0) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw ShapeError("loss: prediction and truth shapes differ");
  double acc = 0.0;
  for (Index i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(truth.data()[i]);
    if (kind == LossKind::L1) {
      acc += std::abs(d);
      if (grad) grad->data()[i] += static_cast<Scalar>(scale * static_cast<double>((d > 0) - (d < 0)));
    } else {
      acc += d * d;
      if (grad) grad->data()[i] += static_cast<Scalar>(scale * 2.0 * d);
    }
  }
  return acc;
}

/// Mean over every scalar element of the batch.
double l1_loss(const std::vector<PlanarImage>& pred, const std::vector<PlanarImage>& truth);
double mse_loss(const std::vector<PlanarImage>& pred, const std::vector<PlanarImage>& truth);

// ------------------------------------------------------------- optimizer

struct AmsgradSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  vhat <- max(vhat, v);
/// theta <- theta - lr m / (sqrt(vhat) + eps). No bias correction.
template <typename Scalar>
void amsgrad_step(ParameterStore<Scalar>& store, double lr, const AmsgradSettings& s = {}) {
  for (const auto& e : store.entries())
    if (e.grad.rows() != e.value.rows() || e.grad.cols() != e.value.cols())
      throw std::logic_error("amsgrad_step: missing gradient for '" + e.name + "'");
  const auto b1 = static_cast<Scalar>(s.beta1), b2 = static_cast<Scalar>(s.beta2);
  const auto eps = static_cast<Scalar>(s.eps), rate = static_cast<Scalar>(lr);
  for (auto& e : store.entries()) {
    e.m = b1 * e.m + (Scalar(1) - b1) * e.grad;
    e.v = b2 * e.v + (Scalar(1) - b2) * e.grad.cwiseAbs2();
    e.vhat = e.vhat.cwiseMax(e.v);
    e.value.array() -= rate * e.m.array() / (e.vhat.array().sqrt() + eps);
  }
}

// ------------------------------------------------------ unrolled gradients

/// One training example in network layout.
template <typename Scalar>
struct TrainItem {
  Index height = 0, width = 0;
  Planes<Scalar> truth;
  Planes<Scalar> y;
  Planes<Scalar> bits;
  Planes<Scalar> x_init;
  Scalar sigma = 0;
};

template <typename Scalar>
TrainItem<Scalar> make_train_item(const DatasetSample& s, float sigma, InitMode init) {
  TrainItem<Scalar> it;
  it.height = s.truth.height;
  it.width = s.truth.width;
  it.truth = s.truth.data.cast<Scalar>();
  const PlanarImageT<Scalar> y = s.observed.cast<Scalar>();
  it.y = y.data;
  it.bits = s.mask.bits_as<Scalar>();
  it.x_init = initial_estimate(y, s.mask, init);
  it.sigma = static_cast<Scalar>(sigma);
  return it;
}

/// Iterates carried between stages. Never differentiated through.
template <typename Scalar>
struct CarriedState {
  Planes<Scalar> x_prev;
  Planes<Scalar> x_cur;
};

template <typename Scalar>
std::vector<CarriedState<Scalar>> initial_states(const std::vector<TrainItem<Scalar>>& batch) {
  std::vector<CarriedState<Scalar>> st;
  st.reserve(batch.size());
  for (const auto& it : batch) st.push_back({Planes<Scalar>::Zero(it.y.rows(), it.y.cols()), it.x_init});
  return st;
}

/// (first iteration, count) per stage; the last stage may be shorter.
inline std::vector<std::pair<int, int>> stage_schedule(int iterations, int stage) {
  if (iterations < 1) throw std::invalid_argument("stage_schedule: K must be >= 1");
  if (stage < 1 || stage > iterations) throw std::invalid_argument("stage size k must satisfy 1 <= k <= K");
  std::vector<std::pair<int, int>> out;
  for (int first = 1; first <= iterations; first += stage) out.emplace_back(first, std::min(stage, iterations - first + 1));
  return out;
}

/// Forward/backward of iterations [first, first + count) for the whole batch.
/// Adds weight * d(mean loss of the stage output)/d(theta) into the store's
/// gradients, advances `state` to the stage end (detached) and returns the
/// unweighted mean loss. Per-sample gradients are reduced in sample order, so
/// the result does not depend on `threads`.
template <typename Scalar>
double stage_gradients(ParameterStore<Scalar>& store, const ResDNetConfig& cfg, const std::vector<TrainItem<Scalar>>& batch,
                       std::vector<CarriedState<Scalar>>& state, int first, int count, double weight, LossKind loss, int threads = 1) {
  if (batch.empty()) throw std::invalid_argument("stage_gradients: empty batch");
  if (state.size() != batch.size()) throw std::invalid_argument("stage_gradients: state/batch size mismatch");
  const DenoiserWeights<Scalar> weights = materialize(store, cfg);
  const Vector<Scalar> w = entry_vector(store["w"]);
  const Vector<Scalar> gamma = entry_vector(store["gamma"]);
  double elements = 0.0;
  for (const auto& it : batch) elements += static_cast<double>(it.truth.size());

  struct Partial {
    DenoiserGrads<Scalar> g;
    Vector<Scalar> gw, gg;
    double loss = 0.0;
  };
  std::vector<std::optional<Partial>> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t n) {
    const auto& it = batch[n];
    StageTape<Scalar> tape = mm_stage_forward(weights, w, gamma, it.y, it.bits, it.height, it.width, it.sigma, state[n].x_prev,
                                              state[n].x_cur, first, count);
    Partial p{DenoiserGrads<Scalar>(weights), Vector<Scalar>::Zero(w.size()), Vector<Scalar>::Zero(gamma.size()), 0.0};
    Planes<Scalar> g_out = Planes<Scalar>::Zero(it.truth.rows(), it.truth.cols());
    p.loss = loss_sum(loss, tape.output(), it.truth, &g_out, weight / elements);
    mm_stage_backward(tape, weights, w, it.bits, g_out, p.g, p.gw, p.gg);
    const std::size_t last = tape.x.size();
    state[n].x_prev = std::move(tape.x[last - 2]);
    state[n].x_cur = std::move(tape.x[last - 1]);
    parts[n] = std::move(p);
  });

  DenoiserGrads<Scalar> total(weights);
  Vector<Scalar> gw = Vector<Scalar>::Zero(w.size()), gg = Vector<Scalar>::Zero(gamma.size());
  double loss_total = 0.0;
  for (auto& p : parts) {
    total += p->g;
    gw += p->gw;
    gg += p->gg;
    loss_total += p->loss;
  }
  accumulate_denoiser_grads(store, weights, total);
  store["w"].grad += Eigen::Map<const Planes<Scalar>>(gw.data(), gw.size(), 1);
  store["gamma"].grad += Eigen::Map<const Planes<Scalar>>(gg.data(), gg.size(), 1);
  return loss_total / elements;
}

/// Full BPTT: zeroes the gradients, unrolls all K iterations with a single
/// loss at the end and returns it.
template <typename Scalar>
double bptt_gradients(ParameterStore<Scalar>& store, const ResDNetConfig& cfg, const std::vector<TrainItem<Scalar>>& batch,
                      LossKind loss, int threads = 1) {
  store.zero_grad();
  auto state = initial_states(batch);
  const int k = static_cast<int>(store["w"].size());
  return stage_gradients(store, cfg, batch, state, 1, k, 1.0, loss, threads);
}

struct StageReport {
  int index = 0;
  int first = 1;
  int count = 0;
  double weight = 1.0;
  double loss = 0.0;  // unweighted
  std::size_t peak_activation_bytes = 0;
};

/// Truncated BPTT over one batch: for every stage the gradients are zeroed,
/// the stage loss (weighted by `intermediate_weight` except for the last
/// stage) is back-propagated within the stage, and `update` is called so the
/// caller can step the optimizer before the next stage starts.
template <typename Scalar>
std::vector<StageReport> tbptt_gradients(ParameterStore<Scalar>& store, const ResDNetConfig& cfg,
                                         const std::vector<TrainItem<Scalar>>& batch, int stage, double intermediate_weight,
                                         LossKind loss, const std::function<void(const StageReport&)>& update, int threads = 1) {
  const int k_total = static_cast<int>(store["w"].size());
  const auto schedule = stage_schedule(k_total, stage);
  auto state = initial_states(batch);
  std::vector<StageReport> reports;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    StageReport r;
    r.index = static_cast<int>(s);
    r.first = schedule[s].first;
    r.count = schedule[s].second;
    r.weight = s + 1 < schedule.size() ? intermediate_weight : 1.0;
    ActivationMeter::global().reset_peak();
    store.zero_grad();
    r.loss = stage_gradients(store, cfg, batch, state, r.first, r.count, r.weight, loss, threads);
    r.peak_activation_bytes = ActivationMeter::global().peak();
    if (update) update(r);
    reports.push_back(r);
  }
  return reports;
}

/// Activation bytes recorded by one denoiser pass per pixel.
inline std::size_t activation_bytes_per_pixel(const ResDNetConfig& cfg, std::size_t scalar_bytes = sizeof(float)) {
  const std::size_t per_pixel = 3 /*input*/ + 2 * static_cast<std::size_t>(cfg.blocks()) * static_cast<std::size_t>(cfg.features) +
                                static_cast<std::size_t>(cfg.features) /*tail input*/ + 3 /*residual*/ + 3 /*pre-clip*/ + 3 /*iterate*/;
  return per_pixel * scalar_bytes;
}

/// Throws std::runtime_error with guidance when unrolling `stage` iterations
/// over `batch` patches of `pixels` pixels would exceed the budget.
void check_memory_budget(const TrainConfig& cfg, Index pixels);

// ----------------------------------------------------------------- drivers

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_psnr_lin = std::numeric_limits<double>::quiet_NaN();
  double val_psnr_srgb = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> stage_val_psnr;  // validation PSNR after each TBPTT stage
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> history;
};

struct TrainHooks {
  std::filesystem::path checkpoint_dir;  // writes last.ckpt / best.ckpt when non-empty
  std::filesystem::path csv_log;         // appends one row per epoch when non-empty
  std::ostream* log = nullptr;           // progress messages
  std::function<void(const EpochLog&)> on_epoch;
};

/// Appends `row` to a CSV log, writing the header first when the file is new.
void append_epoch_csv(const std::filesystem::path& path, const EpochLog& row);

/// Trains a single denoiser on M = I (pure AWGN removal): sigma ~ U[sigma_min,
/// sigma_max] per patch, MSE loss. The result holds a K = 1 store.
TrainResult pretrain_denoiser(const std::vector<PlanarImage>& train, const std::vector<PlanarImage>& val, const TrainConfig& cfg,
                              const TrainHooks& hooks = {});

/// Joint training of the unrolled solver with L1 loss. Uses BPTT when the
/// stage size equals K and truncated BPTT otherwise. Denoiser entries are
/// copied from `pretrained` when given; `resume` continues a previous run.
TrainResult train_joint(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, const TrainConfig& cfg,
                        const ParameterStore<float>* pretrained = nullptr, const Checkpoint* resume = nullptr,
                        const TrainHooks& hooks = {});

TrainResult train_joint_bptt(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, TrainConfig cfg,
                             const ParameterStore<float>* pretrained = nullptr, const TrainHooks& hooks = {});
TrainResult train_joint_tbptt(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, const TrainConfig& cfg,
                              const ParameterStore<float>* pretrained = nullptr, const TrainHooks& hooks = {});

/// Mean validation PSNR (linRGB, sRGB) of the solver, plus the PSNR of the
/// iterate at the end of each stage of size `stage`.
struct ValidationResult {
  double psnr_lin = 0.0;
  double psnr_srgb = 0.0;
  std::vector<double> stage_psnr;
};
ValidationResult validate_joint(const ParameterStore<float>& params, const TrainConfig& cfg, const std::vector<DatasetSample>& val);

}  // namespace jdd
