#pragma once

// Unrolled majorization-minimization solver. Each iteration extrapolates the
// last two iterates, re-imposes the observations on the sampled entries and
// hands the result to the shared denoiser:
//
//   u       = x_i + w_i (x_i - x_{i-1})
//   x_{i+1} = ResDNet((I - M) u + y, sigma, gamma_i)
//
// with x_0 = 0 and x_1 an initial guess built from y.

#include "jdd/cfa.hpp"
#include "jdd/resdnet.hpp"

#include <atomic>
#include <functional>
#include <iostream>
#include <vector>

namespace jdd {

/// w_i = (i - 1) / (i + 2), i = 1..K.
template <typename Scalar = double>
Vector<Scalar> init_extrapolation(int iterations) {
  if (iterations < 1) throw std::invalid_argument("init_extrapolation: need at least one iteration");
  Vector<Scalar> w(iterations);
  for (int i = 1; i <= iterations; ++i) w[i - 1] = static_cast<Scalar>(i - 1) / static_cast<Scalar>(i + 2);
  return w;
}

/// Multipliers e^gamma evenly spaced in the log domain from e^gamma_max down
/// to e^gamma_min, i.e. gamma linear and endpoint-inclusive.
template <typename Scalar = double>
Vector<Scalar> init_gammas(int iterations, double gamma_max, double gamma_min) {
  if (iterations < 1) throw std::invalid_argument("init_gammas: need at least one iteration");
  if (!(gamma_max >= gamma_min) || gamma_min < 0.0) throw std::invalid_argument("init_gammas: need gamma_max >= gamma_min >= 0");
  Vector<Scalar> g(iterations);
  if (iterations == 1) {
    g[0] = static_cast<Scalar>(gamma_max);
    return g;
  }
  for (int i = 0; i < iterations; ++i)
    g[i] = static_cast<Scalar>(gamma_max + (gamma_min - gamma_max) * static_cast<double>(i) / (iterations - 1));
  return g;
}

struct MMNetConfig {
  ResDNetConfig denoiser;
  int iterations = 10;
  double gamma_max = 15.0;
  double gamma_min = 0.0;
  bool operator==(const MMNetConfig&) const = default;
};

/// Full trainable set: one denoiser plus the length-K vectors "gamma" and "w".
template <typename Scalar>
ParameterStore<Scalar> init_mmnet(const MMNetConfig& cfg, std::uint64_t seed) {
  ParameterStore<Scalar> store;
  init_denoiser(store, cfg.denoiser, seed);
  const Index k = cfg.iterations;
  store.add("gamma", ParamGroup::ProjectionGamma, {k}, Planes<Scalar>(init_gammas<Scalar>(cfg.iterations, cfg.gamma_max, cfg.gamma_min)));
  store.add("w", ParamGroup::Extrapolation, {k}, Planes<Scalar>(init_extrapolation<Scalar>(cfg.iterations)));
  return store;
}

/// Auto: zero-fill for X-Trans, bilinear for every other layout.
enum class InitMode { Auto, Bilinear, ZeroFill, Custom };

/// x_1 built from the observations.
template <typename Scalar>
Planes<Scalar> initial_estimate(const PlanarImageT<Scalar>& y, const CfaMask& mask, InitMode mode,
                                const Planes<Scalar>* custom = nullptr) {
  switch (mode) {
    case InitMode::Auto: return mask.pattern() == CfaPattern::XTrans ? y.data : bilinear_init(y, mask).data;
    case InitMode::Bilinear: return bilinear_init(y, mask).data;
    case InitMode::ZeroFill: return y.data;
    case InitMode::Custom:
      if (!custom || custom->rows() != y.data.rows() || custom->cols() != y.data.cols())
        throw ShapeError("initial_estimate: custom initialization missing or mis-shaped");
      return *custom;
  }
  return y.data;
}

/// Denoiser signature used by the solver loop: (z, sigma, gamma) -> x.
template <typename Scalar>
using DenoiserFn = std::function<Planes<Scalar>(const Planes<Scalar>&, Scalar, Scalar)>;

/// Optional per-iteration observer: (i, denoiser input, x_{i+1}).
template <typename Scalar>
using IterateObserver = std::function<void(int, const Planes<Scalar>&, const Planes<Scalar>&)>;

/// Runs K iterations with an arbitrary denoiser.
template <typename Scalar>
Planes<Scalar> mm_iterate(const DenoiserFn<Scalar>& denoise, const Planes<Scalar>& y, const Planes<Scalar>& bits,
                          Planes<Scalar> x_cur, Scalar sigma, const Vector<Scalar>& w, const Vector<Scalar>& gamma, int iterations,
                          const IterateObserver<Scalar>& observe = {}) {
  if (w.size() < iterations || gamma.size() < iterations) throw ShapeError("mm_iterate: w and gamma need K entries");
  const Planes<Scalar> unobserved = Planes<Scalar>::Ones(bits.rows(), bits.cols()) - bits;
  Planes<Scalar> x_prev = Planes<Scalar>::Zero(y.rows(), y.cols());
  for (int i = 1; i <= iterations; ++i) {
    const Planes<Scalar> u = x_cur + w[i - 1] * (x_cur - x_prev);
    const Planes<Scalar> z = unobserved.cwiseProduct(u) + y;
    Planes<Scalar> next = denoise(z, sigma, gamma[i - 1]);
    if (observe) observe(i, z, next);
    x_prev = std::move(x_cur);
    x_cur = std::move(next);
  }
  return x_cur;
}

/// Extends trained w/gamma vectors to `iterations` entries by repeating the
/// last value; truncates when fewer are requested.
template <typename Scalar>
Vector<Scalar> resize_schedule(const Vector<Scalar>& v, int iterations) {
  Vector<Scalar> out(iterations);
  for (int i = 0; i < iterations; ++i) out[i] = v[std::min<Index>(i, v.size() - 1)];
  return out;
}

/// Emits the K-mismatch warning once per (requested, trained) pair in a row.
inline void warn_iteration_mismatch(int requested, int trained) {
  static std::atomic<long long> last{-1};
  const long long key = static_cast<long long>(requested) * 1000003LL + trained;
  if (last.exchange(key) != key)
    std::cerr << "warning: running " << requested << " iterations with a model trained for " << trained << '\n';
}

/// Reconstruction of a mosaicked observation with the trained solver.
/// `iterations` defaults to the trained K; other values are allowed but warned about.
template <typename Scalar>
PlanarImageT<Scalar> mmnet_forward(const PlanarImageT<Scalar>& y, const CfaMask& mask, Scalar sigma, const ParameterStore<Scalar>& params,
                                   const ResDNetConfig& cfg, InitMode init = InitMode::Auto, int iterations = -1,
                                   const Planes<Scalar>* custom_init = nullptr, const IterateObserver<Scalar>& observe = {}) {
  require_same_shape(y.height, y.width, mask.height(), mask.width(), "mmnet_forward");
  if (!(sigma >= Scalar(0))) throw std::invalid_argument("mmnet_forward: sigma must be non-negative");
  const Vector<Scalar> w_trained = entry_vector(params["w"]);
  const Vector<Scalar> g_trained = entry_vector(params["gamma"]);
  const int trained = static_cast<int>(w_trained.size());
  if (iterations <= 0) iterations = trained;
  if (iterations != trained) warn_iteration_mismatch(iterations, trained);
  const DenoiserWeights<Scalar> weights = materialize(params, cfg);
  const Index h = y.height, wd = y.width;
  DenoiserFn<Scalar> denoise = [&](const Planes<Scalar>& z, Scalar s, Scalar g) {
    return resdnet_forward<Scalar>(z, h, wd, s, g, weights);
  };
  Planes<Scalar> out = mm_iterate<Scalar>(denoise, y.data, mask.bits_as<Scalar>(), initial_estimate(y, mask, init, custom_init), sigma,
                                          resize_schedule(w_trained, iterations), resize_schedule(g_trained, iterations), iterations,
                                          observe);
  return PlanarImageT<Scalar>(std::move(out), h, wd, y.colorspace);
}

/// Recorded run of iterations [first, first + count) for one sample.
/// x[0] = x_{first-1}, x[1] = x_first, ..., x[count+1] = x_{first+count}.
template <typename Scalar>
struct StageTape {
  Index height = 0, width = 0;
  int first = 1;
  Scalar sigma = 0;
  std::vector<Planes<Scalar>> x;
  std::vector<ResDNetTape<Scalar>> steps;

  const Planes<Scalar>& output() const { return x.back(); }
};

template <typename Scalar>
StageTape<Scalar> mm_stage_forward(const DenoiserWeights<Scalar>& weights, const Vector<Scalar>& w, const Vector<Scalar>& gamma,
                                   const Planes<Scalar>& y, const Planes<Scalar>& bits, Index h, Index wd, Scalar sigma,
                                   Planes<Scalar> x_prev, Planes<Scalar> x_cur, int first, int count) {
  if (first < 1 || first + count - 1 > w.size() || first + count - 1 > gamma.size())
    throw ShapeError("mm_stage_forward: iteration range exceeds the schedule");
  StageTape<Scalar> tape;
  tape.height = h;
  tape.width = wd;
  tape.first = first;
  tape.sigma = sigma;
  tape.x.reserve(static_cast<std::size_t>(count + 2));
  tape.x.push_back(std::move(x_prev));
  tape.x.push_back(std::move(x_cur));
  tape.steps.resize(static_cast<std::size_t>(count));
  const Planes<Scalar> unobserved = Planes<Scalar>::Ones(bits.rows(), bits.cols()) - bits;
  for (int t = 1; t <= count; ++t) {
    const int i = first + t - 1;
    const Planes<Scalar>& xc = tape.x[static_cast<std::size_t>(t)];
    const Planes<Scalar>& xp = tape.x[static_cast<std::size_t>(t - 1)];
    const Planes<Scalar> z = unobserved.cwiseProduct(xc + w[i - 1] * (xc - xp)) + y;
    tape.x.push_back(resdnet_forward<Scalar>(z, h, wd, sigma, gamma[i - 1], weights, &tape.steps[static_cast<std::size_t>(t - 1)]));
  }
  return tape;
}

/// Back-propagates d(loss)/d(stage output). Denoiser gradients go to
/// `grads`; w and gamma gradients to `grad_w` / `grad_gamma` (length K).
/// Gradients w.r.t. the carried-in iterates are dropped (they are constants
/// for the first stage and detached for later ones).
template <typename Scalar>
void mm_stage_backward(const StageTape<Scalar>& tape, const DenoiserWeights<Scalar>& weights, const Vector<Scalar>& w,
                       const Planes<Scalar>& bits, const Planes<Scalar>& grad_output, DenoiserGrads<Scalar>& grads,
                       Vector<Scalar>& grad_w, Vector<Scalar>& grad_gamma) {
  const int count = static_cast<int>(tape.steps.size());
  const Index rows = tape.x.front().rows(), cols = tape.x.front().cols();
  const Planes<Scalar> unobserved = Planes<Scalar>::Ones(bits.rows(), bits.cols()) - bits;
  std::vector<Planes<Scalar>> gx(static_cast<std::size_t>(count + 2));
  for (auto& g : gx) g = Planes<Scalar>::Zero(rows, cols);
  gx.back() = grad_output;
  Planes<Scalar> gz(rows, cols);
  for (int t = count; t >= 1; --t) {
    const int i = tape.first + t - 1;
    gz.setZero();
    grad_gamma[i - 1] += resdnet_backward(tape.steps[static_cast<std::size_t>(t - 1)], weights, gx[static_cast<std::size_t>(t + 1)],
                                          grads, &gz);
    const Planes<Scalar> gu = unobserved.cwiseProduct(gz);
    const auto& xc = tape.x[static_cast<std::size_t>(t)];
    const auto& xp = tape.x[static_cast<std::size_t>(t - 1)];
    grad_w[i - 1] += static_cast<Scalar>(gu.template cast<double>().cwiseProduct((xc - xp).template cast<double>()).sum());
    gx[static_cast<std::size_t>(t)] += (Scalar(1) + w[i - 1]) * gu;
    gx[static_cast<std::size_t>(t - 1)] -= w[i - 1] * gu;
  }
}

}  // namespace jdd
