#pragma once

// Residual denoiser: a head convolution, 2*depth PReLU+conv blocks with a
// shortcut around every pair, a transposed-convolution tail, projection of the
// estimated noise onto the sigma-dependent l2 ball, subtraction from the
// input and a final clip to [0, 255].

#include "jdd/memory_meter.hpp"
#include "jdd/ops.hpp"
#include "jdd/parameters.hpp"
#include "jdd/random.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace jdd {

struct ResDNetConfig {
  int depth = 5;
  int features = 64;
  int head_kernel = 5;
  int block_kernel = 3;
  int tail_kernel = 5;

  int blocks() const { return 2 * depth; }
  void validate() const {
    if (depth < 1) throw std::invalid_argument("ResDNet depth must be >= 1");
    if (features < 1) throw std::invalid_argument("ResDNet needs at least one feature channel");
    for (int k : {head_kernel, block_kernel, tail_kernel})
      if (k < 1 || k % 2 == 0) throw std::invalid_argument("ResDNet kernels must be odd");
  }
  bool operator==(const ResDNetConfig&) const = default;
};

inline constexpr int kImageChannels = 3;
inline constexpr double kDefaultPreluSlope = 0.25;

inline std::string block_name(int b) { return "block" + std::to_string(b); }

/// Adds the denoiser entries (head, blocks, tail) to `store`. Raw filters are
/// He-normal per fan-in; each scale starts at the norm of its centred draw so
/// the initial effective filter is the centred He draw itself.
template <typename Scalar>
void init_denoiser(ParameterStore<Scalar>& store, const ResDNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(seed, 0xDE70);
  const Index f = cfg.features;
  auto add_bank = [&](const std::string& prefix, Index filters, Index in_ch, int k, Index fan_in) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Planes<Scalar> u(filters, in_ch * k * k);
    for (Index i = 0; i < u.size(); ++i) u.data()[i] = static_cast<Scalar>(std_dev * rng.normal());
    const Planes<Scalar> centred = u.colwise() - u.rowwise().mean();
    const Vector<Scalar> s = centred.rowwise().norm();
    store.add(prefix + ".u", ParamGroup::FilterRaw, {filters, in_ch, k, k}, std::move(u));
    store.add(prefix + ".s", ParamGroup::FilterScale, {filters}, Planes<Scalar>(s));
  };
  add_bank("head", f, kImageChannels, cfg.head_kernel, kImageChannels * cfg.head_kernel * cfg.head_kernel);
  for (int b = 0; b < cfg.blocks(); ++b) {
    store.add(block_name(b) + ".kappa", ParamGroup::PreluSlope, {f}, Planes<Scalar>::Constant(f, 1, Scalar(kDefaultPreluSlope)));
    add_bank(block_name(b), f, f, cfg.block_kernel, f * cfg.block_kernel * cfg.block_kernel);
  }
  // The tail is the adjoint of a 3 -> features convolution; its own fan-in is features*k*k.
  add_bank("tail", f, kImageChannels, cfg.tail_kernel, f * cfg.tail_kernel * cfg.tail_kernel);
}

/// Effective (materialized) weights, computed once and shared by every call
/// that uses the same parameter values.
template <typename Scalar>
struct DenoiserWeights {
  ResDNetConfig config;
  ops::FilterBank<Scalar> head;
  std::vector<ops::FilterBank<Scalar>> blocks;
  std::vector<Vector<Scalar>> kappa;
  ops::FilterBank<Scalar> tail;
};

/// Gradients w.r.t. the materialized filters and PReLU slopes.
template <typename Scalar>
struct DenoiserGrads {
  Planes<Scalar> head;
  std::vector<Planes<Scalar>> blocks;
  std::vector<Vector<Scalar>> kappa;
  Planes<Scalar> tail;

  explicit DenoiserGrads(const DenoiserWeights<Scalar>& w)
      : head(Planes<Scalar>::Zero(w.head.v.rows(), w.head.v.cols())),
        tail(Planes<Scalar>::Zero(w.tail.v.rows(), w.tail.v.cols())) {
    for (const auto& b : w.blocks) blocks.push_back(Planes<Scalar>::Zero(b.v.rows(), b.v.cols()));
    for (const auto& k : w.kappa) kappa.push_back(Vector<Scalar>::Zero(k.size()));
  }

  DenoiserGrads& operator+=(const DenoiserGrads& o) {
    head += o.head;
    tail += o.tail;
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] += o.blocks[i];
    for (std::size_t i = 0; i < kappa.size(); ++i) kappa[i] += o.kappa[i];
    return *this;
  }
};

template <typename Scalar>
Vector<Scalar> entry_vector(const ParamEntry<Scalar>& e) {
  return Eigen::Map<const Vector<Scalar>>(e.value.data(), e.size());
}

template <typename Scalar>
DenoiserWeights<Scalar> materialize(const ParameterStore<Scalar>& store, const ResDNetConfig& cfg) {
  cfg.validate();
  auto bank = [&](const std::string& prefix, Index expect_cols) {
    const auto& u = store[prefix + ".u"];
    if (u.value.rows() != cfg.features || u.value.cols() != expect_cols)
      throw ShapeError("parameter '" + prefix + ".u' does not match the denoiser configuration");
    return ops::materialize_filters<Scalar>(u.value, entry_vector(store[prefix + ".s"]));
  };
  DenoiserWeights<Scalar> w;
  w.config = cfg;
  w.head = bank("head", kImageChannels * cfg.head_kernel * cfg.head_kernel);
  for (int b = 0; b < cfg.blocks(); ++b) {
    w.blocks.push_back(bank(block_name(b), Index{cfg.features} * cfg.block_kernel * cfg.block_kernel));
    w.kappa.push_back(entry_vector(store[block_name(b) + ".kappa"]));
    if (w.kappa.back().size() != cfg.features) throw ShapeError("PReLU slope count does not match features");
  }
  w.tail = bank("tail", kImageChannels * cfg.tail_kernel * cfg.tail_kernel);
  return w;
}

/// Chains materialized-filter gradients back to (u, s) and adds them, with
/// the slope gradients, into the store.
template <typename Scalar>
void accumulate_denoiser_grads(ParameterStore<Scalar>& store, const DenoiserWeights<Scalar>& w, const DenoiserGrads<Scalar>& g) {
  auto bank = [&](const std::string& prefix, const ops::FilterBank<Scalar>& fb, const Planes<Scalar>& gv) {
    auto& s = store[prefix + ".s"];
    Vector<Scalar> gs = Vector<Scalar>::Zero(s.size());
    ops::materialize_filters_backward<Scalar>(fb, entry_vector(s), gv, store[prefix + ".u"].grad, gs);
    s.grad += Eigen::Map<const Planes<Scalar>>(gs.data(), s.value.rows(), s.value.cols());
  };
  bank("head", w.head, g.head);
  for (int b = 0; b < w.config.blocks(); ++b) {
    bank(block_name(b), w.blocks[static_cast<std::size_t>(b)], g.blocks[static_cast<std::size_t>(b)]);
    store[block_name(b) + ".kappa"].grad += g.kappa[static_cast<std::size_t>(b)];
  }
  bank("tail", w.tail, g.tail);
}

/// Activations recorded by a forward pass for the backward pass.
template <typename Scalar>
struct ResDNetTape {
  Index height = 0, width = 0;
  Planes<Scalar> input;
  std::vector<Planes<Scalar>> block_in;   // pre-activation input of each block
  std::vector<Planes<Scalar>> block_act;  // PReLU output feeding each block's conv
  Planes<Scalar> tail_in;
  Planes<Scalar> residual;
  ops::Projection<Scalar> projection;
  Planes<Scalar> pre_clip;
  MeterToken meter;

  std::size_t bytes() const {
    std::size_t n = static_cast<std::size_t>(input.size() + tail_in.size() + residual.size() + pre_clip.size());
    for (const auto& p : block_in) n += static_cast<std::size_t>(p.size());
    for (const auto& p : block_act) n += static_cast<std::size_t>(p.size());
    return n * sizeof(Scalar);
  }
};

/// Denoises a 3 x (h*w) input at noise level sigma with projection exponent
/// gamma. Records activations into `tape` when given.
template <typename Scalar>
Planes<Scalar> resdnet_forward(const Planes<Scalar>& noisy, Index h, Index w, Scalar sigma, Scalar gamma,
                               const DenoiserWeights<Scalar>& weights, ResDNetTape<Scalar>* tape = nullptr) {
  const ResDNetConfig& cfg = weights.config;
  if (noisy.rows() != kImageChannels || noisy.cols() != h * w) throw ShapeError("resdnet_forward: input must be 3 x (h*w)");
  if (!(sigma >= Scalar(0))) throw std::invalid_argument("resdnet_forward: sigma must be non-negative");
  if (tape) {
    tape->height = h;
    tape->width = w;
    tape->input = noisy;
    tape->block_in.clear();
    tape->block_act.clear();
  }
  Planes<Scalar> stream = ops::conv2d_reflect(noisy, h, w, weights.head.v, cfg.head_kernel);
  for (int pair = 0; pair < cfg.depth; ++pair) {
    Planes<Scalar> skip = stream;
    for (int b = 2 * pair; b < 2 * pair + 2; ++b) {
      Planes<Scalar> act = ops::prelu(stream, weights.kappa[static_cast<std::size_t>(b)]);
      if (tape) tape->block_in.push_back(std::move(stream));
      stream = ops::conv2d_reflect(act, h, w, weights.blocks[static_cast<std::size_t>(b)].v, cfg.block_kernel);
      if (tape) tape->block_act.push_back(std::move(act));
    }
    stream += skip;
  }
  Planes<Scalar> residual = ops::transposed_conv2d(stream, h, w, weights.tail.v, cfg.tail_kernel);
  ops::Projection<Scalar> proj;
  Planes<Scalar> pre_clip = noisy - ops::l2_project(residual, sigma, gamma, noisy.size(), &proj);
  Planes<Scalar> out = ops::clip_0_255(pre_clip);
  if (tape) {
    tape->tail_in = std::move(stream);
    tape->residual = std::move(residual);
    tape->projection = proj;
    tape->pre_clip = std::move(pre_clip);
    tape->meter.set(tape->bytes());
  }
  return out;
}

/// Back-propagates `grad_out`. Adds weight gradients into `grads`, the input
/// gradient into `grad_input` (when given) and returns d(loss)/d(gamma).
template <typename Scalar>
Scalar resdnet_backward(const ResDNetTape<Scalar>& tape, const DenoiserWeights<Scalar>& weights, const Planes<Scalar>& grad_out,
                        DenoiserGrads<Scalar>& grads, Planes<Scalar>* grad_input) {
  const ResDNetConfig& cfg = weights.config;
  const Index h = tape.height, w = tape.width, f = cfg.features;
  Planes<Scalar> g_pre = Planes<Scalar>::Zero(kImageChannels, h * w);
  ops::clip_0_255_backward(tape.pre_clip, grad_out, g_pre);
  if (grad_input) *grad_input += g_pre;

  Planes<Scalar> g_residual = Planes<Scalar>::Zero(kImageChannels, h * w);
  const Scalar g_gamma = ops::l2_project_backward<Scalar>(tape.residual, tape.projection, -g_pre, g_residual);

  Planes<Scalar> g_stream = Planes<Scalar>::Zero(f, h * w);
  ops::transposed_conv2d_backward(tape.tail_in, h, w, weights.tail.v, cfg.tail_kernel, g_residual, &g_stream, &grads.tail);
  Planes<Scalar> g_act(f, h * w);
  for (int pair = cfg.depth - 1; pair >= 0; --pair) {
    const Planes<Scalar> g_skip = g_stream;
    for (int b = 2 * pair + 1; b >= 2 * pair; --b) {
      const auto bi = static_cast<std::size_t>(b);
      g_act.setZero();
      ops::conv2d_reflect_backward(tape.block_act[bi], h, w, weights.blocks[bi].v, cfg.block_kernel, g_stream, &g_act,
                                   &grads.blocks[bi]);
      g_stream.setZero();
      ops::prelu_backward(tape.block_in[bi], weights.kappa[bi], g_act, g_stream, grads.kappa[bi]);
    }
    g_stream += g_skip;
  }
  ops::conv2d_reflect_backward(tape.input, h, w, weights.head.v, cfg.head_kernel, g_stream, grad_input, &grads.head);
  return g_gamma;
}

struct ParameterCount {
  Index filter_raw = 0;
  Index filter_scale = 0;
  Index prelu_slope = 0;
  Index projection_gamma = 0;
  Index extrapolation = 0;
  Index total() const { return filter_raw + filter_scale + prelu_slope + projection_gamma + extrapolation; }
};

/// Closed-form count of trainable scalars of an unrolled solver with K
/// iterations (denoiser + K projection exponents + K extrapolation weights).
inline ParameterCount count_parameters(const ResDNetConfig& cfg, int iterations) {
  cfg.validate();
  const Index f = cfg.features;
  ParameterCount c;
  c.filter_raw = f * kImageChannels * cfg.head_kernel * cfg.head_kernel +
                 Index{cfg.blocks()} * f * f * cfg.block_kernel * cfg.block_kernel +
                 f * kImageChannels * cfg.tail_kernel * cfg.tail_kernel;
  c.filter_scale = f * (2 + cfg.blocks());
  c.prelu_slope = f * cfg.blocks();
  c.projection_gamma = iterations;
  c.extrapolation = iterations;
  return c;
}

}  // namespace jdd
