#include "jdd/noise.hpp"

#include "jdd/random.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace jdd {

namespace {

// Both models draw g_i in element order from the same stream so that
// affine(0, s^2) and awgn(s) agree for equal seeds.
constexpr std::uint64_t kNoiseStream = 0xA1;

}  // namespace

PlanarImage add_awgn(const PlanarImage& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_awgn: sigma must be non-negative");
  PlanarImage out = x;
  if (sigma == 0.0) return out;
  CounterRng rng(seed, kNoiseStream);
  for (Index i = 0; i < out.size(); ++i)
    out.data.data()[i] = static_cast<float>(x.data.data()[i] + sigma * rng.normal());
  return out;
}

PlanarImage add_affine_noise(const PlanarImage& x, double a_shot, double b_read, std::uint64_t seed) {
  if (!(a_shot >= 0.0) || !(b_read >= 0.0)) throw std::invalid_argument("add_affine_noise: parameters must be non-negative");
  PlanarImage out = x;
  CounterRng rng(seed, kNoiseStream);
  for (Index i = 0; i < out.size(); ++i) {
    const double v = x.data.data()[i];
    const double var = std::max(0.0, a_shot * v + b_read);
    out.data.data()[i] = static_cast<float>(v + std::sqrt(var) * rng.normal());
  }
  return out;
}

PlanarImage add_noise(const PlanarImage& x, const NoiseModel& model, std::uint64_t seed) {
  if (const auto* g = std::get_if<Awgn>(&model)) return add_awgn(x, g->sigma, seed);
  const auto& a = std::get<AffineNoise>(model);
  return add_affine_noise(x, a.a_shot, a.b_read, seed);
}

double estimate_sigma(const Plane& plane) {
  const Index h = plane.rows() / 2 * 2, w = plane.cols() / 2 * 2;
  if (h < 2 || w < 2) throw std::invalid_argument("estimate_sigma: plane must be at least 2x2");
  std::vector<double> hh;
  hh.reserve(static_cast<std::size_t>(h * w / 4));
  for (Index y = 0; y < h; y += 2) {
    for (Index x = 0; x < w; x += 2) {
      const double a = plane(y, x), b = plane(y, x + 1), c = plane(y + 1, x), d = plane(y + 1, x + 1);
      hh.push_back(std::abs(a - b - c + d) * 0.5);
    }
  }
  const auto mid = hh.begin() + static_cast<std::ptrdiff_t>(hh.size() / 2);
  std::nth_element(hh.begin(), mid, hh.end());
  double median = *mid;
  if (hh.size() % 2 == 0) {
    const double below = *std::max_element(hh.begin(), mid);
    median = 0.5 * (median + below);
  }
  return median / 0.6745;
}

double estimate_sigma(const PlanarImage& mosaicked) { return estimate_sigma(mosaic_plane(mosaicked)); }

std::string_view to_string(SigmaSource s) {
  switch (s) {
    case SigmaSource::Oracle: return "oracle";
    case SigmaSource::Estimate: return "estimate";
    case SigmaSource::Fixed: return "fixed";
  }
  return "?";
}

std::optional<SigmaSource> parse_sigma_source(std::string_view name) {
  for (auto s : {SigmaSource::Oracle, SigmaSource::Estimate, SigmaSource::Fixed})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

float resolve_sigma(const DatasetSample& sample, SigmaSource source, double fixed) {
  switch (source) {
    case SigmaSource::Oracle:
      if (!sample.sigma) throw std::invalid_argument("sigma unavailable for '" + sample.name + "' under oracle mode");
      return *sample.sigma;
    case SigmaSource::Estimate: return static_cast<float>(estimate_sigma(sample.observed));
    case SigmaSource::Fixed:
      if (!(fixed >= 0.0)) throw std::invalid_argument("fixed sigma must be non-negative");
      return static_cast<float>(fixed);
  }
  return 0.0f;
}

}  // namespace jdd
