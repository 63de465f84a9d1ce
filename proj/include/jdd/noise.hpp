#pragma once

#include "jdd/imgio.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>

namespace jdd {

struct Awgn {
  double sigma = 0.0;
};
/// Heteroscedastic Gaussian with variance a_shot * x + b_read.
struct AffineNoise {
  double a_shot = 0.0;
  double b_read = 0.0;
};
using NoiseModel = std::variant<Awgn, AffineNoise>;

/// x + sigma * g, g ~ N(0, 1) drawn from a Philox stream keyed by `seed`.
/// Not clipped.
PlanarImage add_awgn(const PlanarImage& x, double sigma, std::uint64_t seed);
PlanarImage add_affine_noise(const PlanarImage& x, double a_shot, double b_read, std::uint64_t seed);
PlanarImage add_noise(const PlanarImage& x, const NoiseModel& model, std::uint64_t seed);

/// Donoho's MAD estimator on the finest diagonal Haar subband:
/// median(|HH|) / 0.6745. Odd trailing rows/columns are dropped.
double estimate_sigma(const Plane& plane);
/// Same, on a mosaicked image collapsed to its raw plane.
double estimate_sigma(const PlanarImage& mosaicked);

/// Where the noise level handed to the network comes from.
enum class SigmaSource { Oracle, Estimate, Fixed };
std::string_view to_string(SigmaSource s);
std::optional<SigmaSource> parse_sigma_source(std::string_view name);

/// Oracle: the sample's recorded sigma (std::invalid_argument when absent).
/// Estimate: wavelet-MAD on the observation. Fixed: `fixed`.
float resolve_sigma(const DatasetSample& sample, SigmaSource source, double fixed = 1.0);

}  // namespace jdd
