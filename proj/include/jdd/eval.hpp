#pragma once

#include "jdd/checkpoint.hpp"
#include "jdd/imgio.hpp"
#include "jdd/mmnet.hpp"
#include "jdd/noise.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jdd {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over all elements; kInfinitePsnr when MSE is 0.
double psnr(const PlanarImage& x, const PlanarImage& ref, double peak = 255.0);
double psnr(const Planes<float>& x, const Planes<float>& ref, double peak = 255.0);

// --------------------------------------------------- majorizer diagnostics
//
// Data term f(x) = ||y - Mx||^2 / (2 sigma^2) with M a binary diagonal.
// Surrogate f(x) + d(x, x0), d(x, x0) = (x - x0)^T (alpha I - M) (x - x0) / (2 sigma^2),
// rewritten as (alpha / (2 sigma^2)) ||x - z||^2 + c with
//   z = x0 + (y - M x0) / alpha
//   c = (||y||^2 + x0^T (alpha I - M) x0 - alpha ||z||^2) / (2 sigma^2).
// For alpha = 1, z = y + (I - M) x0 (the inject operation).

/// d(x, x0) for any alpha >= 0 and sigma > 0.
double majorizer_distance(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& bits, double sigma, double alpha);

/// z = x0 + (y - M x0) / alpha.
Planes<double> surrogate_center(const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits, double alpha);
double surrogate_constant(const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits, double sigma, double alpha);

struct MajorizerCheck {
  double gap = 0.0;                // d(x, x0)
  double identity_residual = 0.0;  // |rewritten - original|
  double relative_residual = 0.0;  // identity_residual / max(|original|, tiny)
};

/// Rejects alpha <= 1 and sigma <= 0 (std::invalid_argument).
MajorizerCheck majorizer_gap(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits,
                             double sigma, double alpha);
MajorizerCheck majorizer_gap(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& y, const CfaMask& mask,
                             double sigma, double alpha);

// ------------------------------------------------------------ evaluation

struct ImageScore {
  std::string name;
  double sigma = 0.0;
  double psnr_lin = 0.0;
  double psnr_srgb = 0.0;
};

struct RuntimeRow {
  int iterations = 0;
  double megapixels = 0.0;
  int runs = 0;
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double sec_per_mpixel = 0.0;
};

struct EvalReport {
  std::string method;  // "mmnet" or "bilinear"
  bool noisy_dataset = false;
  std::vector<ImageScore> images;
  double mean_psnr_lin = std::numeric_limits<double>::quiet_NaN();
  double mean_psnr_srgb = std::numeric_limits<double>::quiet_NaN();
  int infinite_lin = 0;   // rows excluded from the linRGB mean
  int infinite_srgb = 0;  // rows excluded from the sRGB mean
  std::vector<RuntimeRow> runtime;
  std::map<std::string, std::string> config;
};

struct EvalOptions {
  SigmaSource sigma_source = SigmaSource::Oracle;
  double fixed_sigma = 1.0;
  int iterations = -1;  // -1: trained K
  InitMode init = InitMode::Auto;
  Eigen::Matrix3f color_matrix = Eigen::Matrix3f::Identity();
  int threads = 1;
  std::optional<bool> noisy_dataset;  // default: any sample carries sigma > 0
};

/// Reconstructs every sample (bilinear only when `model` is null) and scores
/// it in linRGB and sRGB. Means skip infinite rows, which are counted.
EvalReport evaluate_samples(const std::vector<DatasetSample>& samples, const Checkpoint* model, const EvalOptions& opt);

EvalReport evaluate_dataset(const std::filesystem::path& manifest, const std::optional<std::filesystem::path>& checkpoint,
                            CfaPattern pattern, CfaPhase phase, const EvalOptions& opt);

/// Times `runs` reconstructions per K of a synthetic mosaic of the given size
/// after one untimed warmup run.
std::vector<RuntimeRow> benchmark_runtime(const Checkpoint& model, const std::vector<int>& iterations, double megapixels,
                                          int runs = 10, std::uint64_t seed = 0);

/// Human-readable table; baselines on noisy data print "n/a" unless `show_all`.
std::string report_table(const EvalReport& r, bool show_all = false);
std::string report_csv(const EvalReport& r);
std::string report_json(const EvalReport& r);

}  // namespace jdd
