#pragma once

#include "jdd/cfa.hpp"
#include "jdd/mmnet.hpp"
#include "jdd/parameters.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace jdd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  MMNetConfig model;
  CfaPattern pattern = CfaPattern::BayerRGGB;
  int epoch = -1;  // last completed epoch, -1 when untrained
  double best_val_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  CheckpointMeta meta;
  ParameterStore<float> params;
};

/// Container layout:
///
///   JDDCKPT <version>\n
///   <key> <value>\n            config echo (depth, features, kernels, K, gamma range, pattern, epoch)
///   tensor <name> f32 <group> <ndim> <d0> ... <dn>\n   one line per payload block
///   end\n
///   payload: the blocks in header order, little-endian IEEE float32
///
/// Optimizer slots are stored as tensors named m:<name>, v:<name>, vhat:<name>.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, bool with_optimizer_state = true);

/// Loads and validates a checkpoint: shapes against the echoed config,
/// `expect` (when given) against the echo, and every filter's zero-mean / norm-s
/// parametrization (CheckpointError on any failure).
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<MMNetConfig>& expect = std::nullopt);

struct FilterAudit {
  double max_abs_mean = 0.0;       // max over filters of |mean(v)|
  double max_norm_deviation = 0.0; // max over filters of | ||v|| - |s| |
  Index filters = 0;
};

/// Materializes every filter bank in 64-bit and measures the parametrization.
FilterAudit audit_filters(const ParameterStore<float>& params, const ResDNetConfig& cfg);

inline constexpr double kFilterMeanTolerance = 1e-9;
inline constexpr double kFilterNormTolerance = 1e-6;

}  // namespace jdd
