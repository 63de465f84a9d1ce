#pragma once

#include "jdd/cfa.hpp"
#include "jdd/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace jdd {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PngInfo {
  Index height = 0;
  Index width = 0;
  int channels = 0;
  int bit_depth = 0;
};

using Plane = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PngInfo probe_png(const std::filesystem::path& path);

/// Loads an 8- or 16-bit PNG onto the [0, 255] scale (16-bit codes are
/// divided by 257). Grey images are replicated into three planes only when
/// `replicate_grey` is set; otherwise they are rejected.
PlanarImage load_image(const std::filesystem::path& path, int bit_depth, ColorSpace cs = ColorSpace::LinRGB,
                       bool replicate_grey = false);

/// Loads a single-channel PNG (a raw CFA plane) onto the [0, 255] scale.
Plane load_plane(const std::filesystem::path& path, int bit_depth);

/// Writes an RGB PNG. Values are clipped to [0, 255] and rounded to the
/// nearest code (x257 for 16-bit).
void save_image(const std::filesystem::path& path, const PlanarImage& img, int bit_depth);
void save_plane(const std::filesystem::path& path, const Plane& plane, int bit_depth);
void save_mask_png(const std::filesystem::path& path, const CfaMask& mask);

/// Colour matrix followed by the IEC 61966-2-1 sRGB transfer curve.
PlanarImage linrgb_to_srgb(const PlanarImage& img, const Eigen::Matrix3f& color_matrix = Eigen::Matrix3f::Identity());

/// Scalar sRGB transfer curve on [0, 1].
double srgb_encode(double linear);

struct HFlip {};
struct VFlip {};
struct Crop {
  Index y = 0, x = 0, h = 0, w = 0;
};
/// Crop of the given size at a seed-determined position.
struct RandomCrop {
  Index h = 0, w = 0;
  /// Offsets are drawn on this grid so CFA phase is preserved.
  Index align = 1;
};
using AugmentOp = std::variant<HFlip, VFlip, Crop, RandomCrop>;

PlanarImage augment(const PlanarImage& img, const AugmentOp& op, std::uint64_t seed = 0);

/// Collapses a mosaicked image into one plane (sum over channels).
Plane mosaic_plane(const PlanarImage& mosaicked);
/// Spreads a raw plane onto the channels sampled by `mask`.
PlanarImage expand_plane(const Plane& raw, const CfaMask& mask);

struct DatasetSample {
  std::string name;
  PlanarImage truth;
  PlanarImage observed;
  CfaMask mask;
  std::optional<float> sigma;
};

/// Applies the same geometric op to truth, observation and mask.
DatasetSample augment(const DatasetSample& s, const AugmentOp& op, std::uint64_t seed = 0);

struct ManifestEntry {
  std::filesystem::path truth;
  std::optional<std::filesystem::path> raw;
  std::optional<float> sigma;
};

/// One sample per line: `truth<TAB>raw<TAB>sigma`, where raw and sigma may be
/// "-". Relative paths resolve against the manifest's directory; blank lines
/// and lines starting with '#' are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads every manifest entry. Samples without a raw file are mosaicked from
/// the truth (noise-free).
std::vector<DatasetSample> load_dataset(const std::filesystem::path& manifest, CfaPattern pattern, CfaPhase phase = {});

/// Piecewise-smooth colour test image: smooth correlated background, hard
/// edged shapes and a grating patch, values inside [8, 247].
PlanarImage synthesize_image(Index h, Index w, std::uint64_t seed);

}  // namespace jdd
