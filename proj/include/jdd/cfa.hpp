#pragma once

#include "jdd/image.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace jdd {

/// `Full` samples every channel everywhere (M = I); it exists for the pure
/// denoising case and is the only layout that breaks the one-channel-per-pixel rule.
enum class CfaPattern { BayerRGGB, BayerGRBG, BayerGBRG, BayerBGGR, XTrans, Full };

struct CfaPhase {
  int row = 0;
  int col = 0;
  bool operator==(const CfaPhase&) const = default;
};

std::string_view to_string(CfaPattern p);
std::optional<CfaPattern> parse_pattern(std::string_view name);
bool is_bayer(CfaPattern p);
int pattern_period(CfaPattern p);

/// Fuji X-Trans 6x6 layout, 0 = R, 1 = G, 2 = B:
///
///   G G R G G B
///   G G B G G R
///   B R G R B G
///   G G B G G R
///   G G R G G B
///   R B G B R G
extern const std::array<std::array<std::uint8_t, 6>, 6> kXTransTable;

/// Binary sampling operator M of the observation model, stored per pixel and
/// channel. Immutable once built.
class CfaMask {
 public:
  CfaMask() = default;

  Index height() const { return height_; }
  Index width() const { return width_; }
  Index pixels() const { return height_ * width_; }
  CfaPattern pattern() const { return pattern_; }
  CfaPhase phase() const { return phase_; }

  /// Channel sampled at (y, x); undefined for the Full layout.
  int channel(Index y, Index x) const { return channel_[static_cast<std::size_t>(y * width_ + x)]; }

  /// 3 x (height*width) planes of 0/1.
  const Planes<float>& bits() const { return bits_; }
  template <typename Scalar>
  Planes<Scalar> bits_as() const {
    return bits_.cast<Scalar>();
  }

  /// Row-major height x width map of channel indices (0/1/2).
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> index_map() const;

  CfaMask crop(Index y, Index x, Index h, Index w) const;
  CfaMask hflip() const;
  CfaMask vflip() const;

  bool operator==(const CfaMask& o) const {
    return height_ == o.height_ && width_ == o.width_ && bits_ == o.bits_;
  }

  friend CfaMask make_periodic_mask(Index, Index, CfaPattern, CfaPhase);
  friend CfaMask make_full_mask(Index, Index);
  friend CfaMask mask_from_channels(Index, Index, CfaPattern, CfaPhase, std::vector<std::uint8_t>);

 private:
  Index height_ = 0;
  Index width_ = 0;
  CfaPattern pattern_ = CfaPattern::BayerRGGB;
  CfaPhase phase_{};
  std::vector<std::uint8_t> channel_;
  Planes<float> bits_;
};

CfaMask make_bayer_mask(Index h, Index w, CfaPattern pattern = CfaPattern::BayerRGGB, CfaPhase phase = {});
CfaMask make_xtrans_mask(Index h, Index w, CfaPhase phase = {});
CfaMask make_full_mask(Index h, Index w);
/// Dispatches on the pattern family.
CfaMask make_mask(Index h, Index w, CfaPattern pattern, CfaPhase phase = {});

/// Finds the (pattern, phase) of a periodic layout that reproduces `channels`
/// within the given family (Bayer or X-Trans). Used after flips.
std::optional<std::pair<CfaPattern, CfaPhase>> identify_layout(Index h, Index w, const std::vector<std::uint8_t>& channels,
                                                               bool xtrans_family);

/// y = M x. Unobserved entries are exactly zero.
template <typename Scalar>
PlanarImageT<Scalar> mosaick(const PlanarImageT<Scalar>& x, const CfaMask& m) {
  require_same_shape(x.height, x.width, m.height(), m.width(), "mosaick");
  PlanarImageT<Scalar> y(x.height, x.width, x.colorspace);
  y.data = x.data.cwiseProduct(m.bits_as<Scalar>());
  return y;
}

/// z = y + (I - M) x0: observations where sampled, x0 elsewhere.
template <typename Scalar>
Planes<Scalar> inject(const Planes<Scalar>& y, const Planes<Scalar>& x0, const Planes<Scalar>& bits) {
  return y + (Planes<Scalar>::Ones(bits.rows(), bits.cols()) - bits).cwiseProduct(x0);
}

template <typename Scalar>
PlanarImageT<Scalar> inject(const PlanarImageT<Scalar>& y, const PlanarImageT<Scalar>& x0, const CfaMask& m) {
  require_same_shape(y.height, y.width, m.height(), m.width(), "inject");
  require_same_shape(x0.height, x0.width, m.height(), m.width(), "inject");
  return PlanarImageT<Scalar>(inject<Scalar>(y.data, x0.data, m.bits_as<Scalar>()), y.height, y.width, y.colorspace);
}

class UnsupportedPattern : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// Per-channel normalized-convolution bilinear interpolation with kernel
/// [1,2,1] x [1,2,1] and reflexive boundaries. Sampled entries are copied
/// through untouched. Missing entries with no sampled neighbour in the 3x3
/// window (X-Trans corners) take the plain mean of the nearest square window
/// that holds one. `strict` rejects non-Bayer masks.
template <typename Scalar>
PlanarImageT<Scalar> bilinear_init(const PlanarImageT<Scalar>& y, const CfaMask& m, bool strict = false) {
  require_same_shape(y.height, y.width, m.height(), m.width(), "bilinear_init");
  if (strict && !is_bayer(m.pattern())) throw UnsupportedPattern("bilinear_init: strict mode requires a Bayer mask");
  const Index h = y.height, w = y.width;
  static constexpr Scalar kTap[3] = {1, 2, 1};
  PlanarImageT<Scalar> out(h, w, y.colorspace);
  const Planes<float>& bits = m.bits();
  for (Index c = 0; c < 3; ++c) {
    for (Index yy = 0; yy < h; ++yy) {
      for (Index xx = 0; xx < w; ++xx) {
        const Index p = yy * w + xx;
        if (bits(c, p) != 0.0f) {
          out.data(c, p) = y.data(c, p);
          continue;
        }
        Scalar num = 0, den = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const Index sy = reflect_index(yy + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const Index q = sy * w + reflect_index(xx + dx, w);
            if (bits(c, q) == 0.0f) continue;
            const Scalar k = kTap[dy + 1] * kTap[dx + 1];
            num += k * y.data(c, q);
            den += k;
          }
        }
        for (Index r = 2; den == 0 && r <= std::max(h, w); ++r) {
          for (Index dy = -r; dy <= r; ++dy) {
            const Index sy = reflect_index(yy + dy, h);
            for (Index dx = -r; dx <= r; ++dx) {
              const Index q = sy * w + reflect_index(xx + dx, w);
              if (bits(c, q) == 0.0f) continue;
              num += y.data(c, q);
              den += 1;
            }
          }
        }
        out.data(c, p) = den > 0 ? num / den : Scalar(0);
      }
    }
  }
  return out;
}

}  // namespace jdd
