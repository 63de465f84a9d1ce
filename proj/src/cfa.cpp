#include "jdd/cfa.hpp"

#include <stdexcept>

namespace jdd {

std::string_view to_string(ColorSpace cs) { return cs == ColorSpace::LinRGB ? "linrgb" : "srgb"; }

const std::array<std::array<std::uint8_t, 6>, 6> kXTransTable = {{
    {1, 1, 0, 1, 1, 2},
    {1, 1, 2, 1, 1, 0},
    {2, 0, 1, 0, 2, 1},
    {1, 1, 2, 1, 1, 0},
    {1, 1, 0, 1, 1, 2},
    {0, 2, 1, 2, 0, 1},
}};

namespace {

using Bayer2x2 = std::array<std::array<std::uint8_t, 2>, 2>;

Bayer2x2 bayer_table(CfaPattern p) {
  switch (p) {
    case CfaPattern::BayerRGGB: return {{{0, 1}, {1, 2}}};
    case CfaPattern::BayerGRBG: return {{{1, 0}, {2, 1}}};
    case CfaPattern::BayerGBRG: return {{{1, 2}, {0, 1}}};
    case CfaPattern::BayerBGGR: return {{{2, 1}, {1, 0}}};
    default: throw std::invalid_argument("bayer_table: not a Bayer pattern");
  }
}

int table_channel(CfaPattern p, Index y, Index x) {
  if (p == CfaPattern::XTrans) return kXTransTable[static_cast<std::size_t>(y % 6)][static_cast<std::size_t>(x % 6)];
  return bayer_table(p)[static_cast<std::size_t>(y % 2)][static_cast<std::size_t>(x % 2)];
}

Planes<float> bits_from_channels(Index h, Index w, const std::vector<std::uint8_t>& ch) {
  Planes<float> bits = Planes<float>::Zero(3, h * w);
  for (Index p = 0; p < h * w; ++p) bits(ch[static_cast<std::size_t>(p)], p) = 1.0f;
  return bits;
}

int positive_mod(Index a, int p) { return static_cast<int>(((a % p) + p) % p); }

}  // namespace

std::string_view to_string(CfaPattern p) {
  switch (p) {
    case CfaPattern::BayerRGGB: return "rggb";
    case CfaPattern::BayerGRBG: return "grbg";
    case CfaPattern::BayerGBRG: return "gbrg";
    case CfaPattern::BayerBGGR: return "bggr";
    case CfaPattern::XTrans: return "xtrans";
    case CfaPattern::Full: return "full";
  }
  return "?";
}

std::optional<CfaPattern> parse_pattern(std::string_view name) {
  for (auto p : {CfaPattern::BayerRGGB, CfaPattern::BayerGRBG, CfaPattern::BayerGBRG, CfaPattern::BayerBGGR,
                 CfaPattern::XTrans, CfaPattern::Full}) {
    if (name == to_string(p)) return p;
  }
  if (name == "bayer") return CfaPattern::BayerRGGB;
  return std::nullopt;
}

bool is_bayer(CfaPattern p) { return p != CfaPattern::XTrans && p != CfaPattern::Full; }

int pattern_period(CfaPattern p) {
  if (p == CfaPattern::XTrans) return 6;
  if (p == CfaPattern::Full) return 1;
  return 2;
}

CfaMask mask_from_channels(Index h, Index w, CfaPattern pattern, CfaPhase phase, std::vector<std::uint8_t> channels) {
  CfaMask m;
  m.height_ = h;
  m.width_ = w;
  m.pattern_ = pattern;
  m.phase_ = phase;
  m.bits_ = bits_from_channels(h, w, channels);
  m.channel_ = std::move(channels);
  return m;
}

CfaMask make_periodic_mask(Index h, Index w, CfaPattern pattern, CfaPhase phase) {
  const int period = pattern_period(pattern);
  phase = {positive_mod(phase.row, period), positive_mod(phase.col, period)};
  std::vector<std::uint8_t> ch(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      ch[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>(table_channel(pattern, y + phase.row, x + phase.col));
  return mask_from_channels(h, w, pattern, phase, std::move(ch));
}

CfaMask make_bayer_mask(Index h, Index w, CfaPattern pattern, CfaPhase phase) {
  if (!is_bayer(pattern)) throw std::invalid_argument("make_bayer_mask: not a Bayer pattern");
  if (h < 2 || w < 2) throw std::invalid_argument("make_bayer_mask: image must be at least 2x2");
  return make_periodic_mask(h, w, pattern, phase);
}

CfaMask make_xtrans_mask(Index h, Index w, CfaPhase phase) {
  if (h < 6 || w < 6) throw std::invalid_argument("make_xtrans_mask: image must be at least 6x6");
  return make_periodic_mask(h, w, CfaPattern::XTrans, phase);
}

CfaMask make_full_mask(Index h, Index w) {
  CfaMask m;
  m.height_ = h;
  m.width_ = w;
  m.pattern_ = CfaPattern::Full;
  m.bits_ = Planes<float>::Ones(3, h * w);
  return m;
}

CfaMask make_mask(Index h, Index w, CfaPattern pattern, CfaPhase phase) {
  if (pattern == CfaPattern::Full) return make_full_mask(h, w);
  if (pattern == CfaPattern::XTrans) return make_xtrans_mask(h, w, phase);
  return make_bayer_mask(h, w, pattern, phase);
}

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> CfaMask::index_map() const {
  if (pattern_ == CfaPattern::Full) throw std::logic_error("index_map: full sampling has no channel map");
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(height_, width_);
  for (Index p = 0; p < pixels(); ++p) out(p / width_, p % width_) = channel_[static_cast<std::size_t>(p)];
  return out;
}

CfaMask CfaMask::crop(Index y, Index x, Index h, Index w) const {
  if (y < 0 || x < 0 || h <= 0 || w <= 0 || y + h > height_ || x + w > width_)
    throw std::out_of_range("CfaMask::crop: rectangle outside the mask");
  if (pattern_ == CfaPattern::Full) return make_full_mask(h, w);
  std::vector<std::uint8_t> ch(static_cast<std::size_t>(h * w));
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) ch[static_cast<std::size_t>(r * w + c)] = static_cast<std::uint8_t>(channel(y + r, x + c));
  const int period = pattern_period(pattern_);
  const CfaPhase ph{positive_mod(phase_.row + y, period), positive_mod(phase_.col + x, period)};
  return mask_from_channels(h, w, pattern_, ph, std::move(ch));
}

namespace {

CfaMask relabel_flipped(const CfaMask& src, std::vector<std::uint8_t> ch) {
  const Index h = src.height(), w = src.width();
  auto layout = identify_layout(h, w, ch, src.pattern() == CfaPattern::XTrans);
  if (!layout) throw std::logic_error("CfaMask flip: flipped layout is not a known periodic pattern");
  return mask_from_channels(h, w, layout->first, layout->second, std::move(ch));
}

}  // namespace

CfaMask CfaMask::hflip() const {
  if (pattern_ == CfaPattern::Full) return *this;
  std::vector<std::uint8_t> ch(channel_.size());
  for (Index y = 0; y < height_; ++y)
    for (Index x = 0; x < width_; ++x) ch[static_cast<std::size_t>(y * width_ + x)] = static_cast<std::uint8_t>(channel(y, width_ - 1 - x));
  return relabel_flipped(*this, std::move(ch));
}

CfaMask CfaMask::vflip() const {
  if (pattern_ == CfaPattern::Full) return *this;
  std::vector<std::uint8_t> ch(channel_.size());
  for (Index y = 0; y < height_; ++y)
    for (Index x = 0; x < width_; ++x) ch[static_cast<std::size_t>(y * width_ + x)] = static_cast<std::uint8_t>(channel(height_ - 1 - y, x));
  return relabel_flipped(*this, std::move(ch));
}

std::optional<std::pair<CfaPattern, CfaPhase>> identify_layout(Index h, Index w, const std::vector<std::uint8_t>& channels,
                                                               bool xtrans_family) {
  std::vector<CfaPattern> candidates;
  if (xtrans_family) candidates = {CfaPattern::XTrans};
  else candidates = {CfaPattern::BayerRGGB, CfaPattern::BayerGRBG, CfaPattern::BayerGBRG, CfaPattern::BayerBGGR};
  for (CfaPattern p : candidates) {
    const int period = pattern_period(p);
    for (int r = 0; r < period; ++r) {
      for (int c = 0; c < period; ++c) {
        bool ok = true;
        for (Index y = 0; y < h && ok; ++y)
          for (Index x = 0; x < w && ok; ++x)
            ok = channels[static_cast<std::size_t>(y * w + x)] == table_channel(p, y + r, x + c);
        if (ok) return std::make_pair(p, CfaPhase{r, c});
      }
    }
  }
  return std::nullopt;
}

}  // namespace jdd
