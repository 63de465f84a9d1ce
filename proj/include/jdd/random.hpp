#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace jdd {

/// Philox4x32-10 counter-based bijection (Salmon et al., Random123).
/// Output depends only on (key, counter), so every draw is addressable and
/// reproducible independent of platform or call order.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t key)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  Block operator()(Block ctr) const {
    std::array<std::uint32_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += 0x9E3779B9u;
        k[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0};
    }
    return ctr;
  }

  Block at(std::uint64_t index, std::uint64_t stream = 0) const {
    return (*this)({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)});
  }

 private:
  std::array<std::uint32_t, 2> key_;
};

/// Sequential stream over a Philox key. Normals come from Box-Muller on
/// consecutive counter blocks, two per block.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : philox_(seed), stream_(stream) {}

  std::uint64_t next_u64() {
    if (have_spare_bits_) {
      have_spare_bits_ = false;
      return spare_bits_;
    }
    const auto b = philox_.at(counter_++, stream_);
    spare_bits_ = (std::uint64_t{b[3]} << 32) | b[2];
    have_spare_bits_ = true;
    return (std::uint64_t{b[1]} << 32) | b[0];
  }

  /// Uniform in the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection, n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_normal_ = r * std::sin(theta);
    have_spare_normal_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  Philox4x32 philox_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::uint64_t spare_bits_ = 0;
  bool have_spare_bits_ = false;
  double spare_normal_ = 0.0;
  bool have_spare_normal_ = false;
};

}  // namespace jdd
