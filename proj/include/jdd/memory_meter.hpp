#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <utility>

namespace jdd {

/// Process-wide count of bytes held by recorded activations (backward tapes).
/// Used to check that truncated unrolling keeps peak memory bounded.
class ActivationMeter {
 public:
  static ActivationMeter& global() {
    static ActivationMeter meter;
    return meter;
  }

  void add(std::size_t bytes) {
    const std::size_t now = current_.fetch_add(bytes) + bytes;
    std::size_t peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
  }
  void remove(std::size_t bytes) { current_.fetch_sub(bytes); }

  std::size_t current() const { return current_.load(); }
  std::size_t peak() const { return peak_.load(); }
  void reset_peak() { peak_.store(current_.load()); }

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

/// Registers a byte count with the meter for as long as it lives.
class MeterToken {
 public:
  MeterToken() = default;
  MeterToken(const MeterToken&) = delete;
  MeterToken& operator=(const MeterToken&) = delete;
  MeterToken(MeterToken&& o) noexcept : bytes_(std::exchange(o.bytes_, 0)) {}
  MeterToken& operator=(MeterToken&& o) noexcept {
    if (this != &o) {
      release();
      bytes_ = std::exchange(o.bytes_, 0);
    }
    return *this;
  }
  ~MeterToken() { release(); }

  void set(std::size_t bytes) {
    release();
    bytes_ = bytes;
    ActivationMeter::global().add(bytes_);
  }
  void release() {
    if (bytes_) ActivationMeter::global().remove(bytes_);
    bytes_ = 0;
  }

 private:
  std::size_t bytes_ = 0;
};

}  // namespace jdd
