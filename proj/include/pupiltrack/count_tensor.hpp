#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "pupiltrack/errors.hpp"

namespace pupiltrack {

// Dense channel x height x width grid of non-negative counts (row-major).
class CountTensor {
 public:
  CountTensor() = default;
  CountTensor(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width) {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw ValidationError("count tensor dimensions must be positive");
    }
    counts_.assign(static_cast<std::size_t>(channels) * height * width, 0);
  }

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return counts_.size(); }

  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }
  bool contains(int c, int y, int x) const noexcept {
    return c >= 0 && c < channels_ && y >= 0 && y < height_ && x >= 0 && x < width_;
  }

  std::uint32_t& operator()(int c, int y, int x) { return counts_[index(c, y, x)]; }
  std::uint32_t operator()(int c, int y, int x) const { return counts_[index(c, y, x)]; }
  std::uint32_t& operator[](std::size_t i) { return counts_[i]; }
  std::uint32_t operator[](std::size_t i) const { return counts_[i]; }

  std::span<const std::uint32_t> data() const noexcept { return counts_; }
  std::span<std::uint32_t> data() noexcept { return counts_; }

  std::uint64_t total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
  }
  std::size_t nonzero() const {
    std::size_t n = 0;
    for (auto c : counts_) n += (c != 0);
    return n;
  }
  bool same_shape(const CountTensor& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  bool operator==(const CountTensor&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint32_t> counts_;
};

// Per-layer spike counts per neuron within one window.
using SpikeTensor = CountTensor;

}  // namespace pupiltrack
