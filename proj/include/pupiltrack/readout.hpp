#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pupiltrack/count_tensor.hpp"
#include "pupiltrack/errors.hpp"
#include "pupiltrack/network.hpp"

namespace pupiltrack {

inline constexpr int kReadoutNeurons = 16;
// Neuron 0 never reports, leaving 15 usable outputs.
inline constexpr int kReadoutOutputs = 15;

// Address range accepted by the readout mapper.
inline constexpr int kReadoutMaxChannels = 1024;
inline constexpr int kReadoutMaxExtent = 128;

enum class MappingMode : std::uint8_t { m00 = 0b00, m01 = 0b01, m10 = 0b10, m11 = 0b11 };

inline MappingMode mapping_mode_from_bits(int bits) {
  if (bits < 0 || bits > 3) throw ValidationError("mapping mode must be a 2-bit value");
  return static_cast<MappingMode>(bits);
}

// Readout neuron reached by feature (c, h, w) under the faulty address
// resolution. Each mode collapses coordinates into a 4-bit class:
//   0b00: rows repeat in pairs with period 4, columns with period 2, channels
//         in groups of 4 (4 groups)
//   0b01: rows in pairs with period 8, columns with period 4, channels ignored
//   0b10: rows in pairs with period 8, columns with period 2, channels in
//         groups of 4 (2 groups)
//   0b11: channels in groups of 4 only
// and class k lands on neuron (k + 1) mod 16.
inline int map_address(MappingMode mode, int c, int h, int w) {
  if (c < 0 || c >= kReadoutMaxChannels || h < 0 || h >= kReadoutMaxExtent || w < 0 ||
      w >= kReadoutMaxExtent) {
    throw ValidationError("readout address out of range");
  }
  int cls = 0;
  switch (mode) {
    case MappingMode::m00:
      cls = ((c / 4) % 4) * 4 + ((h / 2) % 2) * 2 + (w % 2);
      break;
    case MappingMode::m01:
      cls = ((h / 2) % 4) * 4 + (w % 4);
      break;
    case MappingMode::m10:
      cls = ((c / 4) % 2) * 8 + ((h / 2) % 4) * 2 + (w % 2);
      break;
    case MappingMode::m11:
      cls = (c / 4) % 16;
      break;
    default:
      throw ValidationError("invalid mapping mode");
  }
  return (cls + 1) % kReadoutNeurons;
}

// Smallest [C, H, W] feature map that reaches all 15 reporting neurons.
inline std::array<int, 3> minimal_shape(MappingMode mode) {
  switch (mode) {
    case MappingMode::m00: return {13, 4, 2};
    case MappingMode::m01: return {1, 8, 4};
    case MappingMode::m10: return {5, 8, 2};
    case MappingMode::m11: return {57, 1, 1};
  }
  throw ValidationError("invalid mapping mode");
}

struct ReadoutConfig {
  MappingMode mapping = MappingMode::m11;
  int avg_window = 16;  // SCLK cycles: 1, 16 or 32
  int monitored_neuron = 0;

  void validate() const {
    if (avg_window != 1 && avg_window != 16 && avg_window != 32) {
      throw ValidationError("moving-average window must be 1, 16 or 32");
    }
    if (monitored_neuron < 0 || monitored_neuron >= kReadoutNeurons) {
      throw ValidationError("monitored neuron must be in 0..15");
    }
  }
};

// Sixteen per-neuron averaging engines clocked by SCLK. Spikes accumulate in
// the open cycle; each tick closes it and pushes the count into a 32-deep ring.
class ReadoutCore {
 public:
  static constexpr int kCapacity = 32;

  explicit ReadoutCore(ReadoutConfig config = {}) : config_(config) {
    config_.validate();
    for (auto& h : history_) h.fill(0);
    pending_.fill(0);
  }

  const ReadoutConfig& config() const noexcept { return config_; }
  std::uint64_t cycles() const noexcept { return cycles_; }

  void add_spikes(int neuron, std::uint32_t count = 1) {
    check_index(neuron);
    pending_[static_cast<std::size_t>(neuron)] += count;
  }

  void sclk_tick() {
    head_ = (head_ + 1) % kCapacity;
    for (int n = 0; n < kReadoutNeurons; ++n) {
      history_[static_cast<std::size_t>(n)][head_] = pending_[static_cast<std::size_t>(n)];
    }
    pending_.fill(0);
    ++cycles_;
  }

  // Adds `counts` to the open cycle, then ticks.
  void sclk_tick(std::span<const std::uint32_t, kReadoutNeurons> counts) {
    for (int n = 0; n < kReadoutNeurons; ++n) pending_[static_cast<std::size_t>(n)] += counts[static_cast<std::size_t>(n)];
    sclk_tick();
  }

  // floor(sum of the last avg_window closed cycles / avg_window).
  std::uint16_t read_neuron(int idx) const {
    check_index(idx);
    if (idx == 0) return 0;
    const auto& h = history_.at(static_cast<std::size_t>(idx));
    std::uint64_t sum = 0;
    for (int k = 0; k < config_.avg_window; ++k) {
      sum += h[(head_ + kCapacity - static_cast<std::size_t>(k)) % kCapacity];
    }
    return static_cast<std::uint16_t>(std::min<std::uint64_t>(sum / static_cast<std::uint64_t>(config_.avg_window), 0xFFFF));
  }

  void select(int idx) {
    check_index(idx);
    config_.monitored_neuron = idx;
  }
  int monitored() const noexcept { return config_.monitored_neuron; }
  std::uint16_t read_monitored() const { return read_neuron(config_.monitored_neuron); }

 private:
  static void check_index(int idx) {
    if (idx < 0 || idx >= kReadoutNeurons) throw ValidationError("readout neuron index must be in 0..15");
  }

  ReadoutConfig config_;
  std::array<std::array<std::uint32_t, kCapacity>, kReadoutNeurons> history_{};
  std::array<std::uint32_t, kReadoutNeurons> pending_{};
  std::size_t head_ = 0;
  std::uint64_t cycles_ = 0;
};

// ---------------------------------------------------------------------------
// Spike multiplier: core neuron j -> `fan_out` unit-weight neurons (layer A),
// then each readout channel group of `group_fan_in` neurons listens to all of
// j's layer-A neurons (layer B). One core spike becomes fan_out * group_fan_in
// spikes on readout channels [j*group_fan_in, (j+1)*group_fan_in), which
// mapping 0b11 merges onto readout neuron j + 1.

struct MultiplierSpec {
  int core_outputs = kReadoutOutputs;
  int fan_out = 4;
  int group_fan_in = 4;

  int amplification() const { return fan_out * group_fan_in; }
  int hidden_channels() const { return core_outputs * fan_out; }
  int readout_channels() const { return core_outputs * group_fan_in; }

  void validate() const {
    if (core_outputs <= 0 || core_outputs > kReadoutOutputs) {
      throw ValidationError("multiplier supports 1..15 core outputs");
    }
    if (fan_out <= 0) throw ValidationError("fan-out must be positive");
    if (group_fan_in != 4) throw ValidationError("readout channel groups have 4 channels");
  }
};

inline std::vector<LayerSpec> spike_multiplier_specs(const MultiplierSpec& m = {}) {
  m.validate();
  LayerSpec a;
  a.in_channels = m.core_outputs;
  a.out_channels = m.hidden_channels();
  a.fire_rule = FireRule::at_or_above;
  LayerSpec b = a;
  b.in_channels = m.hidden_channels();
  b.out_channels = m.readout_channels();
  return {a, b};
}

// Unit weights on the centre tap of a 3x3 kernel over a 1x1 map; unit
// thresholds firing at v >= v_th.
template <NeuronValue T>
Network<T> build_spike_multiplier(const MultiplierSpec& m = {}) {
  const auto specs = spike_multiplier_specs(m);
  std::vector<Layer<T>> layers;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& s = specs[l];
    std::vector<T> w(s.weight_count(), T{0});
    for (int co = 0; co < s.out_channels; ++co) {
      for (int ci = 0; ci < s.in_channels; ++ci) {
        const bool connected = l == 0 ? ci == co / m.fan_out : ci / m.fan_out == co / m.group_fan_in;
        if (connected) w[s.weight_index(co, ci, 1, 1)] = T{1};
      }
    }
    layers.push_back({s, std::move(w), NeuronParams<T>{T{1}, T{-10}, FireRule::at_or_above}});
  }
  return Network<T>(std::move(layers));
}

// Readout-neuron counts for a tensor of spikes on the readout-facing layer.
inline std::array<std::uint32_t, kReadoutNeurons> route_to_readout(const SpikeTensor& spikes, MappingMode mode) {
  std::array<std::uint32_t, kReadoutNeurons> counts{};
  for (int c = 0; c < spikes.channels(); ++c) {
    for (int h = 0; h < spikes.height(); ++h) {
      for (int w = 0; w < spikes.width(); ++w) {
        if (const auto n = spikes(c, h, w)) counts[static_cast<std::size_t>(map_address(mode, c, h, w))] += n;
      }
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Cyclic readout by the MCU.

struct ReadoutSpike {
  std::int64_t t_us = 0;
  int neuron = 0;
  std::uint32_t count = 1;
};

// Once per window the MCU polls neurons 0..15 back to back, one SCLK period
// apiece, finishing at the window boundary: neuron k of window i is sampled
// at (i + 1) * dt - (16 - k) * sclk. Spikes inside [i*dt, (i+1)*dt - 16*sclk)
// are attributed to window i for every neuron.
struct CyclicSchedule {
  std::int64_t dt_us = 10000;
  std::int64_t sclk_period_us = 175;

  void validate() const {
    if (dt_us <= 0 || sclk_period_us <= 0) throw ConfigurationError("periods must be positive");
    if (kReadoutNeurons * sclk_period_us > dt_us) {
      throw ConfigurationError("a full readout cycle does not fit in one window");
    }
  }
  std::int64_t sample_time(std::int64_t window, int neuron) const {
    return (window + 1) * dt_us - (kReadoutNeurons - neuron) * sclk_period_us;
  }
  std::int64_t aligned_begin(std::int64_t window) const { return window * dt_us; }
  std::int64_t aligned_end(std::int64_t window) const {
    return (window + 1) * dt_us - kReadoutNeurons * sclk_period_us;
  }
};

// MCU-side access to the readout core.
template <class Bus>
concept ReadoutBus = requires(Bus b, int idx) {
  b.toggle_sclk();
  { b.read_count() } -> std::convertible_to<std::uint16_t>;
  b.select(idx);
};

// Direct in-process bus.
class CoreBus {
 public:
  explicit CoreBus(ReadoutCore& core) : core_(core) {}
  void toggle_sclk() { core_.sclk_tick(); }
  std::uint16_t read_count() const { return core_.read_monitored(); }
  void select(int idx) { core_.select(idx); }

 private:
  ReadoutCore& core_;
};

using OutputVector = std::array<std::uint16_t, kReadoutOutputs>;

// Replays time-sorted readout spikes into `core` while the MCU loop runs over
// `bus`; returns one 15-entry output vector per window.
template <ReadoutBus Bus>
std::vector<OutputVector> cyclic_readout(ReadoutCore& core, Bus& bus, std::span<const ReadoutSpike> spikes,
                                         std::size_t windows, const CyclicSchedule& schedule) {
  schedule.validate();
  for (std::size_t i = 1; i < spikes.size(); ++i) {
    if (spikes[i].t_us < spikes[i - 1].t_us) throw OrderingError("readout spikes not sorted");
  }
  std::vector<OutputVector> out(windows);
  std::size_t next = 0;
  bus.select(0);
  for (std::size_t i = 0; i < windows; ++i) {
    for (int k = 0; k < kReadoutNeurons; ++k) {
      const std::int64_t t = schedule.sample_time(static_cast<std::int64_t>(i), k);
      while (next < spikes.size() && spikes[next].t_us < t) {
        core.add_spikes(spikes[next].neuron, spikes[next].count);
        ++next;
      }
      bus.toggle_sclk();
      const std::uint16_t value = bus.read_count();
      bus.select((k + 1) % kReadoutNeurons);
      if (k > 0) out[i][static_cast<std::size_t>(k - 1)] = value;
    }
  }
  return out;
}

inline std::vector<OutputVector> cyclic_readout(ReadoutCore& core, std::span<const ReadoutSpike> spikes,
                                                std::size_t windows, const CyclicSchedule& schedule) {
  CoreBus bus(core);
  return cyclic_readout(core, bus, spikes, windows, schedule);
}

}  // namespace pupiltrack
