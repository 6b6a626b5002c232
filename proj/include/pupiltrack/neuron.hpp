#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <type_traits>
#include <vector>

#include "pupiltrack/errors.hpp"

namespace pupiltrack {

// on_chip: at most one spike per update. off_chip: floor(v / v_th) spikes.
enum class SpikeMode { on_chip, off_chip };

// `above` fires when v > v_th; `at_or_above` when v >= v_th.
enum class FireRule { above, at_or_above };

// Lower clip as a multiple of the threshold.
inline constexpr double kVMinFactor = 10.0;

// Saturation bounds of the 16-bit neuron state.
inline constexpr std::int32_t kStateMax = 32767;
inline constexpr std::int32_t kStateMin = -32768;

template <class T>
concept NeuronValue = std::is_same_v<T, double> || std::is_same_v<T, std::int32_t>;

template <NeuronValue T>
struct NeuronParams {
  T threshold{1};
  T v_min{-10};
  FireRule rule = FireRule::above;
};

template <NeuronValue T>
struct IfStepResult {
  std::uint32_t spikes = 0;
  T voltage{};

  bool operator==(const IfStepResult&) const = default;
};

// One integrate-and-fire update with clip-then-fire order and soft reset:
//   v~ = v + input;  v' = max(v_min, v~);  spikes from v';  v' -= spikes * v_th.
// Integer states additionally saturate at +32767.
template <NeuronValue T>
IfStepResult<T> if_step(T v, T input, SpikeMode mode, const NeuronParams<T>& p) {
  if (!(p.threshold > T{0}) || !(p.v_min < T{0})) {
    throw ValidationError("if_step requires v_th > 0 and v_min < 0");
  }
  T u{};
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v) || !std::isfinite(input)) throw NumericError("non-finite neuron input");
    u = std::max(p.v_min, v + input);
  } else {
    const std::int64_t sum = std::int64_t{v} + std::int64_t{input};
    u = static_cast<T>(std::clamp<std::int64_t>(sum, p.v_min, kStateMax));
  }

  const bool fires = p.rule == FireRule::above ? u > p.threshold : u >= p.threshold;
  if (!fires) return {0, u};

  std::uint32_t spikes = 1;
  if (mode == SpikeMode::off_chip) {
    if constexpr (std::is_floating_point_v<T>) {
      spikes = static_cast<std::uint32_t>(std::floor(u / p.threshold));
    } else {
      spikes = static_cast<std::uint32_t>(u / p.threshold);
    }
  }
  return {spikes, static_cast<T>(u - static_cast<T>(spikes) * p.threshold)};
}

// Periodic arctan-derivative surrogate: 1 / (1 + pi^2 d^2), where d is the
// signed distance (in threshold units) to the nearest positive multiple of
// v_th. Peaks at every k * v_th with k >= 1.
inline double surrogate_derivative(double v, double v_th = 1.0) {
  const double r = v / v_th;
  const double k = std::max(1.0, std::round(r));
  const double d = r - k;
  return 1.0 / (1.0 + std::numbers::pi * std::numbers::pi * d * d);
}

// One 8-bit quantization step of a layer whose weights sit on the clamp
// bound: the bound is v_th - q and 127 steps of q reach it exactly.
inline double default_projection_step(double v_th = 1.0) { return v_th / 128.0; }

// Clamps every weight into [-(v_th - q), v_th - q]. Idempotent.
inline void project_weights_inplace(std::span<double> weights, double v_th = 1.0,
                                    double step = -1.0) {
  if (step < 0.0) step = default_projection_step(v_th);
  const double bound = v_th - step;
  if (!(bound > 0.0)) throw ValidationError("projection step must be smaller than v_th");
  for (double& w : weights) w = std::clamp(w, -bound, bound);
}

inline std::vector<double> project_weights(std::span<const double> weights, double v_th = 1.0,
                                           double step = -1.0) {
  std::vector<double> out(weights.begin(), weights.end());
  project_weights_inplace(out, v_th, step);
  return out;
}

struct QuantizedLayer {
  std::vector<std::int8_t> weights;
  double scale = 1.0;  // effective weight = integer * scale

  double effective(std::size_t i) const { return weights[i] * scale; }
  bool operator==(const QuantizedLayer&) const = default;
};

// Symmetric per-layer max-abs quantization to [-127, 127]; round half away
// from zero. An all-zero layer gets scale 1.
inline QuantizedLayer quantize(std::span<const double> weights) {
  double max_abs = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw NumericError("non-finite weight");
    max_abs = std::max(max_abs, std::abs(w));
  }
  QuantizedLayer q;
  q.scale = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
  q.weights.reserve(weights.size());
  for (double w : weights) {
    const double r = std::round(w / q.scale);
    q.weights.push_back(static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0)));
  }
  return q;
}

inline std::vector<double> dequantize(const QuantizedLayer& q) {
  std::vector<double> out;
  out.reserve(q.weights.size());
  for (std::size_t i = 0; i < q.weights.size(); ++i) out.push_back(q.effective(i));
  return out;
}

// Integer threshold and clip bound for a layer with the given scale.
inline NeuronParams<std::int32_t> fixed_point_neuron(double threshold, double scale, FireRule rule) {
  if (!(threshold > 0.0) || !(scale > 0.0)) throw ValidationError("invalid threshold or scale");
  const double steps = std::round(threshold / scale);
  if (steps > kStateMax) throw ConfigurationError("threshold does not fit the 16-bit state");
  const auto th = std::max<std::int32_t>(1, static_cast<std::int32_t>(steps));
  const auto vmin = static_cast<std::int32_t>(
      std::max<double>(kStateMin, -kVMinFactor * static_cast<double>(th)));
  return {th, vmin, rule};
}

}  // namespace pupiltrack
