#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pupiltrack/count_tensor.hpp"
#include "pupiltrack/errors.hpp"
#include "pupiltrack/neuron.hpp"

namespace pupiltrack {

// Strided convolution layer of IF neurons without bias. Weights are stored
// row-major as (out, in, ky, kx). `pool` > 1 sum-pools the output spikes.
struct LayerSpec {
  int in_channels = 1;
  int out_channels = 1;
  int in_height = 1;
  int in_width = 1;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  int pool = 1;
  double threshold = 1.0;
  FireRule fire_rule = FireRule::above;

  int conv_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
  int conv_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  int out_height() const { return conv_height() / pool; }
  int out_width() const { return conv_width() / pool; }

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  std::size_t weight_index(int co, int ci, int ky, int kx) const {
    return ((static_cast<std::size_t>(co) * in_channels + ci) * kernel + ky) * kernel + kx;
  }
  std::size_t neuron_count() const {
    return static_cast<std::size_t>(out_channels) * conv_height() * conv_width();
  }

  void validate() const {
    if (in_channels <= 0 || out_channels <= 0 || in_height <= 0 || in_width <= 0 ||
        kernel <= 0 || stride <= 0 || padding < 0 || pool <= 0) {
      throw ConfigurationError("layer dimensions must be positive");
    }
    if (in_height + 2 * padding < kernel || in_width + 2 * padding < kernel) {
      throw ConfigurationError("kernel larger than padded input");
    }
    if (conv_height() % pool != 0 || conv_width() % pool != 0) {
      throw ConfigurationError("pooling does not divide the feature map");
    }
    if (!(threshold > 0.0)) throw ConfigurationError("threshold must be positive");
  }

  bool operator==(const LayerSpec&) const = default;
};

template <NeuronValue T>
struct Layer {
  LayerSpec spec;
  std::vector<T> weights;
  NeuronParams<T> neuron;
};

template <NeuronValue T>
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer<T>> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigurationError("network has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& s = layers_[l].spec;
      s.validate();
      if (layers_[l].weights.size() != s.weight_count()) {
        throw ConfigurationError("layer " + std::to_string(l) + " weight count mismatch");
      }
      if (l > 0) {
        const auto& p = layers_[l - 1].spec;
        if (p.out_channels != s.in_channels || p.out_height() != s.in_height ||
            p.out_width() != s.in_width) {
          throw ConfigurationError("layer " + std::to_string(l) + " does not chain from layer " +
                                   std::to_string(l - 1));
        }
      }
    }
    reset_state();
  }

  std::size_t size() const noexcept { return layers_.size(); }
  const Layer<T>& layer(std::size_t l) const { return layers_.at(l); }
  Layer<T>& layer(std::size_t l) { return layers_.at(l); }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

  std::vector<T>& voltage(std::size_t l) { return voltage_.at(l); }
  const std::vector<T>& voltage(std::size_t l) const { return voltage_.at(l); }

  // Neuron state is cleared only between sequences.
  void reset_state() {
    voltage_.clear();
    for (const auto& layer : layers_) voltage_.emplace_back(layer.spec.neuron_count(), T{0});
  }

  std::array<int, 3> input_shape() const {
    const auto& s = layers_.front().spec;
    return {s.in_channels, s.in_height, s.in_width};
  }
  std::array<int, 3> output_shape() const {
    const auto& s = layers_.back().spec;
    return {s.out_channels, s.out_height(), s.out_width()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.spec.weight_count();
    return n;
  }

 private:
  std::vector<Layer<T>> layers_;
  std::vector<std::vector<T>> voltage_;
};

inline Layer<double> make_float_layer(const LayerSpec& spec, std::vector<double> weights = {}) {
  if (weights.empty()) weights.assign(spec.weight_count(), 0.0);
  return {spec, std::move(weights),
          NeuronParams<double>{spec.threshold, -kVMinFactor * spec.threshold, spec.fire_rule}};
}

namespace detail {

// Output positions o in [lo, hi] whose kernel window covers input index i.
inline std::pair<int, int> covering_outputs(int i, int out_size, int kernel, int stride, int padding) {
  // o * stride - padding <= i <= o * stride - padding + kernel - 1
  const int num_hi = i + padding;
  const int num_lo = i + padding - kernel + 1;
  int hi = num_hi >= 0 ? num_hi / stride : -1;
  int lo = num_lo <= 0 ? 0 : (num_lo + stride - 1) / stride;
  hi = std::min(hi, out_size - 1);
  return {lo, hi};
}

template <NeuronValue T>
T saturate_input(std::conditional_t<std::is_floating_point_v<T>, double, std::int64_t> acc) {
  if constexpr (std::is_floating_point_v<T>) {
    return acc;
  } else {
    return static_cast<T>(std::clamp<std::int64_t>(acc, std::numeric_limits<std::int32_t>::min(),
                                                   std::numeric_limits<std::int32_t>::max()));
  }
}

}  // namespace detail

// Number of output neurons reached by one input neuron along one axis.
inline int fanout_1d(int i, int out_size, int kernel, int stride, int padding) {
  const auto [lo, hi] = detail::covering_outputs(i, out_size, kernel, stride, padding);
  return hi >= lo ? hi - lo + 1 : 0;
}

struct ForwardResult {
  std::vector<SpikeTensor> spikes;  // one tensor per layer

  const SpikeTensor& output() const { return spikes.back(); }
};

namespace detail {

template <NeuronValue T>
SpikeTensor forward_layer_off_chip(const Layer<T>& layer, std::vector<T>& v, const SpikeTensor& in) {
  using Acc = std::conditional_t<std::is_floating_point_v<T>, double, std::int64_t>;
  const auto& s = layer.spec;
  const int ch = s.conv_height();
  const int cw = s.conv_width();
  std::vector<Acc> acc(s.neuron_count(), Acc{0});

  for (int ci = 0; ci < s.in_channels; ++ci) {
    for (int iy = 0; iy < s.in_height; ++iy) {
      const auto [oy_lo, oy_hi] = covering_outputs(iy, ch, s.kernel, s.stride, s.padding);
      for (int ix = 0; ix < s.in_width; ++ix) {
        const std::uint32_t n = in(ci, iy, ix);
        if (n == 0) continue;
        const auto [ox_lo, ox_hi] = covering_outputs(ix, cw, s.kernel, s.stride, s.padding);
        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
          const int ky = iy + s.padding - oy * s.stride;
          for (int ox = ox_lo; ox <= ox_hi; ++ox) {
            const int kx = ix + s.padding - ox * s.stride;
            for (int co = 0; co < s.out_channels; ++co) {
              acc[(static_cast<std::size_t>(co) * ch + oy) * cw + ox] +=
                  static_cast<Acc>(n) * static_cast<Acc>(layer.weights[s.weight_index(co, ci, ky, kx)]);
            }
          }
        }
      }
    }
  }

  SpikeTensor out(s.out_channels, s.out_height(), s.out_width());
  for (int co = 0; co < s.out_channels; ++co) {
    for (int oy = 0; oy < ch; ++oy) {
      for (int ox = 0; ox < cw; ++ox) {
        const std::size_t k = (static_cast<std::size_t>(co) * ch + oy) * cw + ox;
        const auto r = if_step<T>(v[k], saturate_input<T>(acc[k]), SpikeMode::off_chip, layer.neuron);
        v[k] = r.voltage;
        if (r.spikes != 0) out(co, oy / s.pool, ox / s.pool) += r.spikes;
      }
    }
  }
  return out;
}

// Event-driven update: every input spike is a separate neuron update.
// Returns the emitted output events (flat output indices) in order.
template <NeuronValue T>
void propagate_spike(const Layer<T>& layer, std::vector<T>& v, int ci, int iy, int ix,
                     std::vector<std::uint32_t>& emitted) {
  const auto& s = layer.spec;
  const int ch = s.conv_height();
  const int cw = s.conv_width();
  const int oh = s.out_height();
  const int ow = s.out_width();
  const auto [oy_lo, oy_hi] = covering_outputs(iy, ch, s.kernel, s.stride, s.padding);
  const auto [ox_lo, ox_hi] = covering_outputs(ix, cw, s.kernel, s.stride, s.padding);
  for (int oy = oy_lo; oy <= oy_hi; ++oy) {
    const int ky = iy + s.padding - oy * s.stride;
    for (int ox = ox_lo; ox <= ox_hi; ++ox) {
      const int kx = ix + s.padding - ox * s.stride;
      for (int co = 0; co < s.out_channels; ++co) {
        const std::size_t k = (static_cast<std::size_t>(co) * ch + oy) * cw + ox;
        const auto r = if_step<T>(v[k], layer.weights[s.weight_index(co, ci, ky, kx)],
                                  SpikeMode::on_chip, layer.neuron);
        v[k] = r.voltage;
        if (r.spikes != 0) {
          emitted.push_back(static_cast<std::uint32_t>(
              (static_cast<std::size_t>(co) * oh + oy / s.pool) * ow + ox / s.pool));
        }
      }
    }
  }
}

}  // namespace detail

// Runs one window through every layer. Off-chip: one aggregated update per
// neuron. On-chip: one update per incoming spike; input spikes are issued in
// raster (c, y, x) order with repeats, and each layer consumes the previous
// layer's spikes in emission order.
template <NeuronValue T>
ForwardResult forward_window(Network<T>& net, const SpikeTensor& input, SpikeMode mode) {
  const auto shape = net.input_shape();
  if (input.channels() != shape[0] || input.height() != shape[1] || input.width() != shape[2]) {
    throw ConfigurationError("input shape does not match the network");
  }
  ForwardResult result;
  result.spikes.reserve(net.size());

  if (mode == SpikeMode::off_chip) {
    const SpikeTensor* in = &input;
    for (std::size_t l = 0; l < net.size(); ++l) {
      result.spikes.push_back(detail::forward_layer_off_chip(net.layer(l), net.voltage(l), *in));
      in = &result.spikes.back();
    }
    return result;
  }

  std::vector<std::uint32_t> events;
  for (std::size_t i = 0; i < input.size(); ++i) events.insert(events.end(), input[i], static_cast<std::uint32_t>(i));
  std::vector<std::uint32_t> next;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const auto& layer = net.layer(l);
    const auto& s = layer.spec;
    next.clear();
    for (const std::uint32_t e : events) {
      const int ix = static_cast<int>(e % static_cast<std::uint32_t>(s.in_width));
      const int iy = static_cast<int>((e / static_cast<std::uint32_t>(s.in_width)) % static_cast<std::uint32_t>(s.in_height));
      const int ci = static_cast<int>(e / static_cast<std::uint32_t>(s.in_width * s.in_height));
      detail::propagate_spike(layer, net.voltage(l), ci, iy, ix, next);
    }
    SpikeTensor out(s.out_channels, s.out_height(), s.out_width());
    for (const std::uint32_t o : next) ++out[o];
    result.spikes.push_back(std::move(out));
    std::swap(events, next);
  }
  return result;
}

// Pushes a single input spike through the whole network (on-chip semantics)
// and returns the output-layer events it caused, as flat indices.
template <NeuronValue T>
std::vector<std::uint32_t> propagate_event(Network<T>& net, int c, int y, int x) {
  std::vector<std::uint32_t> events{static_cast<std::uint32_t>(
      (static_cast<std::size_t>(c) * net.input_shape()[1] + y) * net.input_shape()[2] + x)};
  std::vector<std::uint32_t> next;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const auto& s = net.layer(l).spec;
    next.clear();
    for (const std::uint32_t e : events) {
      const int ix = static_cast<int>(e % static_cast<std::uint32_t>(s.in_width));
      const int iy = static_cast<int>((e / static_cast<std::uint32_t>(s.in_width)) % static_cast<std::uint32_t>(s.in_height));
      const int ci = static_cast<int>(e / static_cast<std::uint32_t>(s.in_width * s.in_height));
      detail::propagate_spike(net.layer(l), net.voltage(l), ci, iy, ix, next);
    }
    std::swap(events, next);
  }
  return events;
}

// ---------------------------------------------------------------------------
// Synaptic operations.

// Total synaptic operations triggered in `spec` by the previous layer's
// spikes: each spike costs one operation per connected output neuron.
inline std::uint64_t synaptic_operations(const SpikeTensor& prev, const LayerSpec& spec) {
  if (prev.channels() != spec.in_channels || prev.height() != spec.in_height ||
      prev.width() != spec.in_width) {
    throw ConfigurationError("spike tensor does not match layer input");
  }
  std::vector<int> fy(static_cast<std::size_t>(spec.in_height));
  std::vector<int> fx(static_cast<std::size_t>(spec.in_width));
  for (int i = 0; i < spec.in_height; ++i) {
    fy[static_cast<std::size_t>(i)] = fanout_1d(i, spec.conv_height(), spec.kernel, spec.stride, spec.padding);
  }
  for (int i = 0; i < spec.in_width; ++i) {
    fx[static_cast<std::size_t>(i)] = fanout_1d(i, spec.conv_width(), spec.kernel, spec.stride, spec.padding);
  }
  std::uint64_t total = 0;
  for (int c = 0; c < spec.in_channels; ++c) {
    for (int y = 0; y < spec.in_height; ++y) {
      for (int x = 0; x < spec.in_width; ++x) {
        const std::uint32_t n = prev(c, y, x);
        if (n != 0) {
          total += std::uint64_t{n} * static_cast<std::uint64_t>(fy[static_cast<std::size_t>(y)]) *
                   static_cast<std::uint64_t>(fx[static_cast<std::size_t>(x)]) *
                   static_cast<std::uint64_t>(spec.out_channels);
        }
      }
    }
  }
  return total;
}

// SOPs per second for one window of length dt_s.
inline double sop_count(const SpikeTensor& prev, const LayerSpec& spec, double dt_s) {
  if (!(dt_s > 0.0)) throw ValidationError("dt must be positive");
  return static_cast<double>(synaptic_operations(prev, spec)) / dt_s;
}

// Per-core bandwidth: 100M SOPs/s for the sensor-facing core, 30M otherwise.
inline double bandwidth_limit(std::size_t layer_index) {
  return layer_index == 0 ? 100e6 : 30e6;
}

// Percentage of neurons that stayed silent.
inline double sparsity_percent(const SpikeTensor& spikes) {
  if (spikes.size() == 0) return 100.0;
  return 100.0 * static_cast<double>(spikes.size() - spikes.nonzero()) / static_cast<double>(spikes.size());
}

// ---------------------------------------------------------------------------
// Network builders.

inline constexpr std::array<int, 8> kReferenceChannels{2, 4, 12, 18, 27, 40, 60, 15};

inline std::vector<LayerSpec> reference_layer_specs() {
  std::vector<LayerSpec> specs;
  int size = 128;
  for (std::size_t l = 0; l + 1 < kReferenceChannels.size(); ++l) {
    LayerSpec s;
    s.in_channels = kReferenceChannels[l];
    s.out_channels = kReferenceChannels[l + 1];
    s.in_height = s.in_width = size;
    specs.push_back(s);
    size = s.out_height();
  }
  return specs;
}

// Seven 3x3 stride-2 layers, 2x128x128 -> 15x1x1, zero weights.
inline Network<double> build_reference_network() {
  std::vector<Layer<double>> layers;
  for (const auto& s : reference_layer_specs()) layers.push_back(make_float_layer(s));
  return Network<double>(std::move(layers));
}

// Uniform weights in [-max_abs, max_abs], projected below threshold.
inline void randomize_weights(Network<double>& net, std::uint64_t seed, double max_abs) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-max_abs, max_abs);
  for (std::size_t l = 0; l < net.size(); ++l) {
    auto& layer = net.layer(l);
    for (double& w : layer.weights) w = dist(rng);
    project_weights_inplace(layer.weights, layer.spec.threshold);
  }
}

// Hand-crafted two-layer pooling network: 4x4/4 sum pooling of both
// polarities (128 -> 32), then 15 stripe detectors over the 32x32 map:
// outputs 0-7 are vertical stripes (columns), 8-14 horizontal stripes (rows).
inline Network<double> build_stripe_pooling_network(double pool_weight = 0.25, double stripe_weight = 0.25) {
  LayerSpec pool;
  pool.in_channels = 2;
  pool.out_channels = 1;
  pool.in_height = pool.in_width = 128;
  pool.kernel = 4;
  pool.stride = 4;
  pool.padding = 0;

  LayerSpec stripes;
  stripes.in_channels = 1;
  stripes.out_channels = 15;
  stripes.in_height = stripes.in_width = 32;
  stripes.kernel = 32;
  stripes.stride = 1;
  stripes.padding = 0;

  std::vector<double> w1(pool.weight_count(), pool_weight);
  std::vector<double> w2(stripes.weight_count(), 0.0);
  for (int ky = 0; ky < 32; ++ky) {
    for (int kx = 0; kx < 32; ++kx) {
      w2[stripes.weight_index(kx / 4, 0, ky, kx)] = stripe_weight;
      w2[stripes.weight_index(8 + ky * 7 / 32, 0, ky, kx)] = stripe_weight;
    }
  }
  std::vector<Layer<double>> layers{make_float_layer(pool, std::move(w1)),
                                    make_float_layer(stripes, std::move(w2))};
  return Network<double>(std::move(layers));
}

// ---------------------------------------------------------------------------
// Post-training quantization.

struct QuantizedNetwork {
  std::vector<LayerSpec> specs;
  std::vector<QuantizedLayer> layers;

  bool operator==(const QuantizedNetwork&) const = default;
};

inline QuantizedNetwork quantize_network(const Network<double>& net) {
  QuantizedNetwork q;
  for (const auto& layer : net.layers()) {
    q.specs.push_back(layer.spec);
    q.layers.push_back(quantize(layer.weights));
  }
  return q;
}

inline Network<double> dequantize_network(const QuantizedNetwork& q) {
  std::vector<Layer<double>> layers;
  for (std::size_t l = 0; l < q.specs.size(); ++l) {
    layers.push_back(make_float_layer(q.specs[l], dequantize(q.layers.at(l))));
  }
  return Network<double>(std::move(layers));
}

// Integer network: 8-bit weights, integer thresholds, 16-bit state.
inline Network<std::int32_t> to_fixed_point(const QuantizedNetwork& q) {
  if (q.specs.size() != q.layers.size()) throw ConfigurationError("spec/weight layer count mismatch");
  std::vector<Layer<std::int32_t>> layers;
  for (std::size_t l = 0; l < q.specs.size(); ++l) {
    const auto& s = q.specs[l];
    const auto& ql = q.layers[l];
    Layer<std::int32_t> layer{s, std::vector<std::int32_t>(ql.weights.begin(), ql.weights.end()),
                              fixed_point_neuron(s.threshold, ql.scale, s.fire_rule)};
    layers.push_back(std::move(layer));
  }
  return Network<std::int32_t>(std::move(layers));
}

}  // namespace pupiltrack
