#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pupiltrack/errors.hpp"

namespace pupiltrack {

inline constexpr int kDecoderInputs = 15;
inline constexpr int kGateInputs = 2 * kDecoderInputs;

using DecoderInput = std::array<double, kDecoderInputs>;
using Point2 = std::array<double, 2>;

// Pixel coordinates are normalized coordinates times this factor.
inline constexpr double kPixelScale = 128.0;

enum class UncertaintyVariant { none, shared, per_axis };
enum class DecoderKind { gated, direct };

inline int uncertainty_dim(UncertaintyVariant v) {
  switch (v) {
    case UncertaintyVariant::none: return 0;
    case UncertaintyVariant::shared: return 1;
    case UncertaintyVariant::per_axis: return 2;
  }
  return 0;
}

inline const char* to_string(UncertaintyVariant v) {
  switch (v) {
    case UncertaintyVariant::none: return "none";
    case UncertaintyVariant::shared: return "shared";
    case UncertaintyVariant::per_axis: return "per-axis";
  }
  return "?";
}

inline UncertaintyVariant parse_variant(std::string_view s) {
  if (s == "none") return UncertaintyVariant::none;
  if (s == "shared") return UncertaintyVariant::shared;
  if (s == "per-axis" || s == "per_axis") return UncertaintyVariant::per_axis;
  throw ValidationError("unknown uncertainty variant '" + std::string(s) + "'");
}

inline const char* to_string(DecoderKind k) { return k == DecoderKind::gated ? "gated" : "direct"; }

inline DecoderKind parse_kind(std::string_view s) {
  if (s == "gated") return DecoderKind::gated;
  if (s == "direct") return DecoderKind::direct;
  throw ValidationError("unknown decoder kind '" + std::string(s) + "'");
}

// Gate (15x30 over [x, h]), position head (2x15) and log-variance head
// (0, 1 or 2 rows of 15). Matrices are row-major.
struct DecoderParams {
  DecoderKind kind = DecoderKind::gated;
  UncertaintyVariant variant = UncertaintyVariant::shared;
  std::array<double, kDecoderInputs * kGateInputs> w_gate{};
  std::array<double, kDecoderInputs> b_gate{};
  std::array<double, 2 * kDecoderInputs> w_xy{};
  Point2 b_xy{};
  std::array<double, 2 * kDecoderInputs> w_u{};
  Point2 b_u{};

  int u_dim() const { return uncertainty_dim(variant); }

  // Visits (name, values, rows, cols) in file/flattening order.
  template <class Self, class Fn>
  static void visit_blocks(Self& self, Fn&& fn) {
    const auto u = static_cast<std::size_t>(self.u_dim());
    fn("W_g", std::span(self.w_gate), kDecoderInputs, kGateInputs);
    fn("b_g", std::span(self.b_gate), kDecoderInputs, 1);
    fn("W_xy", std::span(self.w_xy), 2, kDecoderInputs);
    fn("b_xy", std::span(self.b_xy), 2, 1);
    if (u > 0) {
      fn("W_u", std::span(self.w_u).first(u * kDecoderInputs), static_cast<int>(u), kDecoderInputs);
      fn("b_u", std::span(self.b_u).first(u), static_cast<int>(u), 1);
    }
  }
  template <class Fn> void for_each_block(Fn&& fn) { visit_blocks(*this, fn); }
  template <class Fn> void for_each_block(Fn&& fn) const { visit_blocks(*this, fn); }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for_each_block([&](const char*, auto values, int, int) { out.insert(out.end(), values.begin(), values.end()); });
    return out;
  }

  void unflatten(std::span<const double> flat) {
    std::size_t offset = 0;
    for_each_block([&](const char*, auto values, int, int) {
      if (offset + values.size() > flat.size()) throw ValidationError("parameter vector too short");
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), values.size(), values.begin());
      offset += values.size();
    });
    if (offset != flat.size()) throw ValidationError("parameter vector too long");
  }

  void validate() const {
    for_each_block([](const char* name, auto values, int, int) {
      for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite decoder parameter in ") + name);
      }
    });
  }

  bool operator==(const DecoderParams&) const = default;
};

struct DecoderState {
  DecoderInput h{};
};

struct Prediction {
  Point2 xy{};  // normalized, in (0, 1)
  Point2 u{};   // log-variances; entries beyond the variant's dim are 0
  UncertaintyVariant variant = UncertaintyVariant::none;

  bool has_uncertainty() const { return variant != UncertaintyVariant::none; }
  double log_variance(int axis) const {
    switch (variant) {
      case UncertaintyVariant::none: return 0.0;
      case UncertaintyVariant::shared: return u[0];
      case UncertaintyVariant::per_axis: return u[static_cast<std::size_t>(axis)];
    }
    return 0.0;
  }
  // Standard deviation in normalized units.
  double sigma(int axis) const { return std::exp(0.5 * log_variance(axis)); }
};

// Floating-point operation tally of one decode step (multiply-accumulate = 2).
struct OpCounter {
  std::uint64_t ops = 0;
  void add(std::uint64_t n) { ops += n; }
};

namespace detail {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Intermediates of one step, kept for backpropagation.
struct StepTrace {
  DecoderInput x{};
  DecoderInput h_prev{};
  DecoderInput g{};
  DecoderInput h{};
  DecoderInput n{};
  double range = 0.0;
  int i_min = 0;
  int i_max = 0;
  bool tie = false;
  Point2 y_hat{};
  Point2 u{};
};

inline StepTrace forward_step(const DecoderParams& p, const DecoderInput& h_prev, const DecoderInput& x,
                              OpCounter* ops = nullptr) {
  StepTrace t;
  t.x = x;
  t.h_prev = h_prev;
  if (p.kind == DecoderKind::gated) {
    for (int i = 0; i < kDecoderInputs; ++i) {
      const double* row = &p.w_gate[static_cast<std::size_t>(i) * kGateInputs];
      double a = p.b_gate[static_cast<std::size_t>(i)];
      for (int j = 0; j < kDecoderInputs; ++j) a += row[j] * x[static_cast<std::size_t>(j)];
      for (int j = 0; j < kDecoderInputs; ++j) a += row[kDecoderInputs + j] * h_prev[static_cast<std::size_t>(j)];
      const auto k = static_cast<std::size_t>(i);
      t.g[k] = sigmoid(a);
      t.h[k] = t.g[k] * x[k] + (1.0 - t.g[k]) * h_prev[k];
    }
    if (ops) ops->add(2 * kDecoderInputs * kGateInputs + kDecoderInputs /*bias*/ + kDecoderInputs /*sigmoid*/ +
                      4 * kDecoderInputs /*blend*/);
  } else {
    t.g.fill(1.0);
    t.h = x;
  }

  // Min-max normalization; first index wins ties.
  int i_min = 0;
  int i_max = 0;
  for (int i = 1; i < kDecoderInputs; ++i) {
    if (t.h[static_cast<std::size_t>(i)] < t.h[static_cast<std::size_t>(i_min)]) i_min = i;
    if (t.h[static_cast<std::size_t>(i)] > t.h[static_cast<std::size_t>(i_max)]) i_max = i;
  }
  t.i_min = i_min;
  t.i_max = i_max;
  const double lo = t.h[static_cast<std::size_t>(i_min)];
  const double hi = t.h[static_cast<std::size_t>(i_max)];
  t.range = hi - lo;
  if (t.range > 0.0) {
    int at_min = 0;
    int at_max = 0;
    for (int i = 0; i < kDecoderInputs; ++i) {
      const double v = t.h[static_cast<std::size_t>(i)];
      at_min += (v == lo);
      at_max += (v == hi);
      t.n[static_cast<std::size_t>(i)] = (v - lo) / t.range;
    }
    t.tie = at_min > 1 || at_max > 1;
  } else {
    t.n.fill(0.0);
  }
  if (ops) ops->add(2 * (kDecoderInputs - 1) /*compare*/ + 1 /*range*/ + 2 * kDecoderInputs /*sub, div*/);

  for (int k = 0; k < 2; ++k) {
    double a = p.b_xy[static_cast<std::size_t>(k)];
    for (int i = 0; i < kDecoderInputs; ++i) {
      a += p.w_xy[static_cast<std::size_t>(k * kDecoderInputs + i)] * t.n[static_cast<std::size_t>(i)];
    }
    t.y_hat[static_cast<std::size_t>(k)] = sigmoid(a);
  }
  if (ops) ops->add(2 * (2 * kDecoderInputs + 1 + 1));

  const int ud = p.u_dim();
  for (int k = 0; k < ud; ++k) {
    double a = p.b_u[static_cast<std::size_t>(k)];
    for (int i = 0; i < kDecoderInputs; ++i) {
      a += p.w_u[static_cast<std::size_t>(k * kDecoderInputs + i)] * t.n[static_cast<std::size_t>(i)];
    }
    t.u[static_cast<std::size_t>(k)] = a;
  }
  if (ops) ops->add(static_cast<std::uint64_t>(ud) * (2 * kDecoderInputs + 1));
  return t;
}

inline Prediction to_prediction(const StepTrace& t, UncertaintyVariant v) {
  return Prediction{t.y_hat, t.u, v};
}

}  // namespace detail

struct StepOutput {
  Prediction prediction;
  DecoderState state;
};

// g = sigmoid(W_g [x, h] + b_g); h' = g*x + (1-g)*h; h_norm = minmax(h')
// (all zeros when h' is constant); xy = sigmoid(W_xy h_norm + b_xy);
// u = W_u h_norm + b_u. A direct decoder uses h' = x.
inline StepOutput decode_step(const DecoderParams& params, const DecoderState& state, const DecoderInput& x,
                              OpCounter* ops = nullptr) {
  params.validate();
  for (double v : x) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("decoder input must be finite and non-negative");
  }
  const auto t = detail::forward_step(params, state.h, x, ops);
  return {detail::to_prediction(t, params.variant), DecoderState{t.h}};
}

// Stateless decoding straight from the spike counts.
inline Prediction direct_decode_baseline(const DecoderParams& params, const DecoderInput& x) {
  DecoderParams direct = params;
  direct.kind = DecoderKind::direct;
  return decode_step(direct, DecoderState{}, x).prediction;
}

// ---------------------------------------------------------------------------
// Losses.

// 1/2 exp(-u) |y - y_hat|^2 + 1/2 u. Shared: one u on the summed squared
// error. Per-axis: one term per coordinate. None: u = 0.
inline double tracking_loss(const Prediction& pred, const Point2& truth, UncertaintyVariant variant) {
  const double ex = truth[0] - pred.xy[0];
  const double ey = truth[1] - pred.xy[1];
  switch (variant) {
    case UncertaintyVariant::none:
      return 0.5 * (ex * ex + ey * ey);
    case UncertaintyVariant::shared:
      return 0.5 * std::exp(-pred.u[0]) * (ex * ex + ey * ey) + 0.5 * pred.u[0];
    case UncertaintyVariant::per_axis:
      return 0.5 * std::exp(-pred.u[0]) * ex * ex + 0.5 * pred.u[0] + 0.5 * std::exp(-pred.u[1]) * ey * ey +
             0.5 * pred.u[1];
  }
  return 0.0;
}

// Relative excess of a over b: max(0, a - b) / b.
inline double kappa(double a, double b) {
  if (!(b > 0.0)) throw ValidationError("kappa threshold must be positive");
  return std::max(0.0, a - b) / b;
}

struct RegThresholds {
  double sops = 20e6;
  double output_rate = 83.3e3;
};

// Sum of kappa over layers 2..L-1 (indices 1..L-2 of `sops_per_layer`) plus
// kappa on the output spike rate. The first layer is not regularized.
inline double reg_loss(std::span<const double> sops_per_layer, double output_rate, const RegThresholds& th = {}) {
  double total = kappa(output_rate, th.output_rate);
  for (std::size_t l = 1; l + 1 < sops_per_layer.size(); ++l) total += kappa(sops_per_layer[l], th.sops);
  return total;
}

inline constexpr double kDefaultBeta = 100.0;

inline double total_loss(double track, double reg, double beta = kDefaultBeta) {
  if (!(beta >= 0.0)) throw ValidationError("beta must be non-negative");
  return track + beta * reg;
}

// ---------------------------------------------------------------------------
// Backpropagation through time.

struct GradientResult {
  DecoderParams grad;
  double loss = 0.0;          // summed tracking loss
  DecoderState final_state;   // hidden state after the last step
  bool tie = false;           // a min/max tie was resolved by first index
};

inline GradientResult decoder_backward(const DecoderParams& p, const DecoderState& initial,
                                       std::span<const DecoderInput> inputs, std::span<const Point2> truths) {
  if (inputs.size() != truths.size()) throw ValidationError("inputs and truths differ in length");
  GradientResult r;
  r.grad.kind = p.kind;
  r.grad.variant = p.variant;
  r.final_state = initial;
  const std::size_t T = inputs.size();
  if (T == 0) return r;

  std::vector<detail::StepTrace> trace;
  trace.reserve(T);
  DecoderInput h = initial.h;
  for (std::size_t t = 0; t < T; ++t) {
    trace.push_back(detail::forward_step(p, h, inputs[t]));
    h = trace.back().h;
    r.loss += tracking_loss(detail::to_prediction(trace.back(), p.variant), truths[t], p.variant);
    r.tie = r.tie || trace.back().tie;
  }
  r.final_state.h = h;

  auto& g = r.grad;
  const int ud = p.u_dim();
  DecoderInput dh_next{};
  for (std::size_t step = T; step-- > 0;) {
    const auto& s = trace[step];
    const auto& y = truths[step];

    // Loss -> position logits and log-variances.
    Point2 d_logit{};
    Point2 d_u{};
    const Point2 err{y[0] - s.y_hat[0], y[1] - s.y_hat[1]};
    for (std::size_t k = 0; k < 2; ++k) {
      double precision = 1.0;
      if (p.variant == UncertaintyVariant::shared) precision = std::exp(-s.u[0]);
      if (p.variant == UncertaintyVariant::per_axis) precision = std::exp(-s.u[k]);
      d_logit[k] = -precision * err[k] * s.y_hat[k] * (1.0 - s.y_hat[k]);
    }
    if (p.variant == UncertaintyVariant::shared) {
      d_u[0] = 0.5 - 0.5 * std::exp(-s.u[0]) * (err[0] * err[0] + err[1] * err[1]);
    } else if (p.variant == UncertaintyVariant::per_axis) {
      for (std::size_t k = 0; k < 2; ++k) d_u[k] = 0.5 - 0.5 * std::exp(-s.u[k]) * err[k] * err[k];
    }

    DecoderInput dn{};
    for (std::size_t k = 0; k < 2; ++k) {
      g.b_xy[k] += d_logit[k];
      for (std::size_t i = 0; i < kDecoderInputs; ++i) {
        g.w_xy[k * kDecoderInputs + i] += d_logit[k] * s.n[i];
        dn[i] += p.w_xy[k * kDecoderInputs + i] * d_logit[k];
      }
    }
    for (std::size_t k = 0; k < static_cast<std::size_t>(ud); ++k) {
      g.b_u[k] += d_u[k];
      for (std::size_t i = 0; i < kDecoderInputs; ++i) {
        g.w_u[k * kDecoderInputs + i] += d_u[k] * s.n[i];
        dn[i] += p.w_u[k * kDecoderInputs + i] * d_u[k];
      }
    }

    // Min-max normalization: n_i = (h_i - m) / (M - m).
    DecoderInput dh = dh_next;
    if (s.range > 0.0) {
      double d_max = 0.0;
      double d_min = 0.0;
      for (std::size_t i = 0; i < kDecoderInputs; ++i) {
        dh[i] += dn[i] / s.range;
        d_max -= dn[i] * s.n[i] / s.range;
        d_min += dn[i] * (s.n[i] - 1.0) / s.range;
      }
      dh[static_cast<std::size_t>(s.i_max)] += d_max;
      dh[static_cast<std::size_t>(s.i_min)] += d_min;
    }

    dh_next.fill(0.0);
    if (p.kind == DecoderKind::gated) {
      for (std::size_t i = 0; i < kDecoderInputs; ++i) {
        const double dg = dh[i] * (s.x[i] - s.h_prev[i]);
        const double da = dg * s.g[i] * (1.0 - s.g[i]);
        dh_next[i] += dh[i] * (1.0 - s.g[i]);
        g.b_gate[i] += da;
        double* grow = &g.w_gate[i * kGateInputs];
        const double* prow = &p.w_gate[i * kGateInputs];
        for (std::size_t j = 0; j < kDecoderInputs; ++j) {
          grow[j] += da * s.x[j];
          grow[kDecoderInputs + j] += da * s.h_prev[j];
          dh_next[j] += prow[kDecoderInputs + j] * da;
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training.

struct SequenceSample {
  std::vector<DecoderInput> inputs;
  std::vector<Point2> truths;  // normalized coordinates
};

struct TrainOptions {
  DecoderKind kind = DecoderKind::gated;
  UncertaintyVariant variant = UncertaintyVariant::shared;
  int epochs = 100;
  double lr = 1e-2;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t chunk_length = 50;  // truncated BPTT span; state carries over
  std::uint64_t seed = 0;
  double init_scale = 0.1;
};

struct TrainResult {
  DecoderParams params;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // mean per-step loss while training
};

inline DecoderParams init_decoder(DecoderKind kind, UncertaintyVariant variant, std::uint64_t seed,
                                  double scale = 0.1) {
  DecoderParams p;
  p.kind = kind;
  p.variant = variant;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& w : p.w_gate) w = normal(rng);
  for (double& w : p.w_xy) w = normal(rng);
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.u_dim()) * kDecoderInputs; ++i) p.w_u[i] = normal(rng);
  return p;
}

// Mean per-step tracking loss; each sequence starts from h = 0.
inline double evaluate_loss(const DecoderParams& p, std::span<const SequenceSample> dataset) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& seq : dataset) {
    const auto r = decoder_backward(p, DecoderState{}, seq.inputs, seq.truths);
    total += r.loss;
    steps += seq.inputs.size();
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

// Decoupled-weight-decay Adam over truncated-BPTT chunks, visiting
// sequences and chunks in order. Deterministic for a fixed seed.
inline TrainResult train_decoder(std::span<const SequenceSample> dataset, const TrainOptions& opt,
                                 std::optional<DecoderParams> start = std::nullopt) {
  if (dataset.empty()) throw ValidationError("empty training dataset");
  for (const auto& seq : dataset) {
    if (seq.inputs.size() != seq.truths.size()) throw ValidationError("sequence length mismatch");
  }
  if (opt.epochs < 0 || opt.lr < 0.0 || opt.chunk_length == 0) throw ValidationError("invalid training options");

  TrainResult result;
  result.params = start ? *start : init_decoder(opt.kind, opt.variant, opt.seed, opt.init_scale);
  result.params.kind = opt.kind;
  result.params.variant = opt.variant;
  result.initial_loss = evaluate_loss(result.params, dataset);

  std::vector<double> theta = result.params.flatten();
  std::vector<double> m(theta.size(), 0.0);
  std::vector<double> v(theta.size(), 0.0);
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_steps = 0;
    for (const auto& seq : dataset) {
      DecoderState state;
      for (std::size_t begin = 0; begin < seq.inputs.size(); begin += opt.chunk_length) {
        const std::size_t len = std::min(opt.chunk_length, seq.inputs.size() - begin);
        const auto r = decoder_backward(result.params, state,
                                        std::span(seq.inputs).subspan(begin, len),
                                        std::span(seq.truths).subspan(begin, len));
        state = r.final_state;
        loss_sum += r.loss;
        loss_steps += len;

        const auto grad = r.grad.flatten();
        ++step;
        const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double gi = grad[i] / static_cast<double>(len);
          m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
          v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
          theta[i] -= opt.lr * opt.weight_decay * theta[i];
          theta[i] -= opt.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
        }
        result.params.unflatten(theta);
      }
    }
    result.epoch_loss.push_back(loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0);
  }
  return result;
}

// Runs a decoder over a sequence from h = 0.
inline std::vector<Prediction> decode_sequence(const DecoderParams& p, std::span<const DecoderInput> inputs) {
  std::vector<Prediction> out;
  out.reserve(inputs.size());
  DecoderState state;
  for (const auto& x : inputs) {
    auto step = decode_step(p, state, x);
    out.push_back(step.prediction);
    state = step.state;
  }
  return out;
}

}  // namespace pupiltrack
