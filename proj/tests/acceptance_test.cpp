// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pupiltrack/pupiltrack.hpp"

using namespace pupiltrack;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

bool run(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.pass && secs > limit_s) {
    o.pass = false;
    o.detail = "took longer than " + std::to_string(limit_s) + " s";
  }
  std::printf("[%s] %2d %s (%.2f s)%s%s\n", o.pass ? "PASS" : "FAIL", id, name, secs,
              o.detail.empty() ? "" : ": ", o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

Outcome architecture() {
  Outcome o;
  const auto net = build_reference_network();
  o.require(net.parameter_count() == 46242, "parameter count " + std::to_string(net.parameter_count()));
  int size = 128;
  o.require(net.input_shape()[1] == 128 && net.input_shape()[2] == 128, "input is not 128x128");
  for (std::size_t l = 0; l < net.size(); ++l) {
    size /= 2;
    const auto& s = net.layer(l).spec;
    o.require(s.out_height() == size && s.out_width() == size, "layer " + std::to_string(l) + " breaks the chain");
  }
  o.require(size == 1 && net.output_shape()[0] == 15, "chain does not end at [15, 1, 1]");
  return o;
}

Outcome if_semantics() {
  Outcome o;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> th(0.1, 4.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int i = 0; i < 100000; ++i) {
    const double v_th = th(rng);
    const NeuronParams<double> p{v_th, -kVMinFactor * v_th, FireRule::above};
    const double v = (unit(rng) * 5.5 - 4.5) * v_th;  // [-10, 1] v_th
    const double x = unit(rng) * 6.0 * v_th;
    const double clipped = std::max(p.v_min, v + x);
    const auto on = if_step(v, x, SpikeMode::on_chip, p);
    const auto off = if_step(v, x, SpikeMode::off_chip, p);
    o.require(on.voltage >= p.v_min && off.voltage >= p.v_min, "voltage floor violated");
    o.require(on.voltage == clipped - on.spikes * v_th, "on-chip soft reset");
    o.require(off.voltage == clipped - off.spikes * v_th, "off-chip soft reset");
    o.require(on.spikes <= 1, "on-chip emitted more than one spike");
    const auto want = clipped > v_th ? static_cast<std::uint32_t>(std::floor(clipped / v_th)) : 0u;
    o.require(off.spikes == want, "off-chip count differs from floor(v / v_th)");

    // A single event through a projected weight: at most one spike either way.
    std::vector<double> w{unit(rng) * 3.0 * v_th};
    project_weights_inplace(w, v_th);
    o.require(if_step(v, w[0], SpikeMode::on_chip, p) == if_step(v, w[0], SpikeMode::off_chip, p),
              "one-event on/off-chip mismatch");
  }

  // The same holds for a whole layer hit by one event.
  for (int trial = 0; trial < 200; ++trial) {
    LayerSpec s;
    s.in_channels = 2;
    s.out_channels = 3;
    s.in_height = s.in_width = 8;
    auto layer = make_float_layer(s);
    for (auto& w : layer.weights) w = unit(rng) * 2.0;
    project_weights_inplace(layer.weights);
    Network<double> a({layer});
    for (auto& v : a.voltage(0)) v = unit(rng) * 5.5 - 4.5;
    Network<double> b = a;
    SpikeTensor in(2, 8, 8);
    in(trial % 2, (trial * 3) % 8, (trial * 5) % 8) = 1;
    const auto ra = forward_window(a, in, SpikeMode::on_chip);
    const auto rb = forward_window(b, in, SpikeMode::off_chip);
    o.require(ra.output() == rb.output() && a.voltage(0) == b.voltage(0), "one-event layer mismatch");
  }
  return o;
}

Outcome sop_oracle() {
  Outcome o;
  std::mt19937_64 rng(31);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int cases = 0;
  while (cases < 200) {
    LayerSpec s;
    s.in_channels = pick(1, 8);
    s.out_channels = pick(1, 8);
    s.in_height = pick(1, 8);
    s.in_width = pick(1, 8);
    s.kernel = pick(1, 5);
    s.stride = pick(1, 3);
    s.padding = pick(0, s.kernel - 1);
    try {
      s.validate();
    } catch (const ConfigurationError&) {
      continue;
    }
    SpikeTensor prev(s.in_channels, s.in_height, s.in_width);
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] = static_cast<std::uint32_t>(pick(0, 3) == 0 ? pick(1, 4) : 0);
    const auto want = oracle::brute_force_sops(prev, s);
    o.require(synaptic_operations(prev, s) == want, "case " + std::to_string(cases) + " differs from brute force");
    o.require(sop_count(prev, s, 0.5) == 2.0 * static_cast<double>(want), "sop_count rate scaling");
    ++cases;
  }
  return o;
}

Outcome readout_exactness() {
  Outcome o;
  const CyclicSchedule sched{10000, 175};
  auto multiplier = build_spike_multiplier<std::int32_t>();
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> windows(1, 12);
  std::uniform_int_distribution<int> count(0, 30);
  std::bernoulli_distribution silent(0.3);
  std::uniform_int_distribution<std::int64_t> offset(0, sched.aligned_end(0) - 1);
  for (int train = 0; train < 1000; ++train) {
    multiplier.reset_state();
    const auto n = static_cast<std::size_t>(windows(rng));
    std::vector<OutputVector> truth(n);
    std::vector<ReadoutSpike> spikes;
    for (std::size_t i = 0; i < n; ++i) {
      SpikeTensor core(kReadoutOutputs, 1, 1);
      for (int j = 0; j < kReadoutOutputs; ++j) {
        const auto c = silent(rng) ? 0 : count(rng);
        truth[i][static_cast<std::size_t>(j)] = static_cast<std::uint16_t>(c);
        core(j, 0, 0) = static_cast<std::uint32_t>(c);
      }
      const auto amplified = forward_window(multiplier, core, train % 2 ? SpikeMode::off_chip : SpikeMode::on_chip);
      const auto counts = route_to_readout(amplified.output(), MappingMode::m11);
      o.require(counts[0] == 0, "multiplier reached neuron 0");
      // Spread each neuron's spikes over the aligned part of the window.
      std::vector<ReadoutSpike> window_spikes;
      for (int k = 1; k < kReadoutNeurons; ++k) {
        for (std::uint32_t s = 0; s < counts[static_cast<std::size_t>(k)]; ++s) {
          window_spikes.push_back({static_cast<std::int64_t>(i) * sched.dt_us + offset(rng), k, 1});
        }
      }
      std::sort(window_spikes.begin(), window_spikes.end(),
                [](const auto& a, const auto& b) { return a.t_us < b.t_us; });
      spikes.insert(spikes.end(), window_spikes.begin(), window_spikes.end());
    }
    ReadoutCore core;
    const auto got = cyclic_readout(core, spikes, n, sched);
    o.require(got == truth, "train " + std::to_string(train) + " not reconstructed");
    core.add_spikes(0, 1000);
    core.sclk_tick();
    o.require(core.read_neuron(0) == 0, "neuron 0 read nonzero");
  }

  const auto shape = minimal_shape(MappingMode::m11);
  o.require(shape == std::array<int, 3>{57, 1, 1}, "minimal m11 shape is not [57, 1, 1]");
  SpikeTensor full(shape[0], shape[1], shape[2]);
  for (std::size_t i = 0; i < full.size(); ++i) full[i] = 1;
  const auto routed = route_to_readout(full, MappingMode::m11);
  std::set<int> reached;
  for (int k = 0; k < kReadoutNeurons; ++k) {
    if (routed[static_cast<std::size_t>(k)] > 0) reached.insert(k);
  }
  o.require(reached.size() == 15 && !reached.count(0), "[57, 1, 1] reaches " + std::to_string(reached.size()));
  return o;
}

protocol::RawConfig random_raw(std::uint64_t seed) {
  using namespace protocol;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> k(0, 3);
  std::uniform_int_distribution<int> ch(0, 15);
  RawConfigBuilder b(kKernel[8] + 0x1000);
  b.randomize(seed * 7919 + 1);
  for (int l = 0; l < kLayers; ++l) b.set_layer(l, {k(rng), ch(rng), ch(rng)});
  return b.build();
}

Outcome protocol_golden() {
  using namespace protocol;
  Outcome o;
  o.require(frame_write(0x0102, 0xAB) == Bytes{0x80, 0x01, 0x02, 0xAB}, "write frame");
  const auto init = init_sequence();
  const auto frames = split_frames(init);
  o.require(frames.size() == 5, "init frame count");
  const std::array<std::uint8_t, 5> payloads{0x01, 0x81, 0xC1, 0xE1, 0xF1};
  for (std::size_t i = 0; i < frames.size() && i < 5; ++i) {
    o.require(parse_frame(frames[i].bytes).payload == Bytes{payloads[i]}, "init payload " + std::to_string(i));
  }
  o.require(next_neuron_command(5) == 0x97 && next_neuron_command(0) == 0x83 && next_neuron_command(15) == 0xBF,
            "next-neuron commands");

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto raw = random_raw(seed);
    const auto dev = decode_stream(encode_config(compress_config(raw)));
    const auto issues = verify_roundtrip(raw, dev);
    o.require(issues.empty(), "roundtrip seed " + std::to_string(seed) + (issues.empty() ? "" : ": " + issues.front()));
    for (int l = 0; l < kLayers; ++l) {
      if (!is_active(raw, l)) continue;
      const auto k = raw_kernel_bytes(raw, l);
      const auto got = dev.kernel_bytes(l);
      o.require(got && *got == Bytes(k.begin(), k.end()), "kernel bytes of layer " + std::to_string(l));
    }
  }

  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> k(0, 15);
  std::uniform_int_distribution<int> ch(0, 1023);
  for (int i = 0; i < 1000; ++i) {
    const LayerFields f{k(rng), ch(rng), ch(rng)};
    o.require(kernel_mem_size(f) == oracle::packed_kmem(f.k_s, f.c_in, f.c_out), "k_mem differs from oracle");
  }
  return o;
}

Outcome decoder_gradients() {
  Outcome o;
  std::mt19937_64 rng(61);
  const DecoderKind kinds[] = {DecoderKind::gated, DecoderKind::direct};
  const UncertaintyVariant variants[] = {UncertaintyVariant::none, UncertaintyVariant::shared,
                                         UncertaintyVariant::per_axis};
  double worst = 0.0;
  for (int seq = 0; seq < 50; ++seq) {
    const auto p = init_decoder(kinds[seq % 2], variants[seq % 3], rng(), 0.4);
    const auto xs = oracle::smooth_inputs(rng, 10);
    const auto ys = oracle::random_truths(rng, 10);
    worst = std::max(worst, oracle::max_gradient_error(p, xs, ys));
  }
  o.require(worst < 1e-4, "max relative gradient error " + std::to_string(worst));

  std::uniform_real_distribution<double> pos(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const Point2 truth{pos(rng), pos(rng)};
    Prediction pred{{pos(rng), pos(rng)}, {0.0, 0.0}, UncertaintyVariant::shared};
    const double e2 = std::pow(truth[0] - pred.xy[0], 2) + std::pow(truth[1] - pred.xy[1], 2);
    auto f = [&](double u) {
      pred.u[0] = u;
      return tracking_loss(pred, truth, UncertaintyVariant::shared);
    };
    const double u_star = oracle::golden_minimize(f, -30.0, 10.0);
    o.require(std::abs(u_star - std::log(e2)) < 1e-6, "u minimizer off by " + std::to_string(u_star - std::log(e2)));
  }
  return o;
}

// Synthetic sinusoidal pupil recordings through the stripe-pooling SNN and
// the full readout path; gated and direct decoders are trained on three and
// scored on a fourth.
Outcome end_to_end_learning() {
  Outcome o;
  PipelineConfig cfg;
  FrontEnd fe(cfg, default_network());
  std::vector<SequenceSample> train;
  for (std::uint64_t seed = 101; seed <= 103; ++seed) {
    const auto rec = synth_recording(seed, 8.0, 100.0);
    train.push_back(extract_sequence(fe, rec.events, rec.track));
  }
  const auto held = synth_recording(104, 8.0, 100.0);
  const std::vector<SequenceSample> test{extract_sequence(fe, held.events, held.track)};

  TrainOptions opt;
  opt.variant = UncertaintyVariant::none;
  opt.epochs = 60;
  opt.lr = 2e-2;
  opt.seed = 7;
  opt.kind = DecoderKind::gated;
  const auto gated = train_decoder(train, opt);
  opt.kind = DecoderKind::direct;
  const auto direct = train_decoder(train, opt);

  const double untrained = evaluate_loss(init_decoder(DecoderKind::gated, opt.variant, opt.seed, opt.init_scale), test);
  const double gated_loss = evaluate_loss(gated.params, test);
  const double direct_loss = evaluate_loss(direct.params, test);
  std::printf("     held-out loss: untrained %.6f, gated %.6f, direct %.6f\n", untrained, gated_loss, direct_loss);
  o.require(gated_loss <= 0.5 * untrained, "gated loss above half the untrained loss");
  o.require(gated_loss <= direct_loss, "gated loss above the direct baseline");
  return o;
}

Outcome calibration() {
  Outcome o;
  auto residuals = [](double true_sigma, double predicted_sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> e(0.0, true_sigma);
    std::vector<ResidualSample> out(100000);
    for (auto& s : out) s = {e(rng), e(rng), predicted_sigma, predicted_sigma};
    return out;
  };
  const auto matched = calibration_curve(residuals(0.2, 0.2, 71));
  o.require(matched.mse < 1e-3, "matched-sigma MSE " + std::to_string(matched.mse));
  const auto halved = calibration_curve(residuals(0.2, 0.1, 72));
  for (std::size_t j = 1; j + 1 < halved.expected.size(); ++j) {
    o.require(halved.observed[j] < halved.expected[j], "halved sigma not below the diagonal");
  }

  std::mt19937_64 rng(73);
  std::uniform_real_distribution<double> u(-4.0, 2.0);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<ConfidenceSample> samples;
  for (int i = 0; i < 5000; ++i) {
    const double v = u(rng);
    samples.push_back({v, std::exp(v + noise(rng))});
  }
  const auto curve = error_vs_confidence(samples);
  for (std::size_t k = 1; k < curve.size(); ++k) o.require(curve[k - 1] <= curve[k], "error vs confidence decreased");
  return o;
}

Outcome regularizer() {
  Outcome o;
  o.require(kappa(20e6, 20e6) == 0.0 && kappa(5e6, 20e6) == 0.0, "kappa at or below threshold");
  o.require(kappa(30e6, 20e6) == 0.5, "kappa at 1.5x");
  o.require(kappa(40e6, 20e6) == 1.0, "kappa at 2x");
  o.require(kDefaultBeta == 100.0, "default beta");
  const double track = 0.37;
  for (double reg : {0.0, 0.25, 1.0, 3.5}) {
    o.require(std::abs(total_loss(track, reg) - (track + 100.0 * reg)) < 1e-12, "total loss not affine");
  }
  o.require(std::abs((total_loss(track, 2.0) - total_loss(track, 1.0)) - 100.0) < 1e-12, "slope is not 100");
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto rec = synth_recording(81, 2.0, 300.0);
  PipelineConfig cfg;
  cfg.seed = 5;
  auto once = [&] {
    const auto r = simulate(cfg, default_network(), load_pipeline_decoder(cfg), rec.events, &rec.track);
    return format_report_csv(r) + format_run_trace(r) + format_summary_csv(r);
  };
  const auto a = once();
  const auto b = once();
  o.require(!a.empty() && a == b, "reports differ between runs");
  return o;
}

}  // namespace

int main() {
  bool ok = true;
  ok &= run(1, "architecture identity", 1.0, architecture);
  ok &= run(2, "IF semantics", 5.0, if_semantics);
  ok &= run(3, "SOP oracle", 10.0, sop_oracle);
  ok &= run(4, "readout and multiplier exactness", 10.0, readout_exactness);
  ok &= run(5, "protocol golden bytes", 30.0, protocol_golden);
  ok &= run(6, "decoder gradients", 30.0, decoder_gradients);
  ok &= run(7, "end-to-end learning signal", 300.0, end_to_end_learning);
  ok &= run(8, "calibration", 60.0, calibration);
  ok &= run(9, "regularizer", 1.0, regularizer);
  ok &= run(10, "determinism", 60.0, determinism);
  return ok ? 0 : 1;
}
