#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pupiltrack/decoder.hpp"
#include "pupiltrack/decoder_io.hpp"
#include "pupiltrack/events.hpp"
#include "pupiltrack/network.hpp"
#include "pupiltrack/network_io.hpp"
#include "pupiltrack/readout.hpp"
#include "pupiltrack/text_io.hpp"

// End-to-end run: discretize -> fixed-point SNN -> spike multiplier ->
// readout core -> cyclic readout -> decoder.
namespace pupiltrack {

struct PipelineConfig {
  std::int64_t dt_us = 10000;
  std::int64_t sclk_period_us = 175;
  SpikeMode mode = SpikeMode::on_chip;
  UncertaintyVariant variant = UncertaintyVariant::shared;
  std::string network_path;  // empty: built-in stripe-pooling network
  std::string decoder_path;  // empty: freshly initialized gated decoder
  std::uint64_t seed = 0;
  // Joules per SOP for the energy column. A bookkeeping proxy, not a
  // measured device figure.
  double energy_per_sop = 1e-11;
  bool bypass_readout = false;  // feed core output counts straight to the decoder
  std::int64_t horizon_us = 0;  // 0: derive from the truth track or the events

  void validate() const {
    if (dt_us <= 0 || sclk_period_us <= 0) throw ConfigurationError("dt_us and sclk_us must be positive");
    if (dt_us < kReadoutNeurons * sclk_period_us) throw ConfigurationError("dt_us must be at least 16 * sclk_us");
    if (!(energy_per_sop >= 0.0)) throw ConfigurationError("energy_per_sop must be non-negative");
    if (horizon_us < 0) throw ConfigurationError("horizon_us must be non-negative");
  }
};

inline SpikeMode parse_mode(std::string_view s) {
  if (s == "on-chip" || s == "on_chip" || s == "on") return SpikeMode::on_chip;
  if (s == "off-chip" || s == "off_chip" || s == "off") return SpikeMode::off_chip;
  throw ValidationError("unknown spike mode '" + std::string(s) + "'");
}

inline const char* to_string(SpikeMode m) { return m == SpikeMode::on_chip ? "on-chip" : "off-chip"; }

inline bool parse_bool(std::string_view s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw ValidationError("expected a boolean, got '" + std::string(s) + "'");
}

// key=value lines; '#' starts a comment. Unknown keys are errors.
inline PipelineConfig parse_pipeline_config(std::string_view contents, PipelineConfig cfg = {}) {
  text::for_each_line(contents, [&](std::size_t line, std::string_view s) {
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = text::trim(s.substr(0, hash));
    if (s.empty()) return;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line);
    const auto key = text::trim(s.substr(0, eq));
    const auto value = text::trim(s.substr(eq + 1));
    try {
      if (key == "dt_us") {
        cfg.dt_us = text::parse_int<std::int64_t>(value, line);
      } else if (key == "sclk_us" || key == "sclk_period_us") {
        cfg.sclk_period_us = text::parse_int<std::int64_t>(value, line);
      } else if (key == "mode") {
        cfg.mode = parse_mode(value);
      } else if (key == "variant") {
        cfg.variant = parse_variant(value);
      } else if (key == "network") {
        cfg.network_path = std::string(value);
      } else if (key == "decoder" || key == "weights") {
        cfg.decoder_path = std::string(value);
      } else if (key == "seed") {
        cfg.seed = text::parse_int<std::uint64_t>(value, line);
      } else if (key == "energy_per_sop") {
        cfg.energy_per_sop = text::parse_double(value, line);
      } else if (key == "bypass_readout") {
        cfg.bypass_readout = parse_bool(value);
      } else if (key == "horizon_us") {
        cfg.horizon_us = text::parse_int<std::int64_t>(value, line);
      } else {
        throw ParseError("unknown key '" + std::string(key) + "'", line);
      }
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line);
    }
  });
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path, PipelineConfig base = {}) {
  return parse_pipeline_config(text::read_file(path), base);
}

// Fixed-point stripe-pooling network used when no network file is given.
inline QuantizedNetwork default_network() { return quantize_network(build_stripe_pooling_network()); }

inline QuantizedNetwork load_pipeline_network(const PipelineConfig& cfg) {
  return cfg.network_path.empty() ? default_network() : load_network(cfg.network_path);
}

// ---------------------------------------------------------------------------
// Front end: everything up to the 15 decoder inputs.

struct WindowRecord {
  std::int64_t window = 0;
  std::int64_t t_us = 0;  // window end, when x_L becomes available
  std::array<std::uint32_t, kReadoutOutputs> core_counts{};
  std::array<std::uint32_t, kReadoutOutputs> x_l{};
  std::vector<std::uint64_t> sops;  // per SNN layer
  std::vector<double> sparsity;     // per SNN layer, percent silent
  std::vector<bool> breach;         // SOP rate above the core bandwidth
  std::uint64_t output_spikes = 0;
};

struct FrontEnd {
  PipelineConfig config;
  Network<std::int32_t> snn;
  Network<std::int32_t> multiplier;

  explicit FrontEnd(PipelineConfig cfg, const QuantizedNetwork& net)
      : config(std::move(cfg)), snn(to_fixed_point(net)), multiplier(build_spike_multiplier<std::int32_t>()) {
    config.validate();
    const auto in = snn.input_shape();
    if (in[0] != 2 || in[1] != kSensorHeight || in[2] != kSensorWidth) {
      throw ConfigurationError("network input must be [2, 128, 128]");
    }
    const auto out = snn.output_shape();
    if (out[0] != kReadoutOutputs || out[1] != 1 || out[2] != 1) {
      throw ConfigurationError("network output must be [15, 1, 1]");
    }
  }

  std::size_t layers() const { return snn.size(); }

  std::vector<WindowRecord> run(std::span<const Event> events, std::int64_t horizon_us) {
    snn.reset_state();
    multiplier.reset_state();
    const auto images = discretize(events, config.dt_us, horizon_us, HorizonPolicy::ignore);
    const double dt_s = static_cast<double>(config.dt_us) * 1e-6;

    std::vector<WindowRecord> rows;
    std::vector<ReadoutSpike> readout_spikes;
    rows.reserve(images.size());
    for (const auto& img : images) {
      WindowRecord r;
      r.window = img.window_index;
      r.t_us = (img.window_index + 1) * config.dt_us;
      const auto fr = forward_window(snn, img.counts, config.mode);
      const SpikeTensor* prev = &img.counts;
      for (std::size_t l = 0; l < snn.size(); ++l) {
        const auto& spec = snn.layer(l).spec;
        const auto sops = synaptic_operations(*prev, spec);
        r.sops.push_back(sops);
        r.breach.push_back(static_cast<double>(sops) / dt_s > bandwidth_limit(l));
        r.sparsity.push_back(sparsity_percent(fr.spikes[l]));
        prev = &fr.spikes[l];
      }
      for (int c = 0; c < kReadoutOutputs; ++c) {
        r.core_counts[static_cast<std::size_t>(c)] = fr.output()(c, 0, 0);
        r.output_spikes += fr.output()(c, 0, 0);
      }
      if (config.bypass_readout) {
        r.x_l = r.core_counts;
      } else {
        const auto amplified = forward_window(multiplier, fr.output(), config.mode);
        const auto counts = route_to_readout(amplified.output(), MappingMode::m11);
        for (int n = 1; n < kReadoutNeurons; ++n) {
          if (counts[static_cast<std::size_t>(n)] > 0) {
            readout_spikes.push_back({img.window_index * config.dt_us, n, counts[static_cast<std::size_t>(n)]});
          }
        }
      }
      rows.push_back(std::move(r));
    }

    if (!config.bypass_readout) {
      ReadoutCore core;
      const auto x = cyclic_readout(core, readout_spikes, rows.size(),
                                    CyclicSchedule{config.dt_us, config.sclk_period_us});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(x[i].begin(), x[i].end(), rows[i].x_l.begin());
      }
    }
    return rows;
  }
};

inline DecoderInput to_decoder_input(const std::array<std::uint32_t, kReadoutOutputs>& x) {
  DecoderInput out{};
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(x[i]);
  return out;
}

inline Point2 normalized_truth(const GroundTruthTrack& track, std::int64_t t_us) {
  const auto [x, y] = track.position_at(t_us);
  return {x / kPixelScale, y / kPixelScale};
}

// Horizon: explicit setting, else the truth track's end, else just past the
// last event.
inline std::int64_t resolve_horizon(const PipelineConfig& cfg, std::span<const Event> events,
                                    const GroundTruthTrack* truth) {
  if (cfg.horizon_us > 0) return cfg.horizon_us;
  if (truth && !truth->samples.empty()) return truth->samples.back().t_us;
  return events.empty() ? 0 : events.back().t_us + 1;
}

// Decoder training sample: x_L per window, truth at each window end.
inline SequenceSample extract_sequence(FrontEnd& fe, std::span<const Event> events, const GroundTruthTrack& truth) {
  const auto rows = fe.run(events, resolve_horizon(fe.config, events, &truth));
  SequenceSample s;
  for (const auto& r : rows) {
    s.inputs.push_back(to_decoder_input(r.x_l));
    s.truths.push_back(normalized_truth(truth, r.t_us));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Full run.

struct RunRow {
  WindowRecord window;
  Prediction prediction;
  double energy_proxy = 0.0;
  std::optional<Point2> truth;  // normalized
  double error_px = 0.0;
};

struct RunReport {
  PipelineConfig config;
  std::size_t layers = 0;
  std::vector<RunRow> rows;

  std::uint64_t total_sops() const {
    std::uint64_t t = 0;
    for (const auto& r : rows) {
      for (const auto s : r.window.sops) t += s;
    }
    return t;
  }
  std::size_t readout_mismatches() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.window.x_l != r.window.core_counts;
    return n;
  }
};

inline DecoderParams load_pipeline_decoder(const PipelineConfig& cfg) {
  if (!cfg.decoder_path.empty()) return load_decoder(cfg.decoder_path);
  return init_decoder(DecoderKind::gated, cfg.variant, cfg.seed);
}

inline RunReport simulate(const PipelineConfig& cfg, const QuantizedNetwork& net, const DecoderParams& decoder,
                          std::span<const Event> events, const GroundTruthTrack* truth = nullptr) {
  FrontEnd fe(cfg, net);
  RunReport report;
  report.config = cfg;
  report.config.variant = decoder.variant;  // the trace follows the decoder's head
  report.layers = fe.layers();
  auto windows = fe.run(events, resolve_horizon(cfg, events, truth));
  DecoderState state;
  for (auto& w : windows) {
    RunRow row;
    auto step = decode_step(decoder, state, to_decoder_input(w.x_l));
    state = step.state;
    row.prediction = step.prediction;
    std::uint64_t sops = 0;
    for (const auto s : w.sops) sops += s;
    row.energy_proxy = cfg.energy_per_sop * static_cast<double>(sops);
    if (truth) {
      row.truth = normalized_truth(*truth, w.t_us);
      row.error_px = kPixelScale * std::hypot((*row.truth)[0] - row.prediction.xy[0],
                                              (*row.truth)[1] - row.prediction.xy[1]);
    }
    row.window = std::move(w);
    report.rows.push_back(std::move(row));
  }
  return report;
}

// Per-window metrics CSV.
inline std::string format_report_csv(const RunReport& r) {
  std::string out = "window,t_us";
  for (int i = 0; i < kReadoutOutputs; ++i) out += ",x" + std::to_string(i);
  for (std::size_t l = 0; l < r.layers; ++l) out += ",sops_l" + std::to_string(l + 1);
  for (std::size_t l = 0; l < r.layers; ++l) out += ",sparsity_l" + std::to_string(l + 1);
  for (std::size_t l = 0; l < r.layers; ++l) out += ",breach_l" + std::to_string(l + 1);
  out += ",x_px,y_px,energy_proxy_j";
  const bool has_truth = !r.rows.empty() && r.rows.front().truth.has_value();
  if (has_truth) out += ",truth_x_px,truth_y_px,error_px";
  out += '\n';
  for (const auto& row : r.rows) {
    const auto& w = row.window;
    out += std::to_string(w.window) + ',' + std::to_string(w.t_us);
    for (const auto v : w.x_l) out += ',' + std::to_string(v);
    for (const auto v : w.sops) out += ',' + std::to_string(v);
    for (const auto v : w.sparsity) out += ',' + text::format_double(v);
    for (const bool b : w.breach) out += b ? ",1" : ",0";
    out += ',' + text::format_double(kPixelScale * row.prediction.xy[0]) + ',' +
           text::format_double(kPixelScale * row.prediction.xy[1]) + ',' + text::format_double(row.energy_proxy);
    if (has_truth) {
      out += ',' + text::format_double(kPixelScale * (*row.truth)[0]) + ',' +
             text::format_double(kPixelScale * (*row.truth)[1]) + ',' + text::format_double(row.error_px);
    }
    out += '\n';
  }
  return out;
}

inline std::string format_run_trace(const RunReport& r) {
  std::vector<TraceRow> rows;
  for (const auto& row : r.rows) rows.push_back({row.window.t_us, row.prediction});
  return format_trace_csv(rows, r.config.variant);
}

// key,value summary CSV.
inline std::string format_summary_csv(const RunReport& r) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("windows", std::to_string(r.rows.size()));
  kv.emplace_back("mode", to_string(r.config.mode));
  kv.emplace_back("variant", to_string(r.config.variant));
  kv.emplace_back("total_sops", std::to_string(r.total_sops()));
  kv.emplace_back("energy_proxy_j", text::format_double(r.config.energy_per_sop * static_cast<double>(r.total_sops())));
  kv.emplace_back("readout_mismatch_windows", std::to_string(r.readout_mismatches()));
  for (std::size_t l = 0; l < r.layers; ++l) {
    double sparsity = 0.0;
    std::size_t breaches = 0;
    for (const auto& row : r.rows) {
      sparsity += row.window.sparsity[l];
      breaches += row.window.breach[l];
    }
    const auto tag = std::to_string(l + 1);
    kv.emplace_back("mean_sparsity_l" + tag,
                    text::format_double(r.rows.empty() ? 100.0 : sparsity / static_cast<double>(r.rows.size())));
    kv.emplace_back("breach_windows_l" + tag, std::to_string(breaches));
  }
  if (!r.rows.empty() && r.rows.front().truth) {
    double sum = 0.0;
    for (const auto& row : r.rows) sum += row.error_px;
    kv.emplace_back("mean_error_px", text::format_double(sum / static_cast<double>(r.rows.size())));
  }
  std::string out = "key,value\n";
  for (const auto& [k, v] : kv) out += k + ',' + v + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic recordings: a sinusoidal pupil path with seed-drawn phases and
// frequencies, rendered by the event synthesizer.

struct SyntheticRecording {
  GroundTruthTrack track;
  EventStream events;
};

inline SyntheticRecording synth_recording(std::uint64_t seed, double duration_s, double noise_rate_hz = 0.0,
                                          double pupil_radius_px = 12.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  std::uniform_real_distribution<double> freq(0.3, 0.8);
  SinusoidTrackConfig tc;
  tc.duration_s = duration_s;
  tc.frequency_x_hz = freq(rng);
  tc.frequency_y_hz = freq(rng);
  tc.phase_x = phase(rng);
  tc.phase_y = phase(rng);
  PupilSynthConfig pc;
  pc.pupil_radius_px = pupil_radius_px;
  pc.noise_rate_hz = noise_rate_hz;
  pc.seed = seed;
  SyntheticRecording r;
  r.track = sinusoidal_track(tc);
  r.events = synth_pupil_events(r.track, pc);
  return r;
}

// ---------------------------------------------------------------------------
// Datasets: `<name>.events.csv` next to `<name>.track.csv`.

struct RecordingPaths {
  std::string events;
  std::string track;
};

inline std::vector<RecordingPaths> list_recordings(const std::string& dir) {
  std::vector<RecordingPaths> out;
  const std::string suffix = ".events.csv";
  if (!std::filesystem::is_directory(dir)) throw ValidationError("dataset directory '" + dir + "' not found");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    const auto stem = name.substr(0, name.size() - suffix.size());
    const auto track = entry.path().parent_path() / (stem + ".track.csv");
    if (!std::filesystem::exists(track)) throw ValidationError("missing track for '" + name + "'");
    out.push_back({entry.path().string(), track.string()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.events < b.events; });
  return out;
}

inline std::vector<SequenceSample> load_dataset(const PipelineConfig& cfg, const QuantizedNetwork& net,
                                                const std::string& dir) {
  FrontEnd fe(cfg, net);
  std::vector<SequenceSample> out;
  for (const auto& rec : list_recordings(dir)) {
    const auto events = read_events(rec.events);
    const auto track = read_track(rec.track);
    out.push_back(extract_sequence(fe, events, track));
  }
  if (out.empty()) throw ValidationError("dataset '" + dir + "' has no recordings");
  return out;
}

}  // namespace pupiltrack
