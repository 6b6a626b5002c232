#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pupiltrack/count_tensor.hpp"
#include "pupiltrack/errors.hpp"
#include "pupiltrack/text_io.hpp"

namespace pupiltrack {

inline constexpr int kSensorWidth = 128;
inline constexpr int kSensorHeight = 128;

enum class Polarity : std::uint8_t { negative = 0, positive = 1 };

struct Event {
  std::int64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity p = Polarity::positive;

  bool operator==(const Event&) const = default;
};

using EventStream = std::vector<Event>;

// Two-channel (negative, positive) per-pixel event counts of one window.
struct CountImage {
  std::int64_t window_index = 0;
  CountTensor counts{2, kSensorHeight, kSensorWidth};

  std::uint32_t at(Polarity p, int y, int x) const {
    return counts(static_cast<int>(p), y, x);
  }
};

struct TrackSample {
  std::int64_t t_us = 0;
  double x_px = 0.0;
  double y_px = 0.0;

  bool operator==(const TrackSample&) const = default;
};

// Ground-truth pupil centre sampled at a fixed rate.
struct GroundTruthTrack {
  std::vector<TrackSample> samples;

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (!(s.x_px >= 0.0 && s.x_px < kSensorWidth && s.y_px >= 0.0 && s.y_px < kSensorHeight)) {
        throw ValidationError("track sample " + std::to_string(i) + " leaves the frame");
      }
      if (i > 0 && s.t_us <= samples[i - 1].t_us) {
        throw ValidationError("track timestamps must be strictly increasing");
      }
    }
  }

  // Linear interpolation, clamped to the first/last sample.
  std::pair<double, double> position_at(std::int64_t t_us) const {
    if (samples.empty()) throw ValidationError("empty track");
    if (t_us <= samples.front().t_us) return {samples.front().x_px, samples.front().y_px};
    if (t_us >= samples.back().t_us) return {samples.back().x_px, samples.back().y_px};
    const auto it = std::upper_bound(samples.begin(), samples.end(), t_us,
                                     [](std::int64_t t, const TrackSample& s) { return t < s.t_us; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    const double f = static_cast<double>(t_us - a.t_us) / static_cast<double>(b.t_us - a.t_us);
    return {a.x_px + f * (b.x_px - a.x_px), a.y_px + f * (b.y_px - a.y_px)};
  }
};

inline void validate_event(const Event& e, std::size_t index) {
  if (e.t_us < 0) throw ValidationError("event " + std::to_string(index) + " has negative time");
  if (e.x >= kSensorWidth || e.y >= kSensorHeight) {
    throw ValidationError("event " + std::to_string(index) + " outside the 128x128 array");
  }
  if (e.p != Polarity::negative && e.p != Polarity::positive) {
    throw ValidationError("event " + std::to_string(index) + " has invalid polarity");
  }
}

enum class HorizonPolicy { reject, ignore };

// Splits a sorted stream into ceil(horizon/dt) half-open windows
// [i*dt, (i+1)*dt) and counts events per pixel and polarity.
inline std::vector<CountImage> discretize(std::span<const Event> stream, std::int64_t dt_us,
                                          std::int64_t horizon_us,
                                          HorizonPolicy policy = HorizonPolicy::reject) {
  if (dt_us <= 0) throw ValidationError("dt_us must be positive");
  if (horizon_us < 0) throw ValidationError("horizon_us must be non-negative");
  const std::int64_t windows = (horizon_us + dt_us - 1) / dt_us;
  std::vector<CountImage> out(static_cast<std::size_t>(windows));
  for (std::int64_t i = 0; i < windows; ++i) out[static_cast<std::size_t>(i)].window_index = i;

  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Event& e = stream[i];
    validate_event(e, i);
    if (i > 0 && e.t_us < stream[i - 1].t_us) {
      throw OrderingError("event stream not sorted at index " + std::to_string(i));
    }
    if (e.t_us >= horizon_us) {
      if (policy == HorizonPolicy::reject) {
        throw ValidationError("event " + std::to_string(i) + " beyond horizon");
      }
      continue;
    }
    auto& img = out[static_cast<std::size_t>(e.t_us / dt_us)];
    ++img.counts(static_cast<int>(e.p), e.y, e.x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic pupil events: a dark disc on a bright background observed by an
// ideal event sensor.

struct PupilSynthConfig {
  double pupil_radius_px = 12.0;
  double positive_threshold = 0.2;  // log-intensity contrast
  double negative_threshold = 0.2;
  double noise_rate_hz = 0.0;  // aggregate background rate over the array
  std::uint64_t seed = 0;
  std::int64_t substep_us = 1000;
  double background_intensity = 1.0;
  double pupil_intensity = 0.2;
};

namespace detail {

inline double disc_log_intensity(const PupilSynthConfig& cfg, double cx, double cy, int x, int y) {
  const double d = std::hypot(x - cx, y - cy);
  const double coverage = std::clamp(cfg.pupil_radius_px + 0.5 - d, 0.0, 1.0);
  return std::log(cfg.background_intensity -
                  (cfg.background_intensity - cfg.pupil_intensity) * coverage);
}

}  // namespace detail

inline EventStream synth_pupil_events(const GroundTruthTrack& track, const PupilSynthConfig& cfg) {
  track.validate();
  if (!(cfg.pupil_radius_px > 0.0)) throw ValidationError("pupil radius must be positive");
  if (!(cfg.positive_threshold > 0.0) || !(cfg.negative_threshold > 0.0)) {
    throw ValidationError("contrast thresholds must be positive");
  }
  if (cfg.noise_rate_hz < 0.0) throw ValidationError("noise rate must be non-negative");
  if (cfg.substep_us <= 0) throw ValidationError("substep must be positive");
  if (!(cfg.pupil_intensity > 0.0) || !(cfg.background_intensity > 0.0)) {
    throw ValidationError("intensities must be positive");
  }

  EventStream events;
  if (track.samples.empty()) return events;

  const std::int64_t t0 = track.samples.front().t_us;
  const std::int64_t t1 = track.samples.back().t_us;

  // Per-pixel log intensity at the last emitted event.
  std::vector<double> reference(static_cast<std::size_t>(kSensorWidth) * kSensorHeight);
  auto [px, py] = track.position_at(t0);
  for (int y = 0; y < kSensorHeight; ++y) {
    for (int x = 0; x < kSensorWidth; ++x) {
      reference[static_cast<std::size_t>(y) * kSensorWidth + x] =
          detail::disc_log_intensity(cfg, px, py, x, y);
    }
  }

  const int margin = static_cast<int>(std::ceil(cfg.pupil_radius_px)) + 2;
  for (std::int64_t t = t0 + cfg.substep_us; t <= t1; t += cfg.substep_us) {
    const auto [cx, cy] = track.position_at(t);
    // Only pixels near the old or new disc position can change.
    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(px, cx))) - margin);
    const int x_hi = std::min(kSensorWidth - 1, static_cast<int>(std::ceil(std::max(px, cx))) + margin);
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(py, cy))) - margin);
    const int y_hi = std::min(kSensorHeight - 1, static_cast<int>(std::ceil(std::max(py, cy))) + margin);
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        double& ref = reference[static_cast<std::size_t>(y) * kSensorWidth + x];
        const double level = detail::disc_log_intensity(cfg, cx, cy, x, y);
        const double delta = level - ref;
        Event e{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), Polarity::positive};
        if (delta >= cfg.positive_threshold) {
          const auto n = static_cast<int>(std::floor(delta / cfg.positive_threshold));
          ref += n * cfg.positive_threshold;
          events.insert(events.end(), static_cast<std::size_t>(n), e);
        } else if (-delta >= cfg.negative_threshold) {
          const auto n = static_cast<int>(std::floor(-delta / cfg.negative_threshold));
          ref -= n * cfg.negative_threshold;
          e.p = Polarity::negative;
          events.insert(events.end(), static_cast<std::size_t>(n), e);
        }
      }
    }
    px = cx;
    py = cy;
  }

  if (cfg.noise_rate_hz > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::exponential_distribution<double> gap_s(cfg.noise_rate_hz);
    std::uniform_int_distribution<int> col(0, kSensorWidth - 1);
    std::uniform_int_distribution<int> row(0, kSensorHeight - 1);
    std::bernoulli_distribution positive(0.5);
    double t = static_cast<double>(t0);
    while (true) {
      t += gap_s(rng) * 1e6;
      if (t > static_cast<double>(t1)) break;
      Event e{static_cast<std::int64_t>(t), static_cast<std::uint16_t>(col(rng)),
              static_cast<std::uint16_t>(row(rng)),
              positive(rng) ? Polarity::positive : Polarity::negative};
      events.push_back(e);
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  }
  return events;
}

inline EventStream synth_pupil_events(const GroundTruthTrack& track, double pupil_radius_px,
                                      double contrast_threshold, double noise_rate_hz,
                                      std::uint64_t seed) {
  PupilSynthConfig cfg;
  cfg.pupil_radius_px = pupil_radius_px;
  cfg.positive_threshold = contrast_threshold;
  cfg.negative_threshold = contrast_threshold;
  cfg.noise_rate_hz = noise_rate_hz;
  cfg.seed = seed;
  return synth_pupil_events(track, cfg);
}

struct SinusoidTrackConfig {
  double duration_s = 5.0;
  double rate_hz = 100.0;
  double center_x = 64.0;
  double center_y = 64.0;
  double amplitude_x = 30.0;
  double amplitude_y = 20.0;
  double frequency_x_hz = 0.5;
  double frequency_y_hz = 0.35;
  double phase_x = 0.0;
  double phase_y = 0.0;
};

// Lissajous-style trajectory; slows to a halt at each extremum.
inline GroundTruthTrack sinusoidal_track(const SinusoidTrackConfig& cfg) {
  if (!(cfg.rate_hz > 0.0) || !(cfg.duration_s >= 0.0)) {
    throw ValidationError("invalid trajectory timing");
  }
  GroundTruthTrack track;
  const auto n = static_cast<std::int64_t>(std::floor(cfg.duration_s * cfg.rate_hz)) + 1;
  const double period_us = 1e6 / cfg.rate_hz;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto t_us = static_cast<std::int64_t>(std::llround(static_cast<double>(i) * period_us));
    const double ts = static_cast<double>(t_us) * 1e-6;
    track.samples.push_back(
        {t_us,
         cfg.center_x + cfg.amplitude_x * std::sin(2.0 * std::numbers::pi * cfg.frequency_x_hz * ts + cfg.phase_x),
         cfg.center_y + cfg.amplitude_y * std::sin(2.0 * std::numbers::pi * cfg.frequency_y_hz * ts + cfg.phase_y)});
  }
  track.validate();
  return track;
}

// ---------------------------------------------------------------------------
// CSV files: events as `t_us,x,y,p` (p in {0,1}); tracks as `t_us,x_px,y_px`.

inline std::string format_events_csv(std::span<const Event> stream) {
  std::string out = "t_us,x,y,p\n";
  for (const auto& e : stream) {
    out += std::to_string(e.t_us);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += (e.p == Polarity::positive ? '1' : '0');
    out += '\n';
  }
  return out;
}

inline EventStream parse_events_csv(std::string_view contents) {
  EventStream stream;
  bool header_seen = false;
  text::for_each_line(contents, [&](std::size_t line, std::string_view s) {
    if (s.empty()) return;
    if (!header_seen) {
      if (s != "t_us,x,y,p") throw ParseError("expected header 't_us,x,y,p'", line);
      header_seen = true;
      return;
    }
    const auto f = text::split(s, ',');
    if (f.size() != 4) throw ParseError("expected 4 fields", line);
    const auto t = text::parse_int<std::int64_t>(f[0], line);
    const auto x = text::parse_int<int>(f[1], line);
    const auto y = text::parse_int<int>(f[2], line);
    const auto p = text::parse_int<int>(f[3], line);
    if (t < 0) throw ParseError("negative timestamp", line);
    if (x < 0 || x >= kSensorWidth || y < 0 || y >= kSensorHeight) {
      throw ParseError("coordinate outside the 128x128 array", line);
    }
    if (p != 0 && p != 1) throw ParseError("polarity must be 0 or 1", line);
    stream.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                      p == 1 ? Polarity::positive : Polarity::negative});
  });
  if (!header_seen) throw ParseError("missing header", 1);
  return stream;
}

inline void write_events(const std::string& path, std::span<const Event> stream) {
  text::write_file(path, format_events_csv(stream));
}

inline EventStream read_events(const std::string& path) {
  return parse_events_csv(text::read_file(path));
}

inline std::string format_track_csv(const GroundTruthTrack& track) {
  std::string out = "t_us,x_px,y_px\n";
  for (const auto& s : track.samples) {
    out += std::to_string(s.t_us) + ',' + text::format_double(s.x_px) + ',' +
           text::format_double(s.y_px) + '\n';
  }
  return out;
}

inline GroundTruthTrack parse_track_csv(std::string_view contents) {
  GroundTruthTrack track;
  bool header_seen = false;
  text::for_each_line(contents, [&](std::size_t line, std::string_view s) {
    if (s.empty()) return;
    if (!header_seen) {
      if (s != "t_us,x_px,y_px") throw ParseError("expected header 't_us,x_px,y_px'", line);
      header_seen = true;
      return;
    }
    const auto f = text::split(s, ',');
    if (f.size() != 3) throw ParseError("expected 3 fields", line);
    track.samples.push_back({text::parse_int<std::int64_t>(f[0], line),
                             text::parse_double(f[1], line), text::parse_double(f[2], line)});
  });
  if (!header_seen) throw ParseError("missing header", 1);
  track.validate();
  return track;
}

inline void write_track(const std::string& path, const GroundTruthTrack& track) {
  text::write_file(path, format_track_csv(track));
}

inline GroundTruthTrack read_track(const std::string& path) {
  return parse_track_csv(text::read_file(path));
}

}  // namespace pupiltrack
