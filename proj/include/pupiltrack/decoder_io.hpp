#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pupiltrack/decoder.hpp"
#include "pupiltrack/text_io.hpp"

// Decoder parameter file: a text header naming kind, variant and block
// shapes, a `data` line, then every block as little-endian float32 in the
// listed order.
//
//   pupiltrack-decoder 1
//   kind gated
//   variant shared
//   block W_g 15 30
//   ...
//   data
//   <binary>
namespace pupiltrack {

inline std::string format_decoder(const DecoderParams& p) {
  std::string out = "pupiltrack-decoder 1\n";
  out += std::string("kind ") + to_string(p.kind) + "\nvariant " + to_string(p.variant) + "\n";
  p.for_each_block([&](const char* name, auto, int rows, int cols) {
    out += std::string("block ") + name + " " + std::to_string(rows) + " " + std::to_string(cols) + "\n";
  });
  out += "data\n";
  for (const double v : p.flatten()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
  return out;
}

inline DecoderParams parse_decoder(std::string_view contents) {
  DecoderParams p;
  std::size_t pos = 0;
  std::size_t line = 0;
  std::vector<std::string> block_lines;
  bool kind_seen = false;
  bool variant_seen = false;
  while (true) {
    const auto nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) throw ParseError("missing 'data' line", line + 1);
    const auto s = text::trim(contents.substr(pos, nl - pos));
    pos = nl + 1;
    ++line;
    if (line == 1) {
      if (s != "pupiltrack-decoder 1") throw ParseError("expected 'pupiltrack-decoder 1'", line);
      continue;
    }
    if (s == "data") break;
    const auto f = text::split(s, ' ');
    try {
      if (f[0] == "kind" && f.size() == 2) {
        p.kind = parse_kind(f[1]);
        kind_seen = true;
      } else if (f[0] == "variant" && f.size() == 2) {
        p.variant = parse_variant(f[1]);
        variant_seen = true;
      } else if (f[0] == "block" && f.size() == 4) {
        block_lines.emplace_back(s);
      } else {
        throw ParseError("unexpected line '" + std::string(s) + "'", line);
      }
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line);
    }
  }
  if (!kind_seen || !variant_seen) throw ParseError("missing kind or variant", line);

  std::vector<std::string> expected;
  p.for_each_block([&](const char* name, auto, int rows, int cols) {
    expected.push_back(std::string("block ") + name + " " + std::to_string(rows) + " " + std::to_string(cols));
  });
  if (block_lines != expected) throw ParseError("block list does not match the variant", line);

  const std::size_t n = p.flatten().size();
  if (contents.size() - pos != 4 * n) throw ParseError("parameter blob has wrong size", pos);
  std::vector<double> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) {
      bits |= std::uint32_t{static_cast<std::uint8_t>(contents[pos + 4 * i + static_cast<std::size_t>(k)])} << (8 * k);
    }
    flat[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  p.unflatten(flat);
  p.validate();
  return p;
}

inline void save_decoder(const std::string& path, const DecoderParams& p) { text::write_file(path, format_decoder(p)); }
inline DecoderParams load_decoder(const std::string& path) { return parse_decoder(text::read_file(path)); }

// Rounds parameters to what a save/load cycle yields.
inline DecoderParams round_to_float(DecoderParams p) {
  auto flat = p.flatten();
  for (double& v : flat) v = static_cast<double>(static_cast<float>(v));
  p.unflatten(flat);
  return p;
}

// Prediction trace: t_us,x_px,y_px[,u_log_var[,u_y]]. Log-variances are in
// normalized units; sigma in pixels is 128 * exp(u / 2).
struct TraceRow {
  std::int64_t t_us = 0;
  Prediction prediction;
};

inline std::string trace_header(UncertaintyVariant v) {
  switch (v) {
    case UncertaintyVariant::none: return "t_us,x_px,y_px";
    case UncertaintyVariant::shared: return "t_us,x_px,y_px,u_log_var";
    case UncertaintyVariant::per_axis: return "t_us,x_px,y_px,u_log_var,u_y";
  }
  return "";
}

inline std::string format_trace_csv(std::span<const TraceRow> rows, UncertaintyVariant v) {
  std::string out = trace_header(v) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.t_us) + ',' + text::format_double(kPixelScale * r.prediction.xy[0]) + ',' +
           text::format_double(kPixelScale * r.prediction.xy[1]);
    for (int k = 0; k < uncertainty_dim(v); ++k) {
      out += ',' + text::format_double(r.prediction.u[static_cast<std::size_t>(k)]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<TraceRow> parse_trace_csv(std::string_view contents, UncertaintyVariant* variant = nullptr) {
  std::vector<TraceRow> rows;
  std::optional<UncertaintyVariant> v;
  text::for_each_line(contents, [&](std::size_t line, std::string_view s) {
    if (s.empty()) return;
    if (!v) {
      for (auto cand : {UncertaintyVariant::none, UncertaintyVariant::shared, UncertaintyVariant::per_axis}) {
        if (s == trace_header(cand)) v = cand;
      }
      if (!v) throw ParseError("unrecognized trace header", line);
      return;
    }
    const auto f = text::split(s, ',');
    const auto ud = static_cast<std::size_t>(uncertainty_dim(*v));
    if (f.size() != 3 + ud) throw ParseError("wrong field count", line);
    TraceRow r;
    r.t_us = text::parse_int<std::int64_t>(f[0], line);
    r.prediction.variant = *v;
    r.prediction.xy = {text::parse_double(f[1], line) / kPixelScale, text::parse_double(f[2], line) / kPixelScale};
    for (std::size_t k = 0; k < ud; ++k) r.prediction.u[k] = text::parse_double(f[3 + k], line);
    rows.push_back(r);
  });
  if (!v) throw ParseError("missing header", 1);
  if (variant) *variant = *v;
  return rows;
}

}  // namespace pupiltrack
