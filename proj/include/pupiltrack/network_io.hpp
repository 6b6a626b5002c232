#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pupiltrack/network.hpp"
#include "pupiltrack/text_io.hpp"

// Network description: a text file naming a weight blob plus one line per
// layer. The blob holds every layer's weights as signed bytes in (out, in,
// ky, kx) order, layers concatenated.
//
//   pupiltrack-network 1
//   weights net.bin
//   layer in=2 out=4 height=128 width=128 kernel=3 stride=2 padding=1 pool=1 threshold=1 rule=above scale=0.0078125
namespace pupiltrack {

inline std::string format_network_description(const QuantizedNetwork& q, const std::string& blob_name) {
  std::string out = "pupiltrack-network 1\nweights " + blob_name + "\n";
  for (std::size_t l = 0; l < q.specs.size(); ++l) {
    const auto& s = q.specs[l];
    out += "layer in=" + std::to_string(s.in_channels) + " out=" + std::to_string(s.out_channels) +
           " height=" + std::to_string(s.in_height) + " width=" + std::to_string(s.in_width) +
           " kernel=" + std::to_string(s.kernel) + " stride=" + std::to_string(s.stride) +
           " padding=" + std::to_string(s.padding) + " pool=" + std::to_string(s.pool) +
           " threshold=" + text::format_double(s.threshold) +
           " rule=" + (s.fire_rule == FireRule::above ? "above" : "at_or_above") +
           " scale=" + text::format_double(q.layers[l].scale) + "\n";
  }
  return out;
}

inline std::vector<std::uint8_t> network_blob(const QuantizedNetwork& q) {
  std::vector<std::uint8_t> blob;
  for (const auto& layer : q.layers) {
    for (const std::int8_t w : layer.weights) blob.push_back(static_cast<std::uint8_t>(w));
  }
  return blob;
}

struct ParsedNetworkDescription {
  std::string blob_name;
  std::vector<LayerSpec> specs;
  std::vector<double> scales;
};

inline ParsedNetworkDescription parse_network_description(std::string_view contents) {
  ParsedNetworkDescription d;
  bool magic = false;
  text::for_each_line(contents, [&](std::size_t line, std::string_view s) {
    if (s.empty() || s.front() == '#') return;
    if (!magic) {
      if (s != "pupiltrack-network 1") throw ParseError("expected 'pupiltrack-network 1'", line);
      magic = true;
      return;
    }
    const auto tokens = text::split(s, ' ');
    if (tokens[0] == "weights") {
      if (tokens.size() != 2) throw ParseError("expected 'weights <file>'", line);
      d.blob_name = std::string(tokens[1]);
      return;
    }
    if (tokens[0] != "layer") throw ParseError("unknown directive '" + std::string(tokens[0]) + "'", line);
    std::map<std::string, std::string, std::less<>> kv;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      if (tokens[i].empty()) continue;
      const auto eq = tokens[i].find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key=value", line);
      kv[std::string(tokens[i].substr(0, eq))] = std::string(tokens[i].substr(eq + 1));
    }
    auto need = [&](const char* key) -> const std::string& {
      const auto it = kv.find(key);
      if (it == kv.end()) throw ParseError(std::string("missing '") + key + "'", line);
      return it->second;
    };
    LayerSpec spec;
    spec.in_channels = text::parse_int<int>(need("in"), line);
    spec.out_channels = text::parse_int<int>(need("out"), line);
    spec.in_height = text::parse_int<int>(need("height"), line);
    spec.in_width = text::parse_int<int>(need("width"), line);
    spec.kernel = text::parse_int<int>(need("kernel"), line);
    spec.stride = text::parse_int<int>(need("stride"), line);
    spec.padding = text::parse_int<int>(need("padding"), line);
    spec.pool = kv.count("pool") ? text::parse_int<int>(kv["pool"], line) : 1;
    spec.threshold = text::parse_double(need("threshold"), line);
    const std::string rule = kv.count("rule") ? kv["rule"] : "above";
    if (rule == "above") {
      spec.fire_rule = FireRule::above;
    } else if (rule == "at_or_above") {
      spec.fire_rule = FireRule::at_or_above;
    } else {
      throw ParseError("unknown rule '" + rule + "'", line);
    }
    try {
      spec.validate();
    } catch (const ConfigurationError& e) {
      throw ParseError(e.what(), line);
    }
    d.specs.push_back(spec);
    d.scales.push_back(text::parse_double(need("scale"), line));
  });
  if (!magic) throw ParseError("empty network description", 1);
  if (d.blob_name.empty()) throw ParseError("missing 'weights' line", 1);
  if (d.specs.empty()) throw ParseError("no layers", 1);
  return d;
}

inline QuantizedNetwork assemble_network(const ParsedNetworkDescription& d,
                                         const std::vector<std::uint8_t>& blob) {
  QuantizedNetwork q;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < d.specs.size(); ++l) {
    const std::size_t n = d.specs[l].weight_count();
    if (offset + n > blob.size()) throw ParseError("weight blob too short", offset);
    QuantizedLayer layer;
    layer.scale = d.scales[l];
    layer.weights.reserve(n);
    for (std::size_t i = 0; i < n; ++i) layer.weights.push_back(static_cast<std::int8_t>(blob[offset + i]));
    offset += n;
    q.specs.push_back(d.specs[l]);
    q.layers.push_back(std::move(layer));
  }
  if (offset != blob.size()) throw ParseError("weight blob has trailing bytes", offset);
  return q;
}

// Writes `<path>` and the blob next to it as `<stem>.bin`.
inline void save_network(const std::string& path, const QuantizedNetwork& q) {
  const std::filesystem::path p(path);
  const std::string blob_name = p.stem().string() + ".bin";
  text::write_file(path, format_network_description(q, blob_name));
  text::write_binary((p.parent_path() / blob_name).string(), network_blob(q));
}

inline QuantizedNetwork load_network(const std::string& path) {
  const auto d = parse_network_description(text::read_file(path));
  const auto blob_path = std::filesystem::path(path).parent_path() / d.blob_name;
  return assemble_network(d, text::read_binary(blob_path.string()));
}

}  // namespace pupiltrack
