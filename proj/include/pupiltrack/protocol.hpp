#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pupiltrack/errors.hpp"
#include "pupiltrack/readout.hpp"

// Byte-level device programming: SPI command framing, configuration
// compression and encoding, initialization, and the readout register loop.
namespace pupiltrack::protocol {

using Bytes = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Constants and address tables.

inline constexpr std::size_t kKernelStart = 0x4C0;
inline constexpr std::size_t kRStart = 0x100;
inline constexpr int kLayers = 9;
inline constexpr std::array<std::size_t, kLayers> kKernel = {0x10000, 0x14000, 0x18000, 0x20000, 0x28000,
                                                             0x30000, 0x40000, 0x50000, 0x54000};
inline constexpr std::array<std::size_t, kLayers> kCnnReg = {0x280, 0x2C0, 0x300, 0x340, 0x380,
                                                             0x3C0, 0x400, 0x440, 0x480};
inline constexpr std::array<std::uint32_t, kLayers> kKernelMemAddr = {
    0x220000, 0x240000, 0x260000, 0x280000, 0x2A0000, 0x2C0000, 0x2E0000, 0x300000, 0x320000};

struct RegisterRow {
  std::uint16_t reg;
  std::uint16_t config;
  std::uint16_t count;
};

inline constexpr std::array<RegisterRow, 14> kRegisterRows = {{
    {0x0000, 0x0040, 34},
    {0x0600, 0x0280, 17},
    {0x0700, 0x02C0, 17},
    {0x0800, 0x0300, 17},
    {0x0900, 0x0340, 17},
    {0x0A00, 0x0380, 17},
    {0x0B00, 0x03C0, 17},
    {0x0C00, 0x0400, 17},
    {0x0D00, 0x0440, 17},
    {0x0E00, 0x0480, 17},
    {0x0100, 0x0080, 17},
    {0x0118, 0x0098, 6},
    {0x0300, 0x0100, 45},
    {0x0200, 0x00C0, 23},
}};

inline constexpr std::array<std::uint8_t, 5> kInitCommands = {0x01, 0x81, 0xC1, 0xE1, 0xF1};

inline constexpr std::uint16_t kRegControl = 0x0000;
inline constexpr std::uint16_t kRegNextNeuron = 0x020B;
inline constexpr std::uint16_t kRegCountLow = 0x0213;
inline constexpr std::uint16_t kRegCountHigh = 0x0214;

inline constexpr std::uint8_t kWriteMode = 0x80;
inline constexpr std::uint8_t kReadMode = 0x00;
inline constexpr std::uint8_t kMemoryWriteMode = 0xE0;

// ---------------------------------------------------------------------------
// Framing.

enum class SpiMode { read, write, memory_write };

struct SpiTransaction {
  SpiMode mode = SpiMode::write;
  std::uint16_t addr = 0;
  Bytes payload;

  bool operator==(const SpiTransaction&) const = default;
};

inline std::uint8_t mode_byte(SpiMode m) {
  switch (m) {
    case SpiMode::read: return kReadMode;
    case SpiMode::write: return kWriteMode;
    case SpiMode::memory_write: return kMemoryWriteMode;
  }
  return kReadMode;
}

// [mode, addr hi, addr lo] ++ payload. Callers building read frames pass
// zero placeholders of the expected response length.
inline Bytes frame_command(SpiMode mode, std::uint16_t addr, std::span<const std::uint8_t> payload = {}) {
  Bytes out;
  out.reserve(3 + payload.size());
  out.push_back(mode_byte(mode));
  out.push_back(static_cast<std::uint8_t>(addr >> 8));
  out.push_back(static_cast<std::uint8_t>(addr & 0xFF));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline Bytes frame_write(std::uint16_t addr, std::uint8_t value) {
  const std::uint8_t b[1] = {value};
  return frame_command(SpiMode::write, addr, b);
}

inline Bytes frame_read(std::uint16_t addr, std::size_t length) {
  const Bytes zeros(length, 0);
  return frame_command(SpiMode::read, addr, zeros);
}

inline Bytes serialize(const SpiTransaction& t) { return frame_command(t.mode, t.addr, t.payload); }

// `offset` is only used for error positions.
inline SpiTransaction parse_frame(std::span<const std::uint8_t> frame, std::size_t offset = 0) {
  if (frame.size() < 3) throw ParseError("frame shorter than its 3-byte header", offset);
  SpiTransaction t;
  switch (frame[0]) {
    case kWriteMode: t.mode = SpiMode::write; break;
    case kReadMode: t.mode = SpiMode::read; break;
    case kMemoryWriteMode: t.mode = SpiMode::memory_write; break;
    default: throw ParseError("unknown command byte " + std::to_string(frame[0]), offset);
  }
  t.addr = static_cast<std::uint16_t>((frame[1] << 8) | frame[2]);
  t.payload.assign(frame.begin() + 3, frame.end());
  return t;
}

// Appends a 4-byte big-endian length prefix and the frame.
inline void append_frame(Bytes& stream, std::span<const std::uint8_t> frame) {
  const auto n = static_cast<std::uint32_t>(frame.size());
  stream.push_back(static_cast<std::uint8_t>(n >> 24));
  stream.push_back(static_cast<std::uint8_t>(n >> 16));
  stream.push_back(static_cast<std::uint8_t>(n >> 8));
  stream.push_back(static_cast<std::uint8_t>(n));
  stream.insert(stream.end(), frame.begin(), frame.end());
}

struct StreamFrame {
  std::size_t offset = 0;  // byte offset of the length prefix
  std::span<const std::uint8_t> bytes;
};

inline std::vector<StreamFrame> split_frames(std::span<const std::uint8_t> stream) {
  std::vector<StreamFrame> frames;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    if (stream.size() - pos < 4) throw ParseError("truncated length prefix", pos);
    const std::size_t n = (std::size_t{stream[pos]} << 24) | (std::size_t{stream[pos + 1]} << 16) |
                          (std::size_t{stream[pos + 2]} << 8) | std::size_t{stream[pos + 3]};
    if (n < 3) throw ParseError("frame length below header size", pos);
    if (stream.size() - pos - 4 < n) throw ParseError("frame runs past end of stream", pos);
    frames.push_back({pos, stream.subspan(pos + 4, n)});
    pos += 4 + n;
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Raw configuration image.

struct RawConfig {
  Bytes bytes;

  void validate() const {
    if (bytes.size() < kKernelStart) throw ValidationError("raw config shorter than KERNEL_START");
  }
  std::uint8_t at(std::size_t i) const {
    if (i >= bytes.size()) throw ValidationError("raw config index " + std::to_string(i) + " out of bounds");
    return bytes[i];
  }
};

inline void check_layer(int l) {
  if (l < 0 || l >= kLayers) throw ValidationError("layer index must be in 0..8");
}

struct LayerFields {
  int k_s = 0;
  int c_in = 0;
  int c_out = 0;

  bool operator==(const LayerFields&) const = default;
};

inline LayerFields layer_fields(const RawConfig& raw, int l) {
  check_layer(l);
  const std::size_t base = kCnnReg[static_cast<std::size_t>(l)];
  LayerFields f;
  f.k_s = (raw.at(base + 0x1) >> 2) & 0xF;
  f.c_out = (raw.at(base + 0x5) << 2) | (raw.at(base + 0x4) >> 6);
  f.c_in = ((raw.at(base + 0x3) & 0b11) << 8) | raw.at(base + 0x2);
  return f;
}

// Number of bits needed for v; equals ceil(log2(v + 1)).
inline int bit_width_of(int v) { return static_cast<int>(std::bit_width(static_cast<unsigned>(v))); }

// ((k_s+1)^2 - 1) << (w_in + w_out) | C_out << w_in | (C_in + 1). The final
// term is added before the OR.
inline std::uint32_t kernel_mem_size(const LayerFields& f) {
  const int w_in = bit_width_of(f.c_in);
  const int w_out = bit_width_of(f.c_out);
  const auto spatial = static_cast<std::uint32_t>((f.k_s + 1) * (f.k_s + 1) - 1);
  return (spatial << (w_in + w_out)) | (static_cast<std::uint32_t>(f.c_out) << w_in) |
         static_cast<std::uint32_t>(f.c_in + 1);
}

inline std::uint32_t kernel_mem_size(const RawConfig& raw, int l) { return kernel_mem_size(layer_fields(raw, l)); }

inline bool is_active(const RawConfig& raw, int l) {
  check_layer(l);
  const std::uint8_t dest = raw.at(kRStart + 0x09 + static_cast<std::size_t>(l / 4));
  const std::uint8_t mask = raw.at(kRStart + 0x27);
  return ((dest >> (2 * (l % 4))) & 0b11) != 0 || ((mask >> l) & 1) != 0;
}

inline std::span<const std::uint8_t> raw_kernel_bytes(const RawConfig& raw, int l) {
  const std::size_t begin = kKernel[static_cast<std::size_t>(l)];
  const std::size_t n = kernel_mem_size(raw, l);
  if (begin + n > raw.bytes.size()) throw ValidationError("kernel bytes of layer " + std::to_string(l) + " exceed raw config");
  return std::span(raw.bytes).subspan(begin, n);
}

// Writes layer fields, activity bits and kernels at the offsets the
// compressor reads, so tests need no vendor files.
class RawConfigBuilder {
 public:
  explicit RawConfigBuilder(std::size_t size = kKernelStart) : raw_{Bytes(std::max(size, kKernelStart), 0)} {}

  // Fills the whole image with random bytes.
  RawConfigBuilder& randomize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto& b : raw_.bytes) b = static_cast<std::uint8_t>(byte(rng));
    return *this;
  }

  RawConfigBuilder& set_layer(int l, const LayerFields& f) {
    check_layer(l);
    if (f.k_s < 0 || f.k_s > 15 || f.c_in < 0 || f.c_in > 1023 || f.c_out < 0 || f.c_out > 1023) {
      throw ValidationError("layer fields out of range");
    }
    auto& b = raw_.bytes;
    const std::size_t base = kCnnReg[static_cast<std::size_t>(l)];
    b[base + 0x1] = static_cast<std::uint8_t>((b[base + 0x1] & ~0x3C) | (f.k_s << 2));
    b[base + 0x2] = static_cast<std::uint8_t>(f.c_in & 0xFF);
    b[base + 0x3] = static_cast<std::uint8_t>((b[base + 0x3] & ~0x03) | ((f.c_in >> 8) & 0x03));
    b[base + 0x4] = static_cast<std::uint8_t>((b[base + 0x4] & 0x3F) | ((f.c_out & 0x03) << 6));
    b[base + 0x5] = static_cast<std::uint8_t>(f.c_out >> 2);
    return *this;
  }

  RawConfigBuilder& set_active_mask(std::uint8_t mask) {
    raw_.bytes[kRStart + 0x27] = mask;
    return *this;
  }

  RawConfigBuilder& set_dest(int l, int bits) {
    check_layer(l);
    auto& d = raw_.bytes[kRStart + 0x09 + static_cast<std::size_t>(l / 4)];
    const int shift = 2 * (l % 4);
    d = static_cast<std::uint8_t>((d & ~(0b11 << shift)) | ((bits & 0b11) << shift));
    return *this;
  }

  // Places kernel bytes at KERNEL[l], growing the image as needed.
  RawConfigBuilder& set_kernel(int l, std::span<const std::uint8_t> kernel) {
    check_layer(l);
    const std::size_t begin = kKernel[static_cast<std::size_t>(l)];
    if (raw_.bytes.size() < begin + kernel.size()) raw_.bytes.resize(begin + kernel.size(), 0);
    std::copy(kernel.begin(), kernel.end(), raw_.bytes.begin() + static_cast<std::ptrdiff_t>(begin));
    return *this;
  }

  const RawConfig& build() const { return raw_; }

 private:
  RawConfig raw_;
};

// ---------------------------------------------------------------------------
// Compression.

struct LayerRecord {
  int layer = 0;
  std::uint16_t k_mem = 0;
  Bytes kernel;
};

struct CompressedConfig {
  Bytes bytes;
};

// Header verbatim, then per layer [l][k_mem LE16][kernel][00 00] when active
// or [l 00 00 00 00] when not.
inline CompressedConfig compress_config(const RawConfig& raw) {
  raw.validate();
  CompressedConfig out;
  out.bytes.assign(raw.bytes.begin(), raw.bytes.begin() + static_cast<std::ptrdiff_t>(kKernelStart));
  for (int l = 0; l < kLayers; ++l) {
    out.bytes.push_back(static_cast<std::uint8_t>(l));
    if (!is_active(raw, l)) {
      out.bytes.insert(out.bytes.end(), {0, 0, 0, 0});
      continue;
    }
    const std::uint32_t k_mem = kernel_mem_size(raw, l);
    if (k_mem > 0xFFFF) throw ValidationError("k_mem of layer " + std::to_string(l) + " exceeds 16 bits");
    const auto kernel = raw_kernel_bytes(raw, l);
    out.bytes.push_back(static_cast<std::uint8_t>(k_mem & 0xFF));
    out.bytes.push_back(static_cast<std::uint8_t>(k_mem >> 8));
    out.bytes.insert(out.bytes.end(), kernel.begin(), kernel.end());
    out.bytes.insert(out.bytes.end(), {0, 0});
  }
  return out;
}

struct ParsedCompressed {
  std::span<const std::uint8_t> header;
  std::vector<LayerRecord> records;
};

inline ParsedCompressed parse_compressed(const CompressedConfig& c) {
  const auto& b = c.bytes;
  if (b.size() < kKernelStart) throw ParseError("compressed config shorter than its header", b.size());
  ParsedCompressed p;
  p.header = std::span(b).first(kKernelStart);
  std::size_t pos = kKernelStart;
  while (pos < b.size()) {
    if (b.size() - pos < 3) throw ParseError("truncated layer record", pos);
    LayerRecord r;
    r.layer = b[pos];
    if (r.layer >= kLayers) throw ValidationError("unknown layer id " + std::to_string(r.layer));
    r.k_mem = static_cast<std::uint16_t>(b[pos + 1] | (b[pos + 2] << 8));
    if (b.size() - pos - 3 < std::size_t{r.k_mem} + 2) throw ParseError("truncated layer record", pos);
    r.kernel.assign(b.begin() + static_cast<std::ptrdiff_t>(pos + 3),
                    b.begin() + static_cast<std::ptrdiff_t>(pos + 3 + r.k_mem));
    pos += 3 + r.k_mem + 2;
    p.records.push_back(std::move(r));
  }
  if (p.records.size() != kLayers) throw ValidationError("expected 9 layer records");
  return p;
}

// ---------------------------------------------------------------------------
// Encoding.

using EncodedStream = Bytes;

inline void append_register_write(EncodedStream& s, std::uint16_t addr, std::uint8_t value) {
  append_frame(s, frame_write(addr, value));
}

inline EncodedStream encode_config(const CompressedConfig& c) {
  const auto parsed = parse_compressed(c);
  EncodedStream s;
  for (const auto& row : kRegisterRows) {
    for (std::uint16_t i = 0; i < row.count; ++i) {
      append_register_write(s, static_cast<std::uint16_t>(row.reg + i), parsed.header[row.config + i]);
    }
  }
  for (const auto& r : parsed.records) {
    if (r.k_mem == 0) continue;
    const std::uint32_t mem = kKernelMemAddr[static_cast<std::size_t>(r.layer)];
    append_register_write(s, 0x6, static_cast<std::uint8_t>((mem >> 16) & 0xFF));
    append_register_write(s, 0x5, static_cast<std::uint8_t>((mem >> 8) & 0xFF));
    append_register_write(s, 0x4, static_cast<std::uint8_t>(mem & 0xFF));
    append_register_write(s, 0x3, static_cast<std::uint8_t>((r.k_mem >> 16) & 0xFF));
    append_register_write(s, 0x2, static_cast<std::uint8_t>((r.k_mem >> 8) & 0xFF));
    append_register_write(s, 0x1, static_cast<std::uint8_t>(r.k_mem & 0xFF));
    append_frame(s, frame_command(SpiMode::memory_write, 0x0000, r.kernel));
  }
  return s;
}

inline EncodedStream init_sequence() {
  EncodedStream s;
  for (const std::uint8_t cmd : kInitCommands) append_register_write(s, kRegControl, cmd);
  return s;
}

inline std::uint8_t next_neuron_command(int idx) {
  if (idx < 0 || idx >= kReadoutNeurons) throw ValidationError("readout neuron index must be in 0..15");
  return static_cast<std::uint8_t>(((idx & 0xFF) << 2) | 0x83);
}

inline int neuron_from_command(std::uint8_t cmd) {
  if ((cmd & 0x83) != 0x83) throw ValidationError("malformed next-neuron command");
  return (cmd >> 2) & 0x0F;
}

// ---------------------------------------------------------------------------
// Mock device.

class MockDevice {
 public:
  // Register writes with longer payloads fill consecutive addresses. Memory
  // writes land at the address held in registers 0x6..0x4 and must match the
  // length held in 0x3..0x1.
  void apply(const SpiTransaction& t, std::size_t offset = 0) {
    ++frames_;
    switch (t.mode) {
      case SpiMode::read:
        return;
      case SpiMode::write:
        for (std::size_t i = 0; i < t.payload.size(); ++i) {
          history_[static_cast<std::uint16_t>(t.addr + i)].push_back(t.payload[i]);
        }
        return;
      case SpiMode::memory_write: {
        const std::uint32_t addr = (std::uint32_t{reg(0x6)} << 16) | (std::uint32_t{reg(0x5)} << 8) | reg(0x4);
        const std::uint32_t len = (std::uint32_t{reg(0x3)} << 16) | (std::uint32_t{reg(0x2)} << 8) | reg(0x1);
        if (len != t.payload.size()) throw ParseError("memory write length disagrees with registers 0x3..0x1", offset);
        memory_[addr] = t.payload;
        return;
      }
    }
  }

  bool has_register(std::uint16_t addr) const { return history_.count(addr) != 0; }

  // Final value; 0 if never written.
  std::uint8_t reg(std::uint16_t addr) const {
    const auto it = history_.find(addr);
    return it == history_.end() ? 0 : it->second.back();
  }

  std::span<const std::uint8_t> register_history(std::uint16_t addr) const {
    const auto it = history_.find(addr);
    if (it == history_.end()) return {};
    return it->second;
  }

  std::optional<Bytes> memory(std::uint32_t addr) const {
    const auto it = memory_.find(addr);
    if (it == memory_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<Bytes> kernel_bytes(int l) const {
    check_layer(l);
    return memory(kKernelMemAddr[static_cast<std::size_t>(l)]);
  }

  std::size_t frame_count() const { return frames_; }
  std::size_t memory_bank_count() const { return memory_.size(); }

 private:
  std::map<std::uint16_t, Bytes> history_;
  std::map<std::uint32_t, Bytes> memory_;
  std::size_t frames_ = 0;
};

inline MockDevice decode_stream(std::span<const std::uint8_t> stream) {
  MockDevice dev;
  for (const auto& f : split_frames(stream)) dev.apply(parse_frame(f.bytes, f.offset), f.offset);
  return dev;
}

// Compares a decoded stream against the raw config it was encoded from.
// Returns human-readable mismatches; empty means byte-identical. Registers
// 0x0..0x6 are compared by their first write since the memory phase and the
// init sequence reuse them.
inline std::vector<std::string> verify_roundtrip(const RawConfig& raw, const MockDevice& dev) {
  std::vector<std::string> issues;
  for (const auto& row : kRegisterRows) {
    for (std::uint16_t i = 0; i < row.count; ++i) {
      const auto addr = static_cast<std::uint16_t>(row.reg + i);
      const std::uint8_t want = raw.at(std::size_t{row.config} + i);
      const auto hist = dev.register_history(addr);
      const bool shared = addr <= 0x6;
      if (hist.empty() || hist.front() != want || (!shared && hist.back() != want)) {
        issues.push_back("register " + std::to_string(addr) + " differs");
      }
    }
  }
  for (int l = 0; l < kLayers; ++l) {
    const auto got = dev.kernel_bytes(l);
    if (!is_active(raw, l)) {
      if (got) issues.push_back("inactive layer " + std::to_string(l) + " has kernel memory");
      continue;
    }
    const auto want = raw_kernel_bytes(raw, l);
    if (!got || !std::equal(got->begin(), got->end(), want.begin(), want.end())) {
      issues.push_back("kernel of layer " + std::to_string(l) + " differs");
    }
  }
  return issues;
}

// ---------------------------------------------------------------------------
// Readout loop over SPI.

// MCU side of the readout loop: count reads from 0x213/0x214 (low, high) and
// neuron selection through 0x20B, answered by a register responder backed by
// a ReadoutCore. Satisfies ReadoutBus.
class SpiReadoutBus {
 public:
  explicit SpiReadoutBus(ReadoutCore& core, bool record = false) : core_(core), record_(record) {}

  void toggle_sclk() { core_.sclk_tick(); }

  std::uint16_t read_count() {
    const auto lo = transfer(frame_read(kRegCountLow, 1));
    const auto hi = transfer(frame_read(kRegCountHigh, 1));
    return static_cast<std::uint16_t>(lo[3] | (hi[3] << 8));
  }

  void select(int idx) { transfer(frame_write(kRegNextNeuron, next_neuron_command(idx))); }

  // Every transmitted frame, length-prefixed.
  const EncodedStream& transcript() const { return transcript_; }
  std::size_t transactions() const { return transactions_; }

 private:
  // Device side: fills read payloads, applies writes.
  Bytes transfer(Bytes frame) {
    ++transactions_;
    if (record_) append_frame(transcript_, frame);
    const auto t = parse_frame(frame);
    if (t.mode == SpiMode::read) {
      const std::uint16_t count = core_.read_monitored();
      for (std::size_t i = 0; i < t.payload.size(); ++i) {
        const auto addr = static_cast<std::uint16_t>(t.addr + i);
        if (addr == kRegCountLow) frame[3 + i] = static_cast<std::uint8_t>(count & 0xFF);
        if (addr == kRegCountHigh) frame[3 + i] = static_cast<std::uint8_t>(count >> 8);
      }
    } else if (t.mode == SpiMode::write && t.addr == kRegNextNeuron) {
      core_.select(neuron_from_command(t.payload.at(0)));
    }
    return frame;
  }

  ReadoutCore& core_;
  bool record_;
  EncodedStream transcript_;
  std::size_t transactions_ = 0;
};

}  // namespace pupiltrack::protocol
