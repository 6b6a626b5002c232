#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "json.hpp"
#include "oracles.hpp"
#include "pupiltrack/protocol.hpp"
#include "pupiltrack/text_io.hpp"

using namespace pupiltrack;
using namespace pupiltrack::protocol;

namespace {

Bytes fixture(const std::string& name) { return text::read_binary(std::string(PUPILTRACK_FIXTURES) + "/" + name); }

// Random image with small in-range layer parameters and random activity bits.
RawConfig random_raw(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> k(0, 3);
  std::uniform_int_distribution<int> ch(0, 15);
  RawConfigBuilder b(kKernel[8] + 0x1000);
  b.randomize(seed * 7919 + 1);
  for (int l = 0; l < kLayers; ++l) b.set_layer(l, {k(rng), ch(rng), ch(rng)});
  return b.build();
}

}  // namespace

TEST(Framing, Examples) {
  EXPECT_EQ(frame_write(0x0102, 0xAB), (Bytes{0x80, 0x01, 0x02, 0xAB}));
  EXPECT_EQ(frame_read(0x0213, 1), (Bytes{0x00, 0x02, 0x13, 0x00}));
  EXPECT_EQ(frame_command(SpiMode::write, 0x0001), (Bytes{0x80, 0x00, 0x01}));
  EXPECT_EQ(next_neuron_command(5), 0x97);
  EXPECT_EQ(next_neuron_command(0), 0x83);
  EXPECT_EQ(next_neuron_command(15), 0xBF);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(neuron_from_command(next_neuron_command(i)), i);
  EXPECT_THROW(next_neuron_command(16), ValidationError);
}

TEST(Framing, ParseInvertsSerialize) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> mode(0, 2);
  std::uniform_int_distribution<int> len(0, 40);
  Bytes stream;
  std::vector<SpiTransaction> all;
  for (int i = 0; i < 2000; ++i) {
    SpiTransaction t;
    t.mode = static_cast<SpiMode>(mode(rng));
    t.addr = static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng));
    t.payload.resize(static_cast<std::size_t>(len(rng)));
    for (auto& b : t.payload) b = static_cast<std::uint8_t>(byte(rng));
    ASSERT_EQ(parse_frame(serialize(t)), t);
    append_frame(stream, serialize(t));
    all.push_back(t);
  }
  const auto frames = split_frames(stream);
  ASSERT_EQ(frames.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(parse_frame(frames[i].bytes), all[i]);
}

TEST(Framing, ErrorsCarryOffsets) {
  Bytes s;
  append_frame(s, frame_write(0x10, 1));
  const std::size_t second = s.size();

  Bytes truncated = s;
  truncated.insert(truncated.end(), {0, 0});
  try {
    split_frames(truncated);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), second);
  }

  Bytes short_frame = s;
  short_frame.insert(short_frame.end(), {0, 0, 0, 2, 0x80, 0});
  try {
    split_frames(short_frame);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), second);
  }

  Bytes overrun = s;
  overrun.insert(overrun.end(), {0, 0, 0, 9, 0x80, 0, 0});
  EXPECT_THROW(split_frames(overrun), ParseError);

  Bytes bad_mode = s;
  append_frame(bad_mode, Bytes{0x40, 0, 0, 1});
  try {
    decode_stream(bad_mode);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), second);
  }

  Bytes bad_length;
  append_register_write(bad_length, 0x1, 5);
  append_frame(bad_length, frame_command(SpiMode::memory_write, 0, Bytes(4, 0xAA)));
  EXPECT_THROW(decode_stream(bad_length), ParseError);
}

TEST(KernelMem, Examples) {
  EXPECT_EQ(kernel_mem_size(LayerFields{2, 1, 3}), 70u);
  EXPECT_EQ(kernel_mem_size(LayerFields{0, 0, 0}), 1u);
  EXPECT_EQ(bit_width_of(0), 0);
  EXPECT_EQ(bit_width_of(1), 1);
  EXPECT_EQ(bit_width_of(4), 3);
}

TEST(KernelMem, MatchesBitPackingOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> k(0, 15);
  std::uniform_int_distribution<int> ch(0, 1023);
  for (int i = 0; i < 5000; ++i) {
    const LayerFields f{k(rng), ch(rng), ch(rng)};
    ASSERT_EQ(kernel_mem_size(f), oracle::packed_kmem(f.k_s, f.c_in, f.c_out));
  }
  for (int k_s = 0; k_s < 4; ++k_s) {
    for (int c_in = 0; c_in < 20; ++c_in) {
      for (int c_out = 0; c_out < 20; ++c_out) {
        ASSERT_EQ(kernel_mem_size(LayerFields{k_s, c_in, c_out}), oracle::packed_kmem(k_s, c_in, c_out));
      }
    }
  }
}

TEST(KernelMem, MonotoneInKernelAndOutputChannels) {
  for (int k_s = 0; k_s < 15; ++k_s) {
    for (int c_in = 0; c_in < 40; ++c_in) {
      for (int c_out = 0; c_out < 40; ++c_out) {
        const auto base = kernel_mem_size(LayerFields{k_s, c_in, c_out});
        ASSERT_LE(base, kernel_mem_size(LayerFields{k_s + 1, c_in, c_out}));
        ASSERT_LE(base, kernel_mem_size(LayerFields{k_s, c_in, c_out + 1}));
      }
    }
  }
  // The OR with C_in + 1 is not monotone in C_in.
  EXPECT_EQ(kernel_mem_size(LayerFields{0, 2, 1}), 7u);
  EXPECT_EQ(kernel_mem_size(LayerFields{0, 3, 1}), 4u);
}

TEST(KernelMem, ReadsFieldsFromRaw) {
  RawConfigBuilder b;
  b.randomize(3).set_layer(4, {5, 700, 321});
  EXPECT_EQ(layer_fields(b.build(), 4), (LayerFields{5, 700, 321}));
  EXPECT_THROW(layer_fields(b.build(), 9), ValidationError);
  EXPECT_THROW(b.set_layer(0, {16, 0, 0}), ValidationError);
}

TEST(Activity, Predicate) {
  RawConfigBuilder b;
  for (int l = 0; l < kLayers; ++l) EXPECT_FALSE(is_active(b.build(), l));
  b.set_active_mask(0b00000100);
  EXPECT_TRUE(is_active(b.build(), 2));
  EXPECT_FALSE(is_active(b.build(), 3));
  b.set_dest(5, 0b11);
  EXPECT_TRUE(is_active(b.build(), 5));
  EXPECT_EQ(b.build().bytes[kRStart + 0x0A], 0b11 << 2);
  b.set_dest(8, 0b10);
  EXPECT_TRUE(is_active(b.build(), 8));
}

TEST(Compress, RecordLayout) {
  RawConfigBuilder b;
  auto c = compress_config(b.build());
  EXPECT_EQ(c.bytes.size(), kKernelStart + 45);
  for (int l = 0; l < kLayers; ++l) {
    const std::size_t at = kKernelStart + 5 * static_cast<std::size_t>(l);
    EXPECT_EQ(c.bytes[at], l);
    EXPECT_EQ(c.bytes[at + 1] | c.bytes[at + 2] | c.bytes[at + 3] | c.bytes[at + 4], 0);
  }

  Bytes kernel(70);
  for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = static_cast<std::uint8_t>(i + 1);
  b.set_layer(0, {2, 1, 3}).set_active_mask(1).set_kernel(0, kernel);
  c = compress_config(b.build());
  EXPECT_EQ(c.bytes.size(), kKernelStart + 75 + 8 * 5);
  EXPECT_EQ(c.bytes[kKernelStart + 1], 70);
  EXPECT_EQ(c.bytes[kKernelStart + 2], 0);
  EXPECT_EQ(c.bytes[kKernelStart + 3], 1);
  EXPECT_EQ(compress_config(b.build()).bytes, c.bytes);

  const auto parsed = parse_compressed(c);
  ASSERT_EQ(parsed.records.size(), 9u);
  EXPECT_EQ(parsed.records[0].kernel, kernel);

  // An active layer whose kernel runs past the image.
  RawConfigBuilder small;
  small.set_layer(1, {1, 1, 1}).set_active_mask(0b10);
  EXPECT_THROW(compress_config(small.build()), ValidationError);
}

TEST(Compress, ParseErrors) {
  auto c = compress_config(RawConfigBuilder{}.build());
  auto bad = c;
  bad.bytes[kKernelStart + 5] = 12;
  EXPECT_THROW(parse_compressed(bad), ValidationError);
  bad = c;
  bad.bytes.resize(bad.bytes.size() - 5);
  EXPECT_THROW(parse_compressed(bad), ValidationError);
  bad = c;
  bad.bytes.pop_back();
  EXPECT_THROW(parse_compressed(bad), ParseError);
}

TEST(Encode, LayoutExamples) {
  Bytes kernel(70, 0x5A);
  RawConfigBuilder b;
  b.randomize(4);
  for (int l = 0; l < kLayers; ++l) b.set_dest(l, 0);
  b.set_active_mask(1).set_layer(0, {2, 1, 3}).set_kernel(0, kernel);
  const auto raw = b.build();
  const auto s = encode_config(compress_config(raw));
  const auto frames = split_frames(s);

  std::size_t register_frames = 0;
  for (const auto& row : kRegisterRows) register_frames += row.count;
  ASSERT_EQ(frames.size(), register_frames + 7);
  EXPECT_EQ(parse_frame(frames[0].bytes), (SpiTransaction{SpiMode::write, 0x0000, {raw.bytes[0x40]}}));
  EXPECT_EQ(parse_frame(frames[33].bytes).addr, 0x0021);
  EXPECT_EQ(parse_frame(frames[34].bytes).addr, 0x0600);

  const auto mem = std::span(frames).subspan(register_frames);
  EXPECT_EQ(parse_frame(mem[0].bytes), (SpiTransaction{SpiMode::write, 0x6, {0x22}}));
  EXPECT_EQ(parse_frame(mem[1].bytes), (SpiTransaction{SpiMode::write, 0x5, {0x00}}));
  EXPECT_EQ(parse_frame(mem[2].bytes), (SpiTransaction{SpiMode::write, 0x4, {0x00}}));
  EXPECT_EQ(parse_frame(mem[5].bytes), (SpiTransaction{SpiMode::write, 0x1, {70}}));
  const std::size_t bulk = mem[6].offset;
  EXPECT_EQ(Bytes(s.begin() + static_cast<std::ptrdiff_t>(bulk), s.begin() + static_cast<std::ptrdiff_t>(bulk + 7)),
            (Bytes{0x00, 0x00, 0x00, 0x49, 0xE0, 0x00, 0x00}));
  EXPECT_EQ(s.size(), bulk + 4 + 73);
}

TEST(Init, Sequence) {
  const auto s = init_sequence();
  const auto frames = split_frames(s);
  ASSERT_EQ(frames.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(Bytes(s.begin() + static_cast<std::ptrdiff_t>(8 * i), s.begin() + static_cast<std::ptrdiff_t>(8 * i + 8)),
              (Bytes{0, 0, 0, 4, 0x80, 0, 0, kInitCommands[i]}));
  }
  EXPECT_EQ(decode_stream(s).reg(0x0), 0xF1);
  EXPECT_EQ(parse_frame(frames[0].bytes).payload, Bytes{0x01});
}

TEST(Golden, FixtureBytes) {
  const RawConfig raw{fixture("protocol_raw.bin")};
  const auto c = compress_config(raw);
  EXPECT_EQ(c.bytes, fixture("protocol_compressed.bin"));
  auto enc = encode_config(c);
  EXPECT_EQ(enc, fixture("protocol_encoded.bin"));
  const auto init = init_sequence();
  enc.insert(enc.end(), init.begin(), init.end());
  EXPECT_EQ(enc, fixture("protocol_encoded_init.bin"));

  std::ifstream in(std::string(PUPILTRACK_FIXTURES) + "/protocol_meta.json");
  const auto meta = nlohmann::json::parse(in);
  for (int l = 0; l < kLayers; ++l) {
    const bool want = std::find(meta["active_layers"].begin(), meta["active_layers"].end(), l) !=
                      meta["active_layers"].end();
    EXPECT_EQ(is_active(raw, l), want) << l;
    if (want) {
      EXPECT_EQ(kernel_mem_size(raw, l), meta["k_mem"][std::to_string(l)].get<std::uint32_t>());
    }
  }
  const auto dev = decode_stream(enc);
  EXPECT_TRUE(verify_roundtrip(raw, dev).empty());
  EXPECT_EQ(dev.memory_bank_count(), 4u);
}

TEST(Roundtrip, RandomRawConfigs) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto raw = random_raw(seed);
    const auto dev = decode_stream(encode_config(compress_config(raw)));
    const auto issues = verify_roundtrip(raw, dev);
    ASSERT_TRUE(issues.empty()) << "seed " << seed << ": " << issues.front();
    for (const auto& row : kRegisterRows) {
      for (std::uint16_t i = 0; i < row.count; ++i) {
        ASSERT_EQ(dev.register_history(static_cast<std::uint16_t>(row.reg + i)).front(), raw.bytes[row.config + i]);
      }
    }
    for (int l = 0; l < kLayers; ++l) {
      if (!is_active(raw, l)) continue;
      const auto k = raw_kernel_bytes(raw, l);
      ASSERT_EQ(*dev.kernel_bytes(l), Bytes(k.begin(), k.end()));
    }
  }
}

TEST(Roundtrip, DetectsCorruption) {
  const auto raw = random_raw(5);
  auto enc = encode_config(compress_config(raw));
  enc.back() ^= 0xFF;  // last kernel byte of the last active layer
  EXPECT_FALSE(verify_roundtrip(raw, decode_stream(enc)).empty());
}
