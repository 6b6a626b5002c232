// pupiltrack: synthesize recordings, simulate the pipeline, train and
// calibrate the decoder, and encode device configurations.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pupiltrack/pupiltrack.hpp"

namespace pt = pupiltrack;

namespace {

// Flags shared by the pipeline-facing subcommands. Command-line values
// override the config file.
struct PipelineFlags {
  std::string config_path;
  std::optional<std::int64_t> dt_us;
  std::optional<std::int64_t> sclk_us;
  std::optional<std::string> mode;
  std::optional<std::string> variant;
  std::optional<std::string> weights;
  std::optional<std::string> network;
  std::optional<std::uint64_t> seed;
  bool bypass = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value pipeline config file");
    app->add_option("--dt-us", dt_us, "window length in microseconds");
    app->add_option("--sclk-us", sclk_us, "SCLK period in microseconds");
    app->add_option("--mode", mode, "spike mode: on-chip or off-chip");
    app->add_option("--variant", variant, "uncertainty head: none, shared or per-axis");
    app->add_option("--weights", weights, "decoder parameter file");
    app->add_option("--network", network, "network description file");
    app->add_option("--seed", seed, "random seed");
    app->add_flag("--bypass-readout", bypass, "decode core output counts directly");
  }

  pt::PipelineConfig resolve() const {
    pt::PipelineConfig cfg;
    if (!config_path.empty()) cfg = pt::load_pipeline_config(config_path);
    if (dt_us) cfg.dt_us = *dt_us;
    if (sclk_us) cfg.sclk_period_us = *sclk_us;
    if (mode) cfg.mode = pt::parse_mode(*mode);
    if (variant) cfg.variant = pt::parse_variant(*variant);
    if (weights) cfg.decoder_path = *weights;
    if (network) cfg.network_path = *network;
    if (seed) cfg.seed = *seed;
    if (bypass) cfg.bypass_readout = true;
    cfg.validate();
    return cfg;
  }
};

std::string loss_curve_csv(const pt::TrainResult& r) {
  std::string out = "epoch,loss\n0," + pt::text::format_double(r.initial_loss) + "\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    out += std::to_string(e + 1) + ',' + pt::text::format_double(r.epoch_loss[e]) + '\n';
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-driven pupil tracking pipeline simulator"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic recording (<out>.events.csv, <out>.track.csv)");
  std::string synth_out;
  double synth_duration = 5.0;
  double synth_noise = 0.0;
  double synth_radius = 12.0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output prefix")->required();
  synth->add_option("--duration-s", synth_duration, "recording length in seconds");
  synth->add_option("--noise-hz", synth_noise, "background event rate over the array");
  synth->add_option("--radius-px", synth_radius, "pupil radius");
  synth->add_option("--seed", synth_seed, "random seed");

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the pipeline over an event file");
  PipelineFlags sim_flags;
  sim_flags.attach(sim);
  std::string sim_events;
  std::string sim_truth;
  std::string sim_out;
  sim->add_option("--events", sim_events, "event CSV (t_us,x,y,p)")->required();
  sim->add_option("--truth", sim_truth, "ground-truth track CSV (t_us,x_px,y_px)");
  sim->add_option("--out", sim_out, "output prefix for report, trace and summary CSVs")->required();

  // train-decoder
  auto* train = app.add_subcommand("train-decoder", "train the decoder on a dataset directory");
  PipelineFlags train_flags;
  train_flags.attach(train);
  std::string train_dataset;
  std::string train_out;
  std::string train_kind = "gated";
  pt::TrainOptions train_opt;
  train->add_option("--dataset", train_dataset, "directory of <name>.events.csv / <name>.track.csv pairs")
      ->required();
  train->add_option("--out", train_out, "output prefix")->required();
  train->add_option("--kind", train_kind, "gated, direct or both");
  train->add_option("--epochs", train_opt.epochs, "training epochs");
  train->add_option("--lr", train_opt.lr, "learning rate");
  train->add_option("--weight-decay", train_opt.weight_decay, "decoupled weight decay");
  train->add_option("--chunk", train_opt.chunk_length, "truncated BPTT length in windows");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "reliability curve and error-vs-confidence from a trace");
  std::string cal_trace;
  std::string cal_truth;
  std::string cal_out;
  cal->add_option("--trace", cal_trace, "prediction trace CSV")->required();
  cal->add_option("--truth", cal_truth, "ground-truth track CSV")->required();
  cal->add_option("--out", cal_out, "output prefix")->required();

  // encode-config
  auto* enc = app.add_subcommand("encode-config", "compress and encode a raw device configuration");
  std::string enc_raw;
  std::string enc_out;
  bool enc_init = false;
  bool enc_verify = false;
  enc->add_option("--raw", enc_raw, "raw configuration blob")->required();
  enc->add_option("--out", enc_out, "encoded stream file")->required();
  enc->add_flag("--init", enc_init, "append the initialization writes");
  enc->add_flag("--verify", enc_verify, "decode the stream again and compare with the raw config");

  // make-raw
  auto* raw = app.add_subcommand("make-raw", "write a synthetic raw configuration blob");
  std::string raw_out;
  std::uint64_t raw_seed = 0;
  raw->add_option("--out", raw_out, "output file")->required();
  raw->add_option("--seed", raw_seed, "random seed");

  // make-network
  auto* mknet = app.add_subcommand("make-network", "write a quantized network description");
  std::string net_out;
  std::string net_kind = "stripe";
  std::uint64_t net_seed = 0;
  mknet->add_option("--out", net_out, "description file; weights go to <stem>.bin")->required();
  mknet->add_option("--kind", net_kind, "stripe or reference (random weights)");
  mknet->add_option("--seed", net_seed, "random seed for reference weights");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto rec = pt::synth_recording(synth_seed, synth_duration, synth_noise, synth_radius);
      pt::write_events(synth_out + ".events.csv", rec.events);
      pt::write_track(synth_out + ".track.csv", rec.track);
      std::cout << "events " << rec.events.size() << "\nsamples " << rec.track.samples.size() << '\n';
    } else if (*sim) {
      const auto cfg = sim_flags.resolve();
      const auto net = pt::load_pipeline_network(cfg);
      const auto decoder = pt::load_pipeline_decoder(cfg);
      const auto events = pt::read_events(sim_events);
      std::optional<pt::GroundTruthTrack> truth;
      if (!sim_truth.empty()) truth = pt::read_track(sim_truth);
      const auto report = pt::simulate(cfg, net, decoder, events, truth ? &*truth : nullptr);
      pt::text::write_file(sim_out + ".report.csv", pt::format_report_csv(report));
      pt::text::write_file(sim_out + ".trace.csv", pt::format_run_trace(report));
      const auto summary = pt::format_summary_csv(report);
      pt::text::write_file(sim_out + ".summary.csv", summary);
      std::cout << summary;
    } else if (*train) {
      const auto cfg = train_flags.resolve();
      const auto net = pt::load_pipeline_network(cfg);
      const auto dataset = pt::load_dataset(cfg, net, train_dataset);
      train_opt.variant = cfg.variant;
      train_opt.seed = cfg.seed;
      std::vector<pt::DecoderKind> kinds;
      if (train_kind == "both") {
        kinds = {pt::DecoderKind::gated, pt::DecoderKind::direct};
      } else {
        kinds = {pt::parse_kind(train_kind)};
      }
      for (const auto kind : kinds) {
        train_opt.kind = kind;
        const auto result = pt::train_decoder(dataset, train_opt);
        const std::string prefix = train_out + "." + pt::to_string(kind);
        pt::save_decoder(prefix + ".params", result.params);
        pt::text::write_file(prefix + ".loss.csv", loss_curve_csv(result));
        std::cout << pt::to_string(kind) << " initial_loss " << result.initial_loss << " final_loss "
                  << (result.epoch_loss.empty() ? result.initial_loss : result.epoch_loss.back()) << '\n';
      }
    } else if (*cal) {
      pt::UncertaintyVariant variant{};
      const auto rows = pt::parse_trace_csv(pt::text::read_file(cal_trace), &variant);
      if (variant == pt::UncertaintyVariant::none) throw pt::ValidationError("trace has no uncertainty column");
      if (rows.empty()) throw pt::ValidationError("empty trace");
      const auto track = pt::read_track(cal_truth);
      std::vector<pt::Prediction> preds;
      std::vector<pt::Point2> truths;
      for (const auto& r : rows) {
        preds.push_back(r.prediction);
        truths.push_back(pt::normalized_truth(track, r.t_us));
      }
      const auto curve = pt::calibration_curve(preds, truths);
      std::string c = "expected,observed\n";
      for (std::size_t i = 0; i < curve.expected.size(); ++i) {
        c += pt::text::format_double(curve.expected[i]) + ',' + pt::text::format_double(curve.observed[i]) + '\n';
      }
      pt::text::write_file(cal_out + ".calibration.csv", c);
      const auto conf = pt::error_vs_confidence(preds, truths);
      std::string e = "percentile,median_error_px\n";
      for (std::size_t k = 0; k < conf.size(); ++k) {
        e += std::to_string(pt::kConfidencePercentiles[k]) + ',' + pt::text::format_double(conf[k]) + '\n';
      }
      pt::text::write_file(cal_out + ".confidence.csv", e);
      std::cout << "calibration_mse " << curve.mse << '\n';
    } else if (*enc) {
      const pt::protocol::RawConfig raw_cfg{pt::text::read_binary(enc_raw)};
      auto stream = pt::protocol::encode_config(pt::protocol::compress_config(raw_cfg));
      if (enc_init) {
        const auto init = pt::protocol::init_sequence();
        stream.insert(stream.end(), init.begin(), init.end());
      }
      pt::text::write_binary(enc_out, stream);
      std::cout << "bytes " << stream.size() << "\nframes " << pt::protocol::split_frames(stream).size() << '\n';
      if (enc_verify) {
        const auto written = pt::text::read_binary(enc_out);
        const auto dev = pt::protocol::decode_stream(written);
        auto issues = pt::protocol::verify_roundtrip(raw_cfg, dev);
        if (written != stream) issues.insert(issues.begin(), "file bytes differ from the encoded stream");
        if (enc_init && dev.reg(pt::protocol::kRegControl) != pt::protocol::kInitCommands.back()) {
          issues.push_back("control register does not hold the last init command");
        }
        for (const auto& s : issues) std::cerr << "mismatch: " << s << '\n';
        if (!issues.empty()) return 3;
        std::cout << "verify ok\n";
      }
    } else if (*raw) {
      std::mt19937_64 rng(raw_seed);
      pt::protocol::RawConfigBuilder b;
      b.randomize(raw_seed);
      for (int l = 0; l < pt::protocol::kLayers; ++l) b.set_dest(l, 0);
      std::uniform_int_distribution<int> small(0, 15);
      std::uniform_int_distribution<int> bit(0, 1);
      std::uniform_int_distribution<int> byte(0, 255);
      std::uint8_t mask = 0;
      for (int l = 0; l < pt::protocol::kLayers; ++l) {
        const pt::protocol::LayerFields f{small(rng) % 3, small(rng), small(rng)};
        b.set_layer(l, f);
        if (bit(rng)) {
          mask = static_cast<std::uint8_t>(mask | (1 << l));
          std::vector<std::uint8_t> kernel(pt::protocol::kernel_mem_size(f));
          for (auto& k : kernel) k = static_cast<std::uint8_t>(byte(rng));
          b.set_kernel(l, kernel);
        }
      }
      b.set_active_mask(mask);
      pt::text::write_binary(raw_out, b.build().bytes);
      std::cout << "bytes " << b.build().bytes.size() << "\nactive_mask " << int{mask} << '\n';
    } else if (*mknet) {
      pt::QuantizedNetwork q;
      if (net_kind == "stripe") {
        q = pt::default_network();
      } else if (net_kind == "reference") {
        auto net = pt::build_reference_network();
        pt::randomize_weights(net, net_seed, 0.5);
        q = pt::quantize_network(net);
      } else {
        throw pt::ValidationError("unknown network kind '" + net_kind + "'");
      }
      pt::save_network(net_out, q);
      std::size_t params = 0;
      for (const auto& s : q.specs) params += s.weight_count();
      std::cout << "layers " << q.specs.size() << "\nparameters " << params << '\n';
    }
  } catch (const pt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
