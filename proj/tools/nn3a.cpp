// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command line front end: enhance / train / simulate / eval / ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nn3a/nn3a.hpp>

namespace fs = std::filesystem;

namespace {

// sidecar path convention: foo.wav -> foo.vad.jsonl
std::string vad_sidecar(const std::string& wav_path) {
  std::string p = wav_path;
  if (p.size() > 4 && p.substr(p.size() - 4) == ".wav") {
    p = p.substr(0, p.size() - 4);
  }
  return p + ".vad.jsonl";
}

void write_vad_jsonl(const std::string& path,
                     const std::vector<double>& vad, int hop_len,
                     int sample_rate) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) nn3a::fail(nn3a::ErrorKind::Io, "cannot write " + path);
  for (size_t t = 0; t < vad.size(); ++t) {
    nlohmann::json j;
    j["frame"] = t;
    j["time_s"] = static_cast<double>(t) * hop_len / sample_rate;
    j["vad"] = vad[t];
    out << j.dump() << "\n";
  }
}

void write_debug_jsonl(const std::string& path,
                       const std::vector<nn3a::FrameDebug>& debug) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) nn3a::fail(nn3a::ErrorKind::Io, "cannot write " + path);
  for (size_t t = 0; t < debug.size(); ++t) {
    nlohmann::json j;
    j["frame"] = t;
    j["erle_so_far_db"] = debug[t].erle_so_far_db;
    j["tap_norm"] = debug[t].tap_norm;
    j["gamma_mean"] = debug[t].gamma_mean;
    j["gamma_max"] = debug[t].gamma_max;
    out << j.dump() << "\n";
  }
}

nn3a::TimeSignal read_pipeline_wav(const std::string& path) {
  nn3a::TimeSignal sig = nn3a::read_wav(path);
  if (sig.sample_rate != nn3a::kDefaultSampleRate) {
    nn3a::fail(nn3a::ErrorKind::Config,
               path + ": expected 16 kHz input, got " +
                   std::to_string(sig.sample_rate) + " Hz");
  }
  return sig;
}

struct EnhanceArgs {
  std::string mic, farend, out;
  std::string vad_out, debug_jsonl, model_path, input_set, oracle_near;
  double max_delay_ms = 500.0;
  std::optional<double> delay_ms;
  bool no_delay_comp = false;
  bool bypass_model = false;
  bool linear_only = false;
  bool no_agc = false;
  int taps = 5;
  double beta = 0.2;
  double lambda = 0.995;
  double eps = 1e-3;
  double agc_target_dbfs = -6.0;
  double agc_max_gain_db = 18.0;
};

int run_enhance(const EnhanceArgs& args) {
  nn3a::PipelineConfig cfg;
  cfg.wrls.taps = args.taps;
  cfg.wrls.beta = args.beta;
  cfg.wrls.lambda = args.lambda;
  cfg.wrls.eps = args.eps;
  cfg.agc.target_peak_dbfs = args.agc_target_dbfs;
  cfg.agc.max_gain_db = args.agc_max_gain_db;
  cfg.no_agc = args.no_agc || args.linear_only;
  cfg.bypass_model = args.bypass_model || args.linear_only;
  cfg.max_delay_samples = static_cast<int>(
      args.max_delay_ms * nn3a::kDefaultSampleRate / 1000.0);
  if (args.no_delay_comp) {
    cfg.delay_mode = nn3a::DelayMode::Off;
  } else if (args.delay_ms.has_value()) {
    cfg.delay_mode = nn3a::DelayMode::Fixed;
    cfg.fixed_delay_samples = static_cast<int>(
        *args.delay_ms * nn3a::kDefaultSampleRate / 1000.0);
  }
  cfg.collect_debug = !args.debug_jsonl.empty();

  const nn3a::TimeSignal mic = read_pipeline_wav(args.mic);
  const nn3a::TimeSignal farend = read_pipeline_wav(args.farend);

  std::optional<nn3a::ModelFile> model;
  if (!args.model_path.empty()) {
    model = nn3a::load_params(args.model_path);
    if (!args.input_set.empty() &&
        nn3a::input_set_from_string(args.input_set) !=
            model->config.input_set) {
      nn3a::fail(nn3a::ErrorKind::Config,
                 "--input-set " + args.input_set +
                     " does not match the weight file (" +
                     nn3a::to_string(model->config.input_set) + ")");
    }
  } else if (!args.input_set.empty()) {
    nn3a::fail(nn3a::ErrorKind::Config, "--input-set requires --model");
  }
  if (model.has_value() && !cfg.bypass_model) {
    cfg.stft = nn3a::make_stft_config(model->stft_win_len,
                                      model->stft_hop_len,
                                      model->stft_fft_len);
  } else {
    cfg.bypass_model = true;
  }

  std::optional<nn3a::TimeSignal> oracle;
  if (!args.oracle_near.empty()) {
    oracle = read_pipeline_wav(args.oracle_near);
  }

  nn3a::EnhanceResult result = nn3a::enhance_signals(
      mic, farend, model.has_value() ? &*model : nullptr, cfg,
      oracle.has_value() ? &*oracle : nullptr);

  nn3a::write_wav(args.out, result.enhanced);
  const std::string vad_path =
      args.vad_out.empty() ? vad_sidecar(args.out) : args.vad_out;
  write_vad_jsonl(vad_path, result.vad, cfg.stft.hop_len,
                  nn3a::kDefaultSampleRate);
  if (!args.debug_jsonl.empty()) {
    write_debug_jsonl(args.debug_jsonl, result.debug);
  }
  std::cout << "enhanced " << args.mic << " -> " << args.out
            << " (delay " << result.delay.lag << " samples, confidence "
            << result.delay.confidence << ")\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data,
              const std::string& out_path, const std::string& curve_out) {
  const nn3a::StftConfig stft_cfg = nn3a::make_stft_config();
  nn3a::TrainFileConfig cfg =
      nn3a::parse_train_config(config_path, stft_cfg.num_bins());

  std::string manifest = data;
  if (fs::is_directory(data)) {
    manifest = (fs::path(data) / "manifest.jsonl").string();
  }
  std::vector<nn3a::TrainingExample> dataset = nn3a::prepare_training_data(
      manifest, cfg.model, stft_cfg, cfg.wrls, cfg.max_utterances);
  std::cout << "training on " << dataset.size() << " utterances, "
            << cfg.train.steps << " steps\n";

  nn3a::TrainResult result =
      nn3a::train_toy(dataset, cfg.model, cfg.loss, cfg.train);

  nn3a::ModelFile file;
  file.config = cfg.model;
  file.stft_win_len = stft_cfg.win_len;
  file.stft_hop_len = stft_cfg.hop_len;
  file.stft_fft_len = stft_cfg.fft_len;
  file.params = result.params;
  nn3a::save_params(file, out_path);

  if (!curve_out.empty()) {
    std::ofstream curve(curve_out, std::ios::trunc);
    for (size_t i = 0; i < result.curve.size(); ++i) {
      nlohmann::json j;
      j["step"] = i;
      j["total"] = result.curve[i].total;
      j["mask_loss"] = result.curve[i].mask_loss;
      j["vad_loss"] = result.curve[i].vad_loss;
      curve << j.dump() << "\n";
    }
  }
  std::cout << "saved " << out_path << " ("
            << result.params.parameter_count() << " parameters)\n";
  if (!result.curve.empty()) {
    std::cout << "loss " << result.curve.front().total << " -> "
              << result.curve.back().total << "\n";
  }
  return 0;
}

int run_simulate(const std::string& out_dir, int count, int fe_st,
                 uint64_t seed, double duration_s,
                 const std::string& speech_dir,
                 const std::string& noise_dir) {
  nn3a::DatasetSources sources;
  if (!speech_dir.empty()) sources.speech_files = nn3a::list_wavs(speech_dir);
  if (!noise_dir.empty()) sources.noise_files = nn3a::list_wavs(noise_dir);
  const std::string manifest = nn3a::simulate_dataset(
      out_dir, count, seed, duration_s, nn3a::MixtureRanges{}, sources, fe_st);
  std::cout << "wrote " << (count + fe_st) << " utterances, manifest "
            << manifest << "\n";
  return 0;
}

int run_eval_cmd(const std::string& manifest, const std::string& processed_dir,
                 const std::string& report_path) {
  nlohmann::json report = nn3a::run_eval(manifest, processed_dir);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) nn3a::fail(nn3a::ErrorKind::Io, "cannot write " + report_path);
    out << report.dump(2) << "\n";
  }
  std::cout << report["aggregate"].dump(2) << "\n";
  return 0;
}

int run_ablate(const std::string& manifest_path,
               const std::vector<std::string>& model_specs,
               const std::string& workdir, const std::string& report_path) {
  const auto entries = nn3a::read_manifest(manifest_path);

  nlohmann::json rows = nlohmann::json::array();
  for (const std::string& spec : model_specs) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos) {
      nn3a::fail(nn3a::ErrorKind::Config,
                 "--model expects name=weights.nn3a, got " + spec);
    }
    const std::string name = spec.substr(0, eq);
    const std::string model_path = spec.substr(eq + 1);
    const nn3a::ModelFile model = nn3a::load_params(model_path);

    nn3a::PipelineConfig cfg;
    cfg.stft = nn3a::make_stft_config(model.stft_win_len, model.stft_hop_len,
                                      model.stft_fft_len);
    cfg.no_agc = true;  // comparable level across configurations

    const std::string out_dir = (fs::path(workdir) / name).string();
    fs::create_directories(out_dir);
    for (const auto& entry : entries) {
      const nn3a::TimeSignal mic = read_pipeline_wav(entry.mic);
      const nn3a::TimeSignal farend = read_pipeline_wav(entry.farend);
      nn3a::EnhanceResult result =
          nn3a::enhance_signals(mic, farend, &model, cfg);
      const std::string out_wav =
          (fs::path(out_dir) / (entry.id + "_enhanced.wav")).string();
      nn3a::write_wav(out_wav, result.enhanced);
      write_vad_jsonl(vad_sidecar(out_wav), result.vad, cfg.stft.hop_len,
                      nn3a::kDefaultSampleRate);
    }

    nlohmann::json eval = nn3a::run_eval(manifest_path, out_dir, cfg.stft);
    nlohmann::json row;
    row["name"] = name;
    row["model"] = model_path;
    row["input_set"] = nn3a::to_string(model.config.input_set);
    row["aggregate"] = eval["aggregate"];
    rows.push_back(row);
  }

  nlohmann::json report;
  report["rows"] = rows;
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) nn3a::fail(nn3a::ErrorKind::Io, "cannot write " + report_path);
    out << report.dump(2) << "\n";
  }

  std::printf("%-12s %-6s %12s %12s %12s\n", "config", "inputs",
              "NE_ST sisdr", "FE_ST erle", "DT sisdr");
  for (const auto& row : rows) {
    auto cell = [&row](const char* scenario, const char* key) {
      const auto& agg = row["aggregate"];
      if (agg.contains(scenario) && agg[scenario].contains(key)) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f",
                      agg[scenario][key].get<double>());
        return std::string(buf);
      }
      return std::string("-");
    };
    std::printf("%-12s %-6s %12s %12s %12s\n",
                row["name"].get<std::string>().c_str(),
                row["input_set"].get<std::string>().c_str(),
                cell("NE_ST", "si_sdr_db").c_str(),
                cell("FE_ST", "erle_db").c_str(),
                cell("DT", "si_sdr_db").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming echo cancellation, noise suppression and gain "
               "control pipeline"};
  app.require_subcommand(1);

  EnhanceArgs en;
  CLI::App* enhance = app.add_subcommand(
      "enhance", "process a mic/far-end pair into an enhanced wav");
  enhance->add_option("--mic", en.mic, "microphone wav")->required();
  enhance->add_option("--farend", en.farend, "far-end reference wav")
      ->required();
  enhance->add_option("--out", en.out, "output wav")->required();
  enhance->add_option("--vad-out", en.vad_out,
                      "per-frame speech probability jsonl");
  enhance->add_option("--model", en.model_path, "weight file");
  enhance->add_option("--input-set", en.input_set,
                      "expected model input set {EX|EY|EYD|EYDX}");
  enhance->add_option("--oracle-near", en.oracle_near,
                      "clean near-end wav; use its ground-truth mask");
  enhance->add_option("--max-delay-ms", en.max_delay_ms,
                      "delay search range (default 500)");
  double delay_ms_value = 0.0;
  CLI::Option* delay_opt = enhance->add_option(
      "--delay-ms", delay_ms_value, "fixed delay, skips estimation");
  enhance->add_flag("--no-delay-comp", en.no_delay_comp,
                    "disable delay compensation");
  enhance->add_flag("--bypass-model", en.bypass_model,
                    "linear echo cancellation only");
  enhance->add_flag("--linear-only", en.linear_only,
                    "shorthand for --bypass-model --no-agc");
  enhance->add_flag("--no-agc", en.no_agc, "skip gain control");
  enhance->add_option("--taps", en.taps, "linear filter taps (default 5)");
  enhance->add_option("--beta", en.beta, "error weighting shape (default 0.2)");
  enhance->add_option("--lambda", en.lambda, "forgetting factor");
  enhance->add_option("--eps", en.eps, "covariance regularization");
  enhance->add_option("--agc-target-dbfs", en.agc_target_dbfs,
                      "gain control target peak");
  enhance->add_option("--agc-max-gain-db", en.agc_max_gain_db,
                      "gain control cap");
  enhance->add_option("--debug-jsonl", en.debug_jsonl,
                      "per-frame diagnostics output");

  std::string train_config, train_data, train_out, train_curve;
  CLI::App* train = app.add_subcommand("train", "train a toy-scale model");
  train->add_option("--config", train_config, "key = value config file")
      ->required();
  train->add_option("--data", train_data, "dataset dir or manifest.jsonl")
      ->required();
  train->add_option("--out", train_out, "output weight file")->required();
  train->add_option("--curve-out", train_curve, "loss curve jsonl");

  std::string sim_out, sim_speech, sim_noise;
  int sim_count = 10, sim_fe_st = 0;
  uint64_t sim_seed = 1;
  double sim_duration = 3.0;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "generate a synthetic mic/far-end dataset");
  simulate->add_option("--count", sim_count, "number of mixtures")->required();
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--fe-st", sim_fe_st,
                       "additional far-end single-talk utterances");
  simulate->add_option("--seed", sim_seed, "random seed");
  simulate->add_option("--duration-s", sim_duration, "utterance length");
  simulate->add_option("--speech-dir", sim_speech,
                       "wav corpus for speech (default synthetic)");
  simulate->add_option("--noise-dir", sim_noise,
                       "wav corpus for noise (default synthetic)");

  std::string eval_manifest, eval_dir, eval_report;
  CLI::App* eval = app.add_subcommand(
      "eval", "score processed files against a dataset manifest");
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--processed-dir", eval_dir, "directory of enhanced wavs")
      ->required();
  eval->add_option("--report", eval_report, "output report json");

  std::string ab_manifest, ab_workdir = "ablate_work", ab_report;
  std::vector<std::string> ab_models;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "compare several trained models on one dataset");
  ablate->add_option("--manifest", ab_manifest, "dataset manifest")->required();
  ablate->add_option("--model", ab_models, "name=weights.nn3a (repeatable)")
      ->required();
  ablate->add_option("--workdir", ab_workdir, "scratch directory");
  ablate->add_option("--report", ab_report, "output report json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*enhance) {
      if (*delay_opt) en.delay_ms = delay_ms_value;
      return run_enhance(en);
    }
    if (*train) return run_train(train_config, train_data, train_out,
                                 train_curve);
    if (*simulate) {
      return run_simulate(sim_out, sim_count, sim_fe_st, sim_seed,
                          sim_duration, sim_speech, sim_noise);
    }
    if (*eval) return run_eval_cmd(eval_manifest, eval_dir, eval_report);
    if (*ablate) return run_ablate(ab_manifest, ab_models, ab_workdir,
                                   ab_report);
  } catch (const nn3a::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
