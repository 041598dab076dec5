// baeeeg: build head models, precompute approximation-error statistics,
// simulate EEG data, run dipole scans and reproduce the two-conductivity
// comparison experiment.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "baeeeg/errors.hpp"
#include "baeeeg/parallel.hpp"
#include "baeeeg/pipeline.hpp"
#include "baeeeg/rng.hpp"
#include "baeeeg/scan.hpp"
#include "baeeeg/simharness.hpp"

namespace fs = std::filesystem;
using namespace baeeeg;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = default_thread_count();
  std::string out;
  bool force = false;
};

void log(const std::string& msg) { std::cerr << "[baeeeg] " << msg << std::endl; }

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt_seconds(double s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << s << " s";
  return os.str();
}

double parse_snr(const std::string& text) {
  if (text == "inf") return kInfiniteSnr;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("--snr-db expects a number or 'inf', got '" + text + "'");
}

PipelineConfig resolve_config(const Options& opt) {
  PipelineConfig config = opt.config_path.empty() ? PipelineConfig{} : load_config(opt.config_path);
  if (opt.seed) config.seed = *opt.seed;
  if (!opt.out.empty()) config.work_dir = opt.out;
  if (opt.threads < 1) throw ValidationError("--threads must be >= 1");
  config.validate();
  return config;
}

bool any_exists(const std::vector<fs::path>& files) {
  for (const fs::path& f : files) {
    if (fs::exists(f)) return true;
  }
  return false;
}

ModelBundle build_and_save_models(const PipelineConfig& config, const WorkPaths& paths, int threads) {
  const Timer timer;
  ModelBundle bundle = build_model_bundle(config, threads, log);
  save_model_bundle(paths, bundle, config);
  log("model files written to " + paths.dir.string() + " (" + fmt_seconds(timer.seconds()) + ")");
  return bundle;
}

StatsLibrary build_and_save_stats(const PipelineConfig& config, const WorkPaths& paths, const ModelBundle& bundle,
                                  int threads) {
  const Timer timer;
  log("precomputing statistics at " + std::to_string(bundle.sources.size()) + " locations (K = " +
      std::to_string(bundle.sample_lead_fields.size()) + ", S = " + std::to_string(config.plan.amplitudes) + ")");
  StatsLibrary lib = build_stats(config, bundle, threads);
  save_stats_library(paths.stats().string(), lib);
  std::ofstream cfg(paths.stats_config());
  cfg << config_to_json(config) << '\n';
  if (!cfg) throw IoError("write failed: " + paths.stats_config().string());

  std::map<std::size_t, std::size_t> histogram;
  for (const ErrorStats& e : lib.entries) ++histogram[e.p];
  std::ostringstream h;
  for (const auto& [p, count] : histogram) h << " p=" << p << ":" << count;
  log("truncation orders" + h.str() + " (" + fmt_seconds(timer.seconds()) + ")");
  return lib;
}

int cmd_build_model(const Options& opt) {
  const PipelineConfig config = resolve_config(opt);
  const WorkPaths paths{config.work_dir};
  if (!opt.force && any_exists(paths.model_files())) {
    throw ValidationError("model files already exist in " + paths.dir.string() + "; pass --force to overwrite");
  }
  build_and_save_models(config, paths, opt.threads);
  return 0;
}

int cmd_precompute_stats(const Options& opt, const std::optional<double>& threshold,
                         const std::optional<std::size_t>& amplitudes) {
  PipelineConfig config = resolve_config(opt);
  if (threshold) config.energy_threshold = *threshold;
  if (amplitudes) config.plan.amplitudes = *amplitudes;
  config.validate();
  const WorkPaths paths{config.work_dir};
  if (!opt.force && fs::exists(paths.stats())) {
    throw ValidationError("statistics file " + paths.stats().string() + " already exists; pass --force to overwrite");
  }
  const ModelBundle bundle = load_model_bundle(paths, config);
  build_and_save_stats(config, paths, bundle, opt.threads);
  return 0;
}

// Data files: one value per line; lines starting with '#' are comments.
void write_data_file(const fs::path& path, const Eigen::VectorXd& v, const std::vector<std::string>& comments) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const std::string& c : comments) os << "# " << c << '\n';
  os << std::setprecision(17);
  for (Eigen::Index k = 0; k < v.size(); ++k) os << v(k) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

struct DataFile {
  Eigen::VectorXd values;
  std::optional<double> noise_std;
};

DataFile read_data_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open data file " + path.string());
  DataFile out;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      double v = 0.0;
      if (ss >> key >> v && key == "noise_std") out.noise_std = v;
      continue;
    }
    try {
      std::size_t used = 0;
      values.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw ValidationError("data file " + path.string() + " line " + std::to_string(line_no) + ": not a number");
    }
  }
  out.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return out;
}

int cmd_simulate(const Options& opt, double sigma_true, const std::string& source_name,
                 const std::optional<std::size_t>& source_index, const std::optional<std::string>& snr_text,
                 std::size_t trial, const std::string& data_path) {
  const PipelineConfig config = resolve_config(opt);
  const WorkPaths paths{config.work_dir};
  const ModelBundle bundle = load_model_bundle(paths, config);
  const double snr = snr_text ? parse_snr(*snr_text) : config.experiment.snr_db;
  if (!(sigma_true > 0.0)) throw ValidationError("--sigma-true must be > 0");

  std::size_t index = 0;
  double amplitude = 1.0;
  if (source_index) {
    if (*source_index >= bundle.sources.size()) {
      throw ValidationError("--source-index out of range (" + std::to_string(bundle.sources.size()) + " sources)");
    }
    index = *source_index;
  } else {
    const SourcePreset* preset = nullptr;
    for (const SourcePreset& s : config.experiment.sources) {
      if (s.name == source_name) preset = &s;
    }
    if (!preset) throw ValidationError("unknown source preset '" + source_name + "'");
    index = bundle.sources.nearest(preset->position());
    amplitude = preset->amplitude;
  }

  ConductivityAssignment truth = config.conductivity;
  truth.skull = sigma_true;
  const std::vector<Eigen::Vector2d> position{bundle.sources.positions[index]};
  const LeadField accurate = build_lead_field(bundle.forward, truth, position, bundle.forward_electrodes, config.spread);
  const Dipole dipole{0, amplitude * bundle.sources.radial_dirs[index]};
  const std::uint64_t seed = substream_seed(config.seed, {kTrialStream, 0xD47AULL, index, trial});
  const Measurement meas = simulate_measurements(accurate, dipole, snr, seed);

  const fs::path out = data_path.empty() ? paths.dir / "data.txt" : fs::path(data_path);
  std::ostringstream pos, moment, noise;
  pos << std::setprecision(17) << "position " << position[0].x() << ' ' << position[0].y();
  moment << std::setprecision(17) << "moment " << dipole.moment.x() << ' ' << dipole.moment.y();
  noise << std::setprecision(17) << "noise_std " << meas.noise_std;
  write_data_file(out, meas.data,
                  {"source_index " + std::to_string(index), pos.str(), moment.str(),
                   "sigma_true " + std::to_string(sigma_true), "snr_db " + (snr_text ? *snr_text : std::to_string(snr)),
                   noise.str(), "config: " + config_to_json(config, -1)});
  log("wrote " + std::to_string(meas.data.size()) + " potentials to " + out.string());
  return 0;
}

int cmd_scan(const Options& opt, const std::string& method, const std::string& data_path,
             const std::optional<double>& noise_std_opt, const std::string& result_path) {
  const PipelineConfig config = resolve_config(opt);
  if (method != "standard" && method != "bae") throw ValidationError("--method must be 'standard' or 'bae'");
  const WorkPaths paths{config.work_dir};
  const ModelBundle bundle = load_model_bundle(paths, config);
  const DataFile data = read_data_file(data_path);
  const std::size_t m = bundle.standard.electrode_count();
  if (static_cast<std::size_t>(data.values.size()) != m) {
    throw ValidationError("data has " + std::to_string(data.values.size()) + " values but the model has " +
                          std::to_string(m) + " electrodes");
  }
  Eigen::VectorXd v = data.values;
  average_reference(v);

  // Noise level: explicit flag, then the data file header, then the SNR in
  // the config; a zero level falls back to the configured noise floor.
  double zeta = noise_std_opt ? *noise_std_opt : data.noise_std ? *data.noise_std : -1.0;
  if (zeta < 0.0) zeta = noise_std_for_snr(v, std::isinf(config.experiment.snr_db) ? config.experiment.noise_floor_db
                                                                                   : config.experiment.snr_db);
  if (zeta == 0.0) zeta = noise_std_for_snr(v, config.experiment.noise_floor_db);
  const NoiseModel noise = NoiseModel::average_referenced(m, zeta);

  ScanResult result;
  if (method == "standard") {
    result = standard_scan(v, bundle.standard, noise, opt.threads);
  } else {
    if (!fs::exists(paths.stats())) {
      throw IoError("bae scan needs precomputed statistics, but " + paths.stats().string() +
                    " does not exist; run 'baeeeg precompute-stats' with the same --config/--out first");
    }
    const StatsLibrary stats = load_checked_stats(paths, config, bundle);
    result = bae_scan(v, bundle.standard, stats, noise, opt.threads);
  }

  const fs::path out = result_path.empty() ? paths.dir / ("scan-" + method + ".txt") : fs::path(result_path);
  std::ofstream os(out);
  if (!os) throw IoError("cannot open " + out.string() + " for writing");
  write_scan_result(os, result, method, bundle.sources.positions[result.winner]);
  os << "config " << config_to_json(config, -1) << '\n';
  if (!os) throw IoError("write failed: " + out.string());
  log(method + " scan: winner " + std::to_string(result.winner) + ", result in " + out.string());
  return 0;
}

int cmd_reproduce(const Options& opt, const std::optional<std::size_t>& trials,
                  const std::optional<std::string>& snr_text) {
  PipelineConfig config = resolve_config(opt);
  if (trials) config.experiment.trials = *trials;
  if (snr_text) config.experiment.snr_db = parse_snr(*snr_text);
  config.validate();
  const Timer timer;
  const WorkPaths paths{config.work_dir};

  ModelBundle bundle;
  bool rebuilt = false;
  if (!fs::exists(paths.model_config()) || opt.force) {
    log("model files missing or --force given; building");
    bundle = build_and_save_models(config, paths, opt.threads);
    rebuilt = true;
  } else {
    bundle = load_model_bundle(paths, config);
  }
  StatsLibrary stats;
  if (rebuilt || !fs::exists(paths.stats())) {
    stats = build_and_save_stats(config, paths, bundle, opt.threads);
  } else {
    stats = load_checked_stats(paths, config, bundle);
  }

  const ReproductionResult result = run_reproduction(config, bundle, stats, opt.threads, log);
  const fs::path out = paths.dir / "fig2";
  write_reproduction(out, result, config, bundle);
  for (const EnsembleSummary& s : result.summaries) {
    if (s.label.rfind("pooled", 0) != 0) continue;
    std::ostringstream msg;
    msg << s.label << ": mean ED standard " << s.mean_ed_standard << " mm, BAE " << s.mean_ed_bae
        << " mm, BAE win rate " << s.bae_win_rate << ", sigma closer rate " << s.sigma_closer_rate
        << ", median sigma_hat " << s.median_sigma_hat;
    log(msg.str());
  }
  log("report written to " + out.string() + " (" + fmt_seconds(timer.seconds()) + ")");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BAE dipole scanning with skull-conductivity estimation on a 2D three-layer head model"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "JSON configuration file (defaults apply to missing keys)");
  app.add_option("--seed", opt.seed, "Master seed, overrides the config");
  app.add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", opt.out, "Work directory, overrides config work_dir");
  app.add_flag("--force", opt.force, "Overwrite existing outputs");

  auto* print = app.add_subcommand("print-config", "Print the resolved configuration as JSON");
  auto* build = app.add_subcommand("build-model", "Build meshes, the standard lead field and sample lead fields");

  auto* pre = app.add_subcommand("precompute-stats", "Precompute per-location approximation-error statistics");
  std::optional<double> threshold;
  std::optional<std::size_t> amplitudes;
  pre->add_option("--threshold", threshold, "Eigenvalue energy threshold in (0, 1]");
  pre->add_option("--amplitudes", amplitudes, "Amplitude draws per location (S)");

  auto* sim = app.add_subcommand("simulate", "Simulate noisy data from the accurate model");
  double sigma_true = 0.0055;
  std::string source_name = "A";
  std::optional<std::size_t> source_index;
  std::optional<std::string> sim_snr;
  std::size_t trial = 0;
  std::string data_out;
  sim->add_option("--sigma-true", sigma_true, "True skull conductivity (S/m)");
  sim->add_option("--source", source_name, "Source preset name");
  sim->add_option("--source-index", source_index, "Source-space index, overrides --source");
  sim->add_option("--snr-db", sim_snr, "SNR in dB or 'inf'");
  sim->add_option("--trial", trial, "Trial number (selects the noise draw)");
  sim->add_option("--data", data_out, "Output data file (default <work_dir>/data.txt)");

  auto* scan = app.add_subcommand("scan", "Run a standard or BAE dipole scan on a data file");
  std::string method = "standard";
  std::string data_in;
  std::optional<double> noise_std;
  std::string result_out;
  scan->add_option("--method", method, "standard or bae")->check(CLI::IsMember({"standard", "bae"}));
  scan->add_option("--data", data_in, "Data file with one potential per line")->required();
  scan->add_option("--noise-std", noise_std, "Noise standard deviation (default: from the data file header)");
  scan->add_option("--result", result_out, "Output result file (default <work_dir>/scan-<method>.txt)");

  auto* repro = app.add_subcommand("reproduce-fig2", "Run the standard vs BAE comparison for all test cases");
  std::optional<std::size_t> trials;
  std::optional<std::string> repro_snr;
  repro->add_option("--trials", trials, "Trials per case, overrides the config");
  repro->add_option("--snr-db", repro_snr, "SNR in dB or 'inf', overrides the config");

  for (auto* sub : {print, build, pre, sim, scan, repro}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*print) {
      std::cout << config_to_json(resolve_config(opt)) << '\n';
      return 0;
    }
    if (*build) return cmd_build_model(opt);
    if (*pre) return cmd_precompute_stats(opt, threshold, amplitudes);
    if (*sim) return cmd_simulate(opt, sigma_true, source_name, source_index, sim_snr, trial, data_out);
    if (*scan) return cmd_scan(opt, method, data_in, noise_std, result_out);
    if (*repro) return cmd_reproduce(opt, trials, repro_snr);
  } catch (const ValidationError& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const NumericalError& e) {
    log(std::string("numerical error: ") + e.what());
    return 3;
  } catch (const IoError& e) {
    log(std::string("I/O error: ") + e.what());
    return 4;
  } catch (const fs::filesystem_error& e) {
    log(std::string("I/O error: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return 1;
  }
  return 0;
}
