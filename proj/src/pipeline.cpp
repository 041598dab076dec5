#include "baeeeg/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "baeeeg/binio.hpp"
#include "baeeeg/errors.hpp"

namespace baeeeg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
  throw ConfigurationError("config field '" + field + "': " + what);
}

// Reads one JSON object, remembering which keys were consumed so that
// unknown keys can be reported.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) bad_field(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) bad_field(field(key), "expected a number");
      out = v->get<double>();
    }
  }

  void count(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) bad_field(field(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) bad_field(field(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < -1000000000LL || x > 1000000000LL) bad_field(field(key), "integer out of range");
      out = static_cast<int>(x);
    }
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) bad_field(field(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) bad_field(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) bad_field(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v ? *v : empty, field(key));
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!used_.count(item.key())) bad_field(field(item.key()), "unknown key");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

bool valid_name(const std::string& s) {
  if (s.empty() || s.size() > 64) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

std::string format_sigma(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

json geometry_json(const PipelineConfig& c) {
  return {{"r_brain", c.geometry.r_brain},       {"r_skull", c.geometry.r_skull},
          {"r_scalp", c.geometry.r_scalp},       {"band_inner", c.geometry.band_inner},
          {"band_outer", c.geometry.band_outer}, {"electrodes", c.geometry.electrode_count}};
}

json conductivity_json(const PipelineConfig& c) {
  return {{"scalp", c.conductivity.scalp}, {"brain", c.conductivity.brain}, {"standard_skull", c.conductivity.skull}};
}

json mesh_json(const PipelineConfig& c) {
  return {{"forward_nodes", c.forward_nodes},
          {"inverse_nodes", c.inverse_nodes},
          {"dipole_spread",
           {{"spacing_factor", c.spread.spacing_factor},
            {"clearance_factor", c.spread.clearance_factor},
            {"rings", c.spread.rings}}}};
}

json prior_json(const PipelineConfig& c) {
  return {{"skull_mean", c.prior.mean},
          {"skull_std", c.prior.std},
          {"lower_clip", c.prior.lower_clip},
          {"amplitude_mean", c.plan.amplitude.mean},
          {"amplitude_std", c.plan.amplitude.std}};
}

}  // namespace

void PipelineConfig::validate() const {
  try {
    geometry.validate();
  } catch (const GeometryError& e) {
    bad_field("geometry", e.what());
  }
  if (conductivity.scalp <= 0.0 || !std::isfinite(conductivity.scalp)) bad_field("conductivity.scalp", "must be > 0");
  if (conductivity.brain <= 0.0 || !std::isfinite(conductivity.brain)) bad_field("conductivity.brain", "must be > 0");
  if (conductivity.skull <= 0.0 || !std::isfinite(conductivity.skull)) {
    bad_field("conductivity.standard_skull", "must be > 0");
  }
  if (forward_nodes < 100) bad_field("mesh.forward_nodes", "must be >= 100");
  if (inverse_nodes < 100) bad_field("mesh.inverse_nodes", "must be >= 100");
  if (spread.spacing_factor < 0.0) bad_field("mesh.dipole_spread.spacing_factor", "must be >= 0");
  if (spread.clearance_factor < 0.0 || spread.clearance_factor >= 1.0) {
    bad_field("mesh.dipole_spread.clearance_factor", "must lie in [0, 1)");
  }
  if (spread.rings < 0 || spread.rings > 64) bad_field("mesh.dipole_spread.rings", "must lie in [0, 64]");
  if (!(prior.mean > 0.0) || !std::isfinite(prior.mean)) bad_field("prior.skull_mean", "must be > 0");
  if (!(prior.std >= 0.0) || !std::isfinite(prior.std)) bad_field("prior.skull_std", "must be >= 0");
  if (!(prior.lower_clip > 0.0)) bad_field("prior.lower_clip", "must be > 0");
  if (!std::isfinite(plan.amplitude.mean)) bad_field("prior.amplitude_mean", "must be finite");
  if (!(plan.amplitude.std >= 0.0) || !std::isfinite(plan.amplitude.std)) {
    bad_field("prior.amplitude_std", "must be >= 0");
  }
  if (sample_models < 2) bad_field("sampling.models", "must be >= 2");
  if (plan.amplitudes < 1) bad_field("sampling.amplitudes", "must be >= 1");
  if (plan.models_per_location < 1) bad_field("sampling.models_per_location", "must be >= 1");
  if (!(energy_threshold > 0.0 && energy_threshold <= 1.0)) bad_field("sampling.energy_threshold", "must lie in (0, 1]");
  if (std::isnan(experiment.snr_db) || experiment.snr_db == -kInfiniteSnr) {
    bad_field("experiment.snr_db", "must be a number or \"inf\"");
  }
  if (!std::isfinite(experiment.noise_floor_db)) bad_field("experiment.noise_floor_db", "must be finite");
  if (experiment.trials < 1) bad_field("experiment.trials", "must be >= 1");
  if (experiment.true_skull.empty()) bad_field("experiment.true_skull", "needs at least one conductivity");
  for (double s : experiment.true_skull) {
    if (!(s > 0.0) || !std::isfinite(s)) bad_field("experiment.true_skull", "conductivities must be > 0");
  }
  if (experiment.sources.empty()) bad_field("experiment.sources", "needs at least one source");
  std::set<std::string> names;
  for (std::size_t i = 0; i < experiment.sources.size(); ++i) {
    const SourcePreset& s = experiment.sources[i];
    const std::string f = "experiment.sources[" + std::to_string(i) + "]";
    if (!valid_name(s.name)) bad_field(f + ".name", "use 1-64 letters, digits, '_', '-' or '.'");
    if (!names.insert(s.name).second) bad_field(f + ".name", "duplicate source name");
    if (!(s.radius > 0.0 && s.radius < geometry.r_brain)) bad_field(f + ".radius", "must lie inside the brain");
    if (!std::isfinite(s.angle)) bad_field(f + ".angle", "must be finite");
    if (!std::isfinite(s.amplitude) || s.amplitude == 0.0) bad_field(f + ".amplitude", "must be finite and non-zero");
  }
  if (work_dir.empty()) bad_field("work_dir", "must not be empty");
}

StatsConfig PipelineConfig::stats_config() const {
  StatsConfig sc;
  sc.prior = prior;
  sc.plan = plan;
  sc.standard_skull = conductivity.skull;
  sc.energy_threshold = energy_threshold;
  sc.master_seed = seed;
  return sc;
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigurationError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  Section top(root, "");

  Section g = top.child("geometry");
  g.number("r_brain", c.geometry.r_brain);
  g.number("r_skull", c.geometry.r_skull);
  g.number("r_scalp", c.geometry.r_scalp);
  g.number("band_inner", c.geometry.band_inner);
  g.number("band_outer", c.geometry.band_outer);
  g.integer("electrodes", c.geometry.electrode_count);
  g.finish();

  Section k = top.child("conductivity");
  k.number("scalp", c.conductivity.scalp);
  k.number("brain", c.conductivity.brain);
  k.number("standard_skull", c.conductivity.skull);
  k.finish();

  Section m = top.child("mesh");
  m.integer("forward_nodes", c.forward_nodes);
  m.integer("inverse_nodes", c.inverse_nodes);
  Section sp = m.child("dipole_spread");
  sp.number("spacing_factor", c.spread.spacing_factor);
  sp.number("clearance_factor", c.spread.clearance_factor);
  sp.integer("rings", c.spread.rings);
  sp.finish();
  m.finish();

  Section p = top.child("prior");
  p.number("skull_mean", c.prior.mean);
  p.number("skull_std", c.prior.std);
  p.number("lower_clip", c.prior.lower_clip);
  p.number("amplitude_mean", c.plan.amplitude.mean);
  p.number("amplitude_std", c.plan.amplitude.std);
  p.finish();

  Section s = top.child("sampling");
  s.count("models", c.sample_models);
  s.count("amplitudes", c.plan.amplitudes);
  std::string pairing = c.plan.pairing == Pairing::Exhaustive ? "exhaustive" : "random";
  s.string("pairing", pairing);
  if (pairing == "exhaustive") {
    c.plan.pairing = Pairing::Exhaustive;
  } else if (pairing == "random") {
    c.plan.pairing = Pairing::Random;
  } else {
    bad_field("sampling.pairing", "expected \"exhaustive\" or \"random\"");
  }
  s.count("models_per_location", c.plan.models_per_location);
  s.number("energy_threshold", c.energy_threshold);
  s.finish();

  Section e = top.child("experiment");
  if (const json* v = e.find("snr_db")) {
    if (v->is_number()) {
      c.experiment.snr_db = v->get<double>();
    } else if (v->is_string() && v->get<std::string>() == "inf") {
      c.experiment.snr_db = kInfiniteSnr;
    } else {
      bad_field("experiment.snr_db", "expected a number or \"inf\"");
    }
  }
  e.number("noise_floor_db", c.experiment.noise_floor_db);
  e.count("trials", c.experiment.trials);
  e.boolean("on_grid", c.experiment.on_grid);
  if (const json* v = e.find("true_skull")) {
    if (!v->is_array()) bad_field("experiment.true_skull", "expected a list of numbers");
    c.experiment.true_skull.clear();
    for (const json& x : *v) {
      if (!x.is_number()) bad_field("experiment.true_skull", "expected a list of numbers");
      c.experiment.true_skull.push_back(x.get<double>());
    }
  }
  if (const json* v = e.find("sources")) {
    if (!v->is_array()) bad_field("experiment.sources", "expected a list of sources");
    c.experiment.sources.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      Section src((*v)[i], "experiment.sources[" + std::to_string(i) + "]");
      SourcePreset preset;
      src.string("name", preset.name);
      src.number("radius", preset.radius);
      src.number("angle", preset.angle);
      src.number("amplitude", preset.amplitude);
      src.finish();
      c.experiment.sources.push_back(preset);
    }
  }
  e.finish();

  top.seed("seed", c.seed);
  top.string("work_dir", c.work_dir);
  top.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return parse_config(text.str());
}

std::string config_to_json(const PipelineConfig& c, int indent, bool include_paths) {
  json sources = json::array();
  for (const SourcePreset& s : c.experiment.sources) {
    sources.push_back({{"name", s.name}, {"radius", s.radius}, {"angle", s.angle}, {"amplitude", s.amplitude}});
  }
  json root = {
      {"geometry", geometry_json(c)},
      {"conductivity", conductivity_json(c)},
      {"mesh", mesh_json(c)},
      {"prior", prior_json(c)},
      {"sampling",
       {{"models", c.sample_models},
        {"amplitudes", c.plan.amplitudes},
        {"pairing", c.plan.pairing == Pairing::Exhaustive ? "exhaustive" : "random"},
        {"models_per_location", c.plan.models_per_location},
        {"energy_threshold", c.energy_threshold}}},
      {"experiment",
       {{"snr_db", std::isinf(c.experiment.snr_db) ? json("inf") : json(c.experiment.snr_db)},
        {"noise_floor_db", c.experiment.noise_floor_db},
        {"trials", c.experiment.trials},
        {"true_skull", c.experiment.true_skull},
        {"on_grid", c.experiment.on_grid},
        {"sources", sources}}},
      {"seed", c.seed},
  };
  if (include_paths) root["work_dir"] = c.work_dir;
  return root.dump(indent);
}

std::string model_fingerprint(const PipelineConfig& c) {
  const json root = {{"geometry", geometry_json(c)},
                     {"conductivity", conductivity_json(c)},
                     {"mesh", mesh_json(c)},
                     {"skull_prior", {{"mean", c.prior.mean}, {"std", c.prior.std}, {"lower_clip", c.prior.lower_clip}}},
                     {"models", c.sample_models},
                     {"seed", c.seed}};
  return root.dump();
}

ModelBundle build_model_bundle(const PipelineConfig& config, int threads, const Logger& log) {
  config.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  ModelBundle b;
  b.forward = build_head_mesh(config.geometry, config.forward_nodes);
  b.inverse = build_head_mesh(config.geometry, config.inverse_nodes);
  say("meshes: forward " + std::to_string(b.forward.node_count()) + " nodes, inverse " +
      std::to_string(b.inverse.node_count()) + " nodes");
  b.forward_electrodes = place_electrodes(b.forward, config.geometry.electrode_count);
  b.inverse_electrodes = place_electrodes(b.inverse, config.geometry.electrode_count);
  b.sources = build_source_space(b.inverse, config.geometry);
  say("source space: " + std::to_string(b.sources.size()) + " locations");
  b.standard = build_lead_field(b.inverse, config.conductivity, b.sources.positions, b.inverse_electrodes, config.spread);
  say("standard lead field: " + std::to_string(b.standard.matrix.rows()) + " x " +
      std::to_string(b.standard.matrix.cols()));
  b.samples = sample_conductivities(config.prior, config.sample_models, config.seed);
  if (b.samples.clipped) say("clipped conductivity draws: " + std::to_string(b.samples.clipped));
  say("computing " + std::to_string(config.sample_models) + " sample lead fields");
  b.sample_lead_fields = compute_sample_lead_fields(b.inverse, b.samples.values, config.conductivity,
                                                    b.sources.positions, b.inverse_electrodes, threads, config.spread);
  return b;
}

void save_sample_models(const fs::path& path, const ConductivitySamples& samples,
                        const std::vector<LeadField>& lead_fields) {
  if (samples.values.size() != lead_fields.size()) throw ValidationError("one lead field per sample conductivity");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, "BAESMPL");
  binio::put<std::uint32_t>(os, 1);
  binio::put<std::uint32_t>(os, 0);
  binio::put<std::uint64_t>(os, samples.values.size());
  binio::put<std::uint64_t>(os, samples.clipped);
  binio::put_doubles(os, samples.values);
  for (const LeadField& lf : lead_fields) write_lead_field(os, lf);
  if (!os) throw IoError("write failed: " + path.string());
}

void load_sample_models(const fs::path& path, ConductivitySamples& samples, std::vector<LeadField>& lead_fields) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binio::expect_magic(is, "BAESMPL");
  if (binio::get<std::uint32_t>(is) != 1) throw IoError("sample-model file: unsupported version");
  binio::get<std::uint32_t>(is);
  const auto k = binio::get<std::uint64_t>(is);
  if (k > 1000000) throw IoError("sample-model file: implausible model count");
  samples.clipped = binio::get<std::uint64_t>(is);
  samples.values.resize(k);
  binio::get_doubles(is, samples.values);
  lead_fields.clear();
  lead_fields.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) lead_fields.push_back(read_lead_field(is));
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return text.str();
}

}  // namespace

void save_model_bundle(const WorkPaths& paths, const ModelBundle& b, const PipelineConfig& config) {
  std::error_code ec;
  fs::create_directories(paths.dir, ec);
  if (ec) throw IoError("cannot create " + paths.dir.string() + ": " + ec.message());
  save_mesh(paths.forward_mesh().string(), b.forward);
  save_mesh(paths.inverse_mesh().string(), b.inverse);
  save_lead_field(paths.standard().string(), b.standard);
  save_sample_models(paths.samples(), b.samples, b.sample_lead_fields);
  // Written last: its presence marks a complete bundle.
  write_text(paths.model_config(), config_to_json(config));
}

ModelBundle load_model_bundle(const WorkPaths& paths, const PipelineConfig& config) {
  for (const fs::path& f : paths.model_files()) {
    if (!fs::exists(f)) throw IoError("missing model file " + f.string() + "; run build-model first");
  }
  const PipelineConfig built = parse_config(read_text(paths.model_config()));
  if (model_fingerprint(built) != model_fingerprint(config)) {
    throw ConfigurationError("model files in " + paths.dir.string() +
                             " were built with a different configuration; rerun build-model --force");
  }
  ModelBundle b;
  b.forward = load_mesh(paths.forward_mesh().string());
  b.inverse = load_mesh(paths.inverse_mesh().string());
  b.forward_electrodes = place_electrodes(b.forward, config.geometry.electrode_count);
  b.inverse_electrodes = place_electrodes(b.inverse, config.geometry.electrode_count);
  b.sources = build_source_space(b.inverse, config.geometry);
  b.standard = load_lead_field(paths.standard().string());
  load_sample_models(paths.samples(), b.samples, b.sample_lead_fields);
  if (b.standard.source_count() != b.sources.size() || b.standard.electrodes != b.inverse_electrodes) {
    throw IoError("standard lead field does not match the inverse mesh");
  }
  for (const LeadField& lf : b.sample_lead_fields) {
    if (lf.matrix.rows() != b.standard.matrix.rows() || lf.matrix.cols() != b.standard.matrix.cols()) {
      throw IoError("sample lead field dimensions do not match the standard lead field");
    }
  }
  return b;
}

StatsLibrary build_stats(const PipelineConfig& config, const ModelBundle& bundle, int threads) {
  return build_stats_library(config.stats_config(), bundle.standard, bundle.sample_lead_fields, bundle.samples,
                             bundle.sources.radial_dirs, threads);
}

StatsLibrary load_checked_stats(const WorkPaths& paths, const PipelineConfig& config, const ModelBundle& bundle) {
  if (!fs::exists(paths.stats())) {
    throw IoError("missing statistics file " + paths.stats().string() + "; run precompute-stats first");
  }
  StatsLibrary lib = load_stats_library(paths.stats().string());
  StatsLibrary expected;
  expected.config = config.stats_config();
  expected.standard_digest = bundle.standard.digest();
  expected.samples_digest = sample_models_digest(bundle.samples.values, bundle.sample_lead_fields);
  if (lib.standard_digest != expected.standard_digest || lib.samples_digest != expected.samples_digest) {
    throw ConfigurationError("statistics in " + paths.stats().string() +
                             " belong to different model files; rerun precompute-stats --force");
  }
  if (lib.provenance() != expected.provenance()) {
    throw ConfigurationError("statistics in " + paths.stats().string() +
                             " were built with different sampling settings; rerun precompute-stats --force");
  }
  return lib;
}

ExperimentModels experiment_models(const PipelineConfig& config, const ModelBundle& bundle) {
  ExperimentModels m;
  m.forward_mesh = &bundle.forward;
  m.forward_electrodes = bundle.forward_electrodes;
  m.sources = &bundle.sources;
  m.standard = &bundle.standard;
  m.base = config.conductivity;
  m.spread = config.spread;
  return m;
}

std::vector<ExperimentConfig> experiment_cases(const PipelineConfig& config) {
  std::vector<ExperimentConfig> cases;
  for (double sigma : config.experiment.true_skull) {
    for (const SourcePreset& src : config.experiment.sources) {
      ExperimentConfig e;
      e.name = src.name + "-s" + format_sigma(sigma);
      e.case_index = cases.size();
      e.true_skull_conductivity = sigma;
      e.source = src;
      e.on_grid = config.experiment.on_grid;
      e.snr_db = config.experiment.snr_db;
      e.noise_floor_db = config.experiment.noise_floor_db;
      e.trials = config.experiment.trials;
      e.master_seed = config.seed;
      cases.push_back(e);
    }
  }
  return cases;
}

ReproductionResult run_reproduction(const PipelineConfig& config, const ModelBundle& bundle,
                                    const StatsLibrary& stats, int threads, const Logger& log) {
  const ExperimentModels models = experiment_models(config, bundle);
  ReproductionResult out;
  for (const ExperimentConfig& c : experiment_cases(config)) {
    out.reports.push_back(run_experiment(c, models, stats, threads));
    const EnsembleSummary& s = out.reports.back().summary;
    if (log) {
      std::ostringstream msg;
      msg << "case " << c.name << ": mean ED standard " << s.mean_ed_standard << " mm, BAE " << s.mean_ed_bae
          << " mm, median sigma_hat " << s.median_sigma_hat;
      if (s.failed) msg << ", " << s.failed << " failed trials";
      log(msg.str());
    }
  }
  for (const ExperimentReport& r : out.reports) out.summaries.push_back(r.summary);
  for (double sigma : config.experiment.true_skull) {
    std::vector<TrialRecord> pooled;
    for (const ExperimentReport& r : out.reports) {
      if (r.config.true_skull_conductivity == sigma) pooled.insert(pooled.end(), r.records.begin(), r.records.end());
    }
    out.summaries.push_back(summarize(pooled, stats.config.prior.mean, "pooled-s" + format_sigma(sigma)));
  }
  return out;
}

void write_reproduction(const fs::path& out, const ReproductionResult& result, const PipelineConfig& config,
                        const ModelBundle& bundle) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const std::vector<std::string> comments = {
      "noise: zeta = rms(clean signal) / 10^(snr_db / 20), i.i.d. Gaussian, average-referenced after addition",
      "config: " + config_to_json(config, -1, false),
  };
  std::vector<TrialRecord> all;
  for (const ExperimentReport& r : result.reports) all.insert(all.end(), r.records.begin(), r.records.end());

  std::ofstream trials(out / "trials.csv");
  if (!trials) throw IoError("cannot open " + (out / "trials.csv").string() + " for writing");
  write_trials_csv(trials, all, comments);
  std::ofstream summary(out / "summary.csv");
  if (!summary) throw IoError("cannot open " + (out / "summary.csv").string() + " for writing");
  write_summary_csv(summary, result.summaries, comments);
  for (const ExperimentReport& r : result.reports) {
    const fs::path svg = out / ("figure-" + r.config.name + ".svg");
    std::ofstream os(svg);
    if (!os) throw IoError("cannot open " + svg.string() + " for writing");
    write_experiment_svg(os, r, config.geometry, bundle.sources);
  }
  if (!trials || !summary) throw IoError("write failed in " + out.string());
}

}  // namespace baeeeg
