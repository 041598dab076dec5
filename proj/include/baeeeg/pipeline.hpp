#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "baeeeg/baestats.hpp"
#include "baeeeg/fem.hpp"
#include "baeeeg/headmesh.hpp"
#include "baeeeg/simharness.hpp"

namespace baeeeg {

struct ExperimentSettings {
  double snr_db = 30.0;
  double noise_floor_db = 60.0;
  std::size_t trials = 20;
  std::vector<double> true_skull{0.0055, 0.011};
  bool on_grid = true;
  std::vector<SourcePreset> sources = default_source_presets();
};

/// Everything a run depends on. JSON keys (all optional, defaults shown by
/// `baeeeg print-config`):
///   geometry.{r_brain,r_skull,r_scalp,band_inner,band_outer,electrodes}
///   conductivity.{scalp,brain,standard_skull}
///   mesh.{forward_nodes,inverse_nodes}
///   mesh.dipole_spread.{spacing_factor,clearance_factor,rings}
///   prior.{skull_mean,skull_std,lower_clip,amplitude_mean,amplitude_std}
///   sampling.{models,amplitudes,pairing,models_per_location,energy_threshold}
///   experiment.{snr_db,noise_floor_db,trials,true_skull,on_grid,sources}
///   seed, work_dir
/// experiment.snr_db accepts a number or the string "inf"; sources is a list
/// of {name, radius, angle, amplitude}.
struct PipelineConfig {
  HeadGeometry geometry;
  ConductivityAssignment conductivity;  ///< skull entry is sigma_0
  int forward_nodes = 2518;
  int inverse_nodes = 1780;
  DipoleSpread spread;
  ConductivityPrior prior;
  std::size_t sample_models = 400;  ///< K
  SamplingPlan plan;
  double energy_threshold = 0.85;
  ExperimentSettings experiment;
  std::uint64_t seed = 2016;
  std::string work_dir = "baeeeg-work";

  /// Throws ConfigurationError naming the offending field.
  void validate() const;
  StatsConfig stats_config() const;
};

/// Parses JSON text over the defaults. Unknown keys and wrong types raise
/// ConfigurationError naming the field; the result is validated.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Resolved configuration as JSON; indent < 0 gives a single line. Without
/// `include_paths` the work_dir key is left out.
std::string config_to_json(const PipelineConfig& config, int indent = 2, bool include_paths = true);
/// Only the keys that determine the meshes, lead fields and sample models.
std::string model_fingerprint(const PipelineConfig& config);

/// Meshes, standard lead field and sample lead fields.
struct ModelBundle {
  Mesh forward;
  Mesh inverse;
  std::vector<int> forward_electrodes;
  std::vector<int> inverse_electrodes;
  SourceSpace sources;
  LeadField standard;
  ConductivitySamples samples;
  std::vector<LeadField> sample_lead_fields;
};

using Logger = std::function<void(const std::string&)>;

ModelBundle build_model_bundle(const PipelineConfig& config, int threads, const Logger& log = {});

/// File names inside a work directory.
struct WorkPaths {
  std::filesystem::path dir;
  std::filesystem::path forward_mesh() const { return dir / "forward.mesh"; }
  std::filesystem::path inverse_mesh() const { return dir / "inverse.mesh"; }
  std::filesystem::path standard() const { return dir / "standard.lfld"; }
  std::filesystem::path samples() const { return dir / "samples.bin"; }
  std::filesystem::path model_config() const { return dir / "model-config.json"; }
  std::filesystem::path stats() const { return dir / "stats.bin"; }
  std::filesystem::path stats_config() const { return dir / "stats-config.json"; }
  std::vector<std::filesystem::path> model_files() const {
    return {forward_mesh(), inverse_mesh(), standard(), samples(), model_config()};
  }
};

// samples.bin, little-endian: char[8] "BAESMPL\0", uint32 version (1),
// uint32 0, uint64 K, uint64 clipped, float64 sigma[K], then K lead-field
// records in the standard-lead-field format.
void save_sample_models(const std::filesystem::path& path, const ConductivitySamples& samples,
                        const std::vector<LeadField>& lead_fields);
void load_sample_models(const std::filesystem::path& path, ConductivitySamples& samples,
                        std::vector<LeadField>& lead_fields);

void save_model_bundle(const WorkPaths& paths, const ModelBundle& bundle, const PipelineConfig& config);
/// Throws ConfigurationError when the bundle was built from a different
/// model fingerprint, IoError when files are missing or damaged.
ModelBundle load_model_bundle(const WorkPaths& paths, const PipelineConfig& config);

StatsLibrary build_stats(const PipelineConfig& config, const ModelBundle& bundle, int threads);
/// Loads the statistics and checks them against the bundle and config.
StatsLibrary load_checked_stats(const WorkPaths& paths, const PipelineConfig& config, const ModelBundle& bundle);

ExperimentModels experiment_models(const PipelineConfig& config, const ModelBundle& bundle);

/// Cases in a fixed order: for each true conductivity, each source.
std::vector<ExperimentConfig> experiment_cases(const PipelineConfig& config);

struct ReproductionResult {
  std::vector<ExperimentReport> reports;
  std::vector<EnsembleSummary> summaries;  ///< per case, then pooled per true conductivity
};

ReproductionResult run_reproduction(const PipelineConfig& config, const ModelBundle& bundle,
                                    const StatsLibrary& stats, int threads, const Logger& log = {});

/// Writes trials.csv, summary.csv and one figure-<case>.svg per case into
/// `out`. CSV comments carry the resolved config and the SNR definition.
void write_reproduction(const std::filesystem::path& out, const ReproductionResult& result,
                        const PipelineConfig& config, const ModelBundle& bundle);

}  // namespace baeeeg
