#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "baeeeg/baestats.hpp"
#include "baeeeg/fem.hpp"
#include "baeeeg/headmesh.hpp"
#include "baeeeg/scan.hpp"

namespace baeeeg {

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// Noise amplitude for a target SNR: zeta = rms(signal) / 10^(snr_db / 20).
/// Infinite SNR gives 0. Throws ValidationError for a zero signal at finite
/// SNR or a NaN SNR.
double noise_std_for_snr(const Eigen::VectorXd& signal, double snr_db);

struct Measurement {
  Eigen::VectorXd data;   ///< noisy, average-referenced
  Eigen::VectorXd clean;  ///< noiseless forward map
  double noise_std = 0.0;
};

/// v = A d + e with e ~ N(0, zeta^2 I), then average-referenced. The
/// accurate lead field must already be average-referenced, so with infinite
/// SNR the result equals the noiseless forward map exactly.
Measurement simulate_measurements(const LeadField& accurate, const Dipole& dipole, double snr_db,
                                  std::uint64_t seed);

/// Distance in millimetres between two positions given in metres.
double euclidean_distance_mm(const Eigen::Vector2d& a, const Eigen::Vector2d& b);

/// A test source given in polar form; `amplitude` scales the unit radial
/// moment.
struct SourcePreset {
  std::string name;
  double radius = 0.0;
  double angle = 0.0;
  double amplitude = 1.0;

  Eigen::Vector2d position() const;
};

/// Three test sources at distinct angles, on the two interior source rings
/// of the default inverse mesh.
std::vector<SourcePreset> default_source_presets();

struct ExperimentConfig {
  std::string name = "case";
  std::uint64_t case_index = 0;  ///< keys the per-trial random substreams
  double true_skull_conductivity = 0.0055;
  SourcePreset source;
  bool on_grid = true;  ///< snap the true source to the nearest source node
  double snr_db = 30.0;
  double noise_floor_db = 60.0;  ///< inverse noise level assumed when snr_db is infinite
  std::size_t trials = 20;
  std::uint64_t master_seed = 0;

  void validate() const;
};

/// Models shared by all experiments: the forward mesh generates data, the
/// inverse source space and standard lead field are used for scanning.
struct ExperimentModels {
  const Mesh* forward_mesh = nullptr;
  std::vector<int> forward_electrodes;
  const SourceSpace* sources = nullptr;
  const LeadField* standard = nullptr;
  ConductivityAssignment base;  ///< scalp and brain; skull is replaced per case
  DipoleSpread spread;
};

struct TrialRecord {
  std::string case_name;
  std::size_t trial = 0;
  double sigma_true = 0.0;
  Eigen::Vector2d true_position = Eigen::Vector2d::Zero();
  std::optional<std::size_t> true_index;  ///< source node, when on the grid
  std::size_t standard_index = 0;
  std::size_t bae_index = 0;
  Eigen::Vector2d standard_position = Eigen::Vector2d::Zero();
  Eigen::Vector2d bae_position = Eigen::Vector2d::Zero();
  double ed_standard_mm = 0.0;
  double ed_bae_mm = 0.0;
  std::optional<double> sigma_hat;
  std::size_t p = 0;
  double noise_std = 0.0;
  std::string error;  ///< non-empty when the trial failed

  bool ok() const { return error.empty(); }
};

/// Ensemble summary. Rates are over successful trials; the sigma rates are
/// over trials that produced a conductivity estimate.
struct EnsembleSummary {
  std::string label;
  double sigma_true = 0.0;
  std::size_t trials = 0;
  std::size_t failed = 0;
  double mean_ed_standard = 0.0;
  double mean_ed_bae = 0.0;
  double median_ed_standard = 0.0;
  double median_ed_bae = 0.0;
  double bae_win_rate = 0.0;        ///< ED(BAE) < ED(standard)
  double bae_not_worse_rate = 0.0;  ///< ED(BAE) <= ED(standard)
  std::size_t sigma_estimates = 0;
  double sigma_closer_rate = 0.0;   ///< |sigma_hat - sigma_true| < |prior mean - sigma_true|
  double median_sigma_hat = 0.0;
  bool sigma_correct_side = false;  ///< median sigma_hat on the same side of the prior mean as sigma_true
};

/// Recomputes the summary from records; `prior_mean` is sigma_*.
EnsembleSummary summarize(const std::vector<TrialRecord>& records, double prior_mean, const std::string& label);

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<TrialRecord> records;
  EnsembleSummary summary;
};

/// Simulates, scans with both methods and records every trial. Trials run in
/// parallel with seeds keyed by (master_seed, case_index, trial); a trial
/// that throws is recorded with its error message.
ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentModels& models,
                                const StatsLibrary& stats, int threads = 1);

// trials.csv columns:
//   case,trial,sigma_true,true_index,true_x,true_y,standard_index,standard_x,
//   standard_y,bae_index,bae_x,bae_y,ed_standard_mm,ed_bae_mm,sigma_hat,p,
//   noise_std,status
// Positions in metres, numbers with 17 significant digits, empty fields for
// missing values. Lines starting with '#' are comments.
void write_trials_csv(std::ostream& os, const std::vector<TrialRecord>& records,
                      const std::vector<std::string>& comments = {});
std::vector<TrialRecord> read_trials_csv(std::istream& is);

// summary.csv columns:
//   label,sigma_true,trials,failed,mean_ed_standard_mm,mean_ed_bae_mm,
//   median_ed_standard_mm,median_ed_bae_mm,bae_win_rate,bae_not_worse_rate,
//   sigma_estimates,sigma_closer_rate,median_sigma_hat,sigma_correct_side
void write_summary_csv(std::ostream& os, const std::vector<EnsembleSummary>& rows,
                       const std::vector<std::string>& comments = {});

/// SVG panel: head outline, source nodes, true source and the standard and
/// BAE estimates of every trial.
void write_experiment_svg(std::ostream& os, const ExperimentReport& report, const HeadGeometry& geometry,
                          const SourceSpace& sources);

}  // namespace baeeeg
