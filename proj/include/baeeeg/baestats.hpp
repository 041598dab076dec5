#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "baeeeg/fem.hpp"

namespace baeeeg {

/// Gaussian prior on the skull conductivity (S/m). Draws below lower_clip
/// are clipped and counted.
struct ConductivityPrior {
  double mean = 0.0073;
  double std = 0.0013;
  double lower_clip = 1e-4;

  void validate() const;
};

/// Gaussian prior on the dimensionless amplitude of a unit radial dipole.
struct AmplitudePrior {
  double mean = 1.0;
  double std = 0.01;

  void validate() const;
};

struct ConductivitySamples {
  std::vector<double> values;
  std::size_t clipped = 0;
};

/// i.i.d. draws from the prior; std == 0 returns the mean repeated.
ConductivitySamples sample_conductivities(const ConductivityPrior& prior, std::size_t count, std::uint64_t seed);

/// One lead field per skull conductivity, scalp/brain taken from `base`.
std::vector<LeadField> compute_sample_lead_fields(const Mesh& mesh, std::span<const double> skull_conductivities,
                                                  const ConductivityAssignment& base,
                                                  std::span<const Eigen::Vector2d> source_positions,
                                                  std::span<const int> electrodes, int threads = 1,
                                                  const DipoleSpread& spread = {});

enum class Pairing : std::uint32_t {
  Exhaustive = 0,  ///< every sample model paired with every amplitude draw
  Random = 1,      ///< models_per_location models drawn with replacement, each paired with every amplitude
};

struct SamplingPlan {
  std::size_t amplitudes = 1000;  ///< S
  Pairing pairing = Pairing::Exhaustive;
  std::size_t models_per_location = 200;
  AmplitudePrior amplitude;
};

/// Random draws for one location: the sample-model index for each model
/// slot and the S amplitudes. Sample j = s + S*k pairs models[k] with
/// amplitudes[s].
struct LocationDraws {
  std::vector<std::size_t> models;
  Eigen::VectorXd amplitudes;

  std::size_t sample_count() const { return models.size() * static_cast<std::size_t>(amplitudes.size()); }
};

/// Draws come from the substream (master_seed, location), so they do not
/// depend on the order in which locations are processed.
LocationDraws draw_location(std::size_t location, std::size_t model_count, const SamplingPlan& plan,
                            std::uint64_t master_seed);

struct ErrorSamples {
  Eigen::MatrixXd eps;        ///< m x J, column j = A(sigma_k) d - A_0 d
  std::vector<double> sigma;  ///< skull conductivity that generated column j
};

/// Explicit approximation-error samples at one location for a radial dipole
/// d = a * radial_dir. Throws ConfigurationError for an empty model list.
ErrorSamples compute_error_samples(std::size_t location, std::span<const LeadField> sample_lead_fields,
                                   std::span<const double> sample_sigmas, const LeadField& standard,
                                   const Eigen::Vector2d& radial_dir, const LocationDraws& draws);

struct SampleMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  ///< unbiased, 1/(J-1)
};

SampleMoments compute_statistics(const Eigen::MatrixXd& samples);

struct Spectrum {
  Eigen::VectorXd eigvals;  ///< descending
  Eigen::MatrixXd eigvecs;  ///< columns match eigvals
  std::size_t p = 0;

  Eigen::MatrixXd leading() const { return eigvecs.leftCols(static_cast<Eigen::Index>(p)); }
  Eigen::MatrixXd trailing() const { return eigvecs.rightCols(eigvecs.cols() - static_cast<Eigen::Index>(p)); }
};

/// Smallest p with sum_{k<=p} lambda_k >= threshold * sum_k lambda_k
/// (negative eigenvalues count as zero). Zero total energy gives p = 0 and
/// threshold >= 1 gives p = m.
std::size_t truncation_order(const Eigen::VectorXd& descending_eigvals, double energy_threshold);

/// Full symmetric eigendecomposition sorted descending plus truncation.
/// Throws ValidationError when the input is not symmetric to 1e-10 relative.
Spectrum eigendecompose_truncate(const Eigen::MatrixXd& covariance, double energy_threshold = 0.85);

/// alpha = W^T (eps - eps_mean), one column per sample.
Eigen::MatrixXd compute_alpha_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& eps_mean,
                                      const Eigen::MatrixXd& leading);
/// eps'' = Q Q^T (eps - eps_mean).
Eigen::MatrixXd compute_residual_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& eps_mean,
                                         const Eigen::MatrixXd& trailing);

/// Unbiased cross-covariance between the scalar sigma and each alpha row.
Eigen::VectorXd compute_cross_covariance(std::span<const double> sigma, const Eigen::MatrixXd& alpha);

/// Approximation-error statistics at one source location.
struct ErrorStats {
  Eigen::VectorXd eps_mean;
  Eigen::VectorXd eigvals;
  Eigen::MatrixXd eigvecs;
  std::size_t p = 0;
  Eigen::VectorXd cross_cov;  ///< Gamma_{sigma alpha}, length p
  std::size_t models = 0;     ///< K used at this location
  std::size_t amplitudes = 0; ///< S

  std::size_t m() const { return static_cast<std::size_t>(eps_mean.size()); }
  Eigen::MatrixXd W() const { return eigvecs.leftCols(static_cast<Eigen::Index>(p)); }
  Eigen::MatrixXd Q() const { return eigvecs.rightCols(eigvecs.cols() - static_cast<Eigen::Index>(p)); }
  /// Sum over the discarded eigenpairs, lambda_k w_k w_k^T for k > p.
  Eigen::MatrixXd residual_covariance() const;
};

/// Statistics straight from explicit samples (mean, covariance, spectrum,
/// alpha projections, cross-covariance).
ErrorStats stats_from_samples(const ErrorSamples& samples, double energy_threshold);

/// The same statistics for the sample grid eps_{k,s} = a_s * diff_k without
/// materialising the K*S samples. `differences` holds (A_k - A_0) r per
/// drawn model (m x K'); `sigma` the matching conductivities.
ErrorStats stats_from_grid(const Eigen::MatrixXd& differences, std::span<const double> sigma,
                           const Eigen::VectorXd& amplitudes, double energy_threshold);

struct StatsConfig {
  ConductivityPrior prior;
  SamplingPlan plan;
  double standard_skull = 0.0085;  ///< sigma_0
  double energy_threshold = 0.85;
  std::uint64_t master_seed = 0;
};

struct StatsLibrary {
  std::vector<ErrorStats> entries;
  StatsConfig config;
  std::size_t model_count = 0;  ///< K sample head models
  std::size_t clipped = 0;      ///< conductivity draws clipped at lower_clip
  std::uint64_t standard_digest = 0;  ///< LeadField::digest() of A_0
  std::uint64_t samples_digest = 0;   ///< digest over the sample conductivities

  std::size_t m() const { return entries.empty() ? 0 : entries.front().m(); }
  std::size_t n() const { return entries.size(); }
  /// Mixes the standard lead-field digest with sigma_0, the priors and seed.
  std::uint64_t provenance() const;
};

/// Digest over the sample conductivities and their lead fields.
std::uint64_t sample_models_digest(std::span<const double> conductivities, std::span<const LeadField> lead_fields);

/// Per-location statistics for every source. Locations run in parallel with
/// per-location random substreams.
StatsLibrary build_stats_library(const StatsConfig& config, const LeadField& standard,
                                 std::span<const LeadField> sample_lead_fields,
                                 const ConductivitySamples& conductivities,
                                 std::span<const Eigen::Vector2d> radial_dirs, int threads = 1);

// Binary statistics container, little-endian. 256-byte header:
//   0   char[8] magic "BAESTAT\0"      8   uint32 version (1)
//   12  uint32  pairing                16  uint64 m
//   24  uint64  n                      32  float64 energy threshold
//   40  uint64  standard digest        48  uint64 samples digest
//   56  uint64  master seed            64  float64 prior mean
//   72  float64 prior std              80  float64 lower clip
//   88  float64 amplitude mean         96  float64 amplitude std
//   104 float64 sigma_0                112 uint64 K
//   120 uint64  S                      128 uint64 models per location
//   136 uint64  clipped count          144..255 zero
// Index table at offset 256: n uint64 absolute record offsets. Record i:
//   uint64 p, uint64 models, uint64 amplitudes, float64 eps_mean[m],
//   float64 eigvals[m], float64 W[m x p], float64 Q[m x (m - p)],
//   float64 cross_cov[p]; matrices row-major.
void write_stats_library(std::ostream& os, const StatsLibrary& lib);
StatsLibrary read_stats_library(std::istream& is);
void save_stats_library(const std::string& path, const StatsLibrary& lib);
StatsLibrary load_stats_library(const std::string& path);

}  // namespace baeeeg
