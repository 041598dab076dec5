#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "baeeeg/baestats.hpp"
#include "baeeeg/fem.hpp"
#include "baeeeg/headmesh.hpp"

namespace baeeeg {

/// Additive Gaussian measurement noise e ~ N(mean, covariance).
struct NoiseModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  /// zeta^2 * P with P the average-reference projector, zero mean.
  static NoiseModel average_referenced(std::size_t m, double zeta);
  std::size_t m() const { return static_cast<std::size_t>(mean.size()); }
};

/// Orthonormal basis (m x (m-1)) of the zero-sum subspace of R^m.
Eigen::MatrixXd zero_mean_basis(std::size_t m);

/// Whitener L ((m-1) x m) with L^T L equal to the pseudo-inverse of
/// `covariance` restricted to the zero-sum subspace. Average-referenced data
/// live in that subspace, so the constant mode is never inverted. Throws
/// NumericalError when the restricted covariance is not positive definite.
Eigen::MatrixXd whitener(const Eigen::MatrixXd& covariance);

struct ScanResult {
  std::size_t winner = 0;
  Eigen::Vector2d dipole = Eigen::Vector2d::Zero();
  Eigen::VectorXd alpha;             ///< length p of the winning location; empty for the standard scan
  Eigen::VectorXd functional_values; ///< +inf at skipped locations
  Eigen::Matrix2Xd moments;          ///< per-location moment estimates
  std::vector<Eigen::VectorXd> alphas;
  std::vector<std::size_t> skipped;  ///< rank-deficient locations
  std::optional<double> sigma_estimate;
  std::optional<double> sigma_increment;

  double functional_min() const { return functional_values(static_cast<Eigen::Index>(winner)); }
};

/// Index of the smallest functional value; exact ties go to the lowest index.
std::size_t argmin_lowest(const Eigen::VectorXd& values);

/// Noise-whitened single-dipole least squares at every location.
ScanResult standard_scan(const Eigen::VectorXd& data, const LeadField& standard, const NoiseModel& noise,
                         int threads = 1);

/// Joint (d_i, alpha_i) solve at one location. Exposed for the oracle tests.
struct LocationFit {
  Eigen::Vector2d moment;
  Eigen::VectorXd alpha;
  double functional = 0.0;
  bool rank_deficient = false;
};

LocationFit bae_fit_location(const Eigen::VectorXd& data, const Eigen::MatrixXd& block, const ErrorStats& stats,
                             const NoiseModel& noise);

/// Error-compensated scan. Every location uses its own eps_mean, leading
/// eigenvectors W_i, prior Gamma_alpha = diag(lambda_1..lambda_p) and the
/// whitener of (Gamma_eps'' + Gamma_e). The winner carries the conductivity
/// estimate. Throws ConfigurationError if `stats` was not built against
/// this standard lead field.
ScanResult bae_scan(const Eigen::VectorXd& data, const LeadField& standard, const StatsLibrary& stats,
                    const NoiseModel& noise, int threads = 1);

struct ConductivityEstimate {
  double value = 0.0;
  double increment = 0.0;
};

/// sigma_hat = prior mean + sum_k cross_cov_k * alpha_k / lambda_k.
ConductivityEstimate estimate_conductivity(const Eigen::VectorXd& alpha, const ErrorStats& stats,
                                           const ConductivityPrior& prior);

// Text record, one "key value..." pair per line in this order:
//   baeeeg-scan 1 / method / winner / position (m) / moment / p / alpha /
//   sigma_estimate (or "none") / sigma_increment (or "none") / functional_min
void write_scan_result(std::ostream& os, const ScanResult& result, const std::string& method,
                       const Eigen::Vector2d& position);

}  // namespace baeeeg
