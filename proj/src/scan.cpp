#include "baeeeg/scan.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include <Eigen/Dense>

#include "baeeeg/errors.hpp"
#include "baeeeg/parallel.hpp"

namespace baeeeg {

NoiseModel NoiseModel::average_referenced(std::size_t m, double zeta) {
  const auto mi = static_cast<Eigen::Index>(m);
  NoiseModel noise;
  noise.mean = Eigen::VectorXd::Zero(mi);
  noise.covariance = zeta * zeta *
                     (Eigen::MatrixXd::Identity(mi, mi) - Eigen::MatrixXd::Constant(mi, mi, 1.0 / static_cast<double>(m)));
  return noise;
}

Eigen::MatrixXd zero_mean_basis(std::size_t m) {
  // Helmert basis: column k is (1,...,1,-k,0,...)/sqrt(k(k+1)).
  const auto mi = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(mi, mi - 1);
  for (Eigen::Index k = 1; k < mi; ++k) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
    u.col(k - 1).head(k).setConstant(scale);
    u(k, k - 1) = -static_cast<double>(k) * scale;
  }
  return u;
}

Eigen::MatrixXd whitener(const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != covariance.cols() || covariance.rows() < 2) {
    throw ValidationError("whitener needs a square covariance with m >= 2");
  }
  const Eigen::MatrixXd u = zero_mean_basis(static_cast<std::size_t>(covariance.rows()));
  const Eigen::MatrixXd restricted = u.transpose() * covariance * u;
  const Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (restricted + restricted.transpose()));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("error-plus-noise covariance is not positive definite on the zero-mean subspace");
  }
  // restricted = R R^T  =>  L = R^{-1} U^T gives L^T L = U restricted^{-1} U^T.
  return llt.matrixL().solve(u.transpose());
}

std::size_t argmin_lowest(const Eigen::VectorXd& values) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) < values(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  }
  return best;
}

namespace {

void check_inputs(const Eigen::VectorXd& data, const LeadField& lf, const NoiseModel& noise) {
  const auto m = lf.matrix.rows();
  if (data.size() != m) throw ValidationError("data length does not match the lead field");
  if (noise.mean.size() != m || noise.covariance.rows() != m || noise.covariance.cols() != m) {
    throw ValidationError("noise model dimension does not match the lead field");
  }
  if (lf.source_count() == 0) throw ValidationError("lead field has no sources");
}

void finish(ScanResult& result) {
  result.winner = argmin_lowest(result.functional_values);
  result.dipole = result.moments.col(static_cast<Eigen::Index>(result.winner));
  for (Eigen::Index i = 0; i < result.functional_values.size(); ++i) {
    if (!std::isfinite(result.functional_values(i))) result.skipped.push_back(static_cast<std::size_t>(i));
  }
}

}  // namespace

ScanResult standard_scan(const Eigen::VectorXd& data, const LeadField& standard, const NoiseModel& noise,
                         int threads) {
  check_inputs(data, standard, noise);
  const Eigen::MatrixXd l = whitener(noise.covariance);
  const Eigen::VectorXd y = l * (data - noise.mean);
  const std::size_t n = standard.source_count();

  ScanResult result;
  result.functional_values.resize(static_cast<Eigen::Index>(n));
  result.moments.resize(2, static_cast<Eigen::Index>(n));
  parallel_for(n, threads, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    const Eigen::MatrixXd b = l * standard.block(i);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
    if (qr.rank() < 2) {
      result.functional_values(col) = std::numeric_limits<double>::infinity();
      result.moments.col(col).setZero();
      return;
    }
    const Eigen::Vector2d d = qr.solve(y);
    result.moments.col(col) = d;
    result.functional_values(col) = (y - b * d).squaredNorm();
  });
  finish(result);
  return result;
}

LocationFit bae_fit_location(const Eigen::VectorXd& data, const Eigen::MatrixXd& block, const ErrorStats& stats,
                             const NoiseModel& noise) {
  const auto p = static_cast<Eigen::Index>(stats.p);
  const Eigen::MatrixXd l = whitener(stats.residual_covariance() + noise.covariance);
  const Eigen::VectorXd y = l * (data - stats.eps_mean - noise.mean);

  // Components with lambda_k = 0 have infinite prior precision and stay at 0.
  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (stats.eigvals(k) > 0.0) active.push_back(k);
  }
  const auto q = static_cast<Eigen::Index>(active.size());
  const Eigen::Index rows = l.rows() + q;

  // [ L A_i   L W_i            ] [d    ]   [L (v - eps_* - e_*)]
  // [ 0       Gamma_alpha^-1/2 ] [alpha] = [0                  ]
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(rows, 2 + q);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows);
  system.topLeftCorner(l.rows(), 2) = l * block;
  for (Eigen::Index c = 0; c < q; ++c) {
    system.block(0, 2 + c, l.rows(), 1) = l * stats.eigvecs.col(active[static_cast<std::size_t>(c)]);
    system(l.rows() + c, 2 + c) = 1.0 / std::sqrt(stats.eigvals(active[static_cast<std::size_t>(c)]));
  }
  rhs.head(l.rows()) = y;

  LocationFit fit;
  fit.alpha = Eigen::VectorXd::Zero(p);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(system);
  if (qr.rank() < 2 + q) {
    fit.rank_deficient = true;
    fit.moment.setZero();
    fit.functional = std::numeric_limits<double>::infinity();
    return fit;
  }
  const Eigen::VectorXd x = qr.solve(rhs);
  fit.moment = x.head<2>();
  for (Eigen::Index c = 0; c < q; ++c) fit.alpha(active[static_cast<std::size_t>(c)]) = x(2 + c);
  fit.functional = (system * x - rhs).squaredNorm();
  return fit;
}

ScanResult bae_scan(const Eigen::VectorXd& data, const LeadField& standard, const StatsLibrary& stats,
                    const NoiseModel& noise, int threads) {
  check_inputs(data, standard, noise);
  if (stats.standard_digest != standard.digest()) {
    throw ConfigurationError("statistics library was built against a different standard lead field");
  }
  const std::size_t n = standard.source_count();
  if (stats.n() != n || stats.m() != standard.electrode_count()) {
    throw ConfigurationError("statistics library dimensions do not match the standard lead field");
  }

  ScanResult result;
  result.functional_values.resize(static_cast<Eigen::Index>(n));
  result.moments.resize(2, static_cast<Eigen::Index>(n));
  result.alphas.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const LocationFit fit = bae_fit_location(data, standard.block(i), stats.entries[i], noise);
    const auto col = static_cast<Eigen::Index>(i);
    result.functional_values(col) = fit.functional;
    result.moments.col(col) = fit.moment;
    result.alphas[i] = fit.alpha;
  });
  finish(result);
  result.alpha = result.alphas[result.winner];
  try {
    const ConductivityEstimate est = estimate_conductivity(result.alpha, stats.entries[result.winner], stats.config.prior);
    result.sigma_estimate = est.value;
    result.sigma_increment = est.increment;
  } catch (const StatisticsError&) {
    // Degenerate spectrum at the winner: no conductivity estimate.
  }
  return result;
}

ConductivityEstimate estimate_conductivity(const Eigen::VectorXd& alpha, const ErrorStats& stats,
                                           const ConductivityPrior& prior) {
  if (static_cast<std::size_t>(alpha.size()) != stats.p || static_cast<std::size_t>(stats.cross_cov.size()) != stats.p) {
    throw ValidationError("alpha length must equal the truncation order p");
  }
  ConductivityEstimate est;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    if (!(stats.eigvals(k) > 0.0)) throw StatisticsError("zero eigenvalue inside the retained block");
    est.increment += stats.cross_cov(k) * alpha(k) / stats.eigvals(k);
  }
  est.value = prior.mean + est.increment;
  return est;
}

void write_scan_result(std::ostream& os, const ScanResult& result, const std::string& method,
                       const Eigen::Vector2d& position) {
  os << std::setprecision(17);
  os << "baeeeg-scan 1\n";
  os << "method " << method << '\n';
  os << "winner " << result.winner << '\n';
  os << "position " << position.x() << ' ' << position.y() << '\n';
  os << "moment " << result.dipole.x() << ' ' << result.dipole.y() << '\n';
  os << "p " << result.alpha.size() << '\n';
  os << "alpha";
  for (Eigen::Index k = 0; k < result.alpha.size(); ++k) os << ' ' << result.alpha(k);
  os << '\n';
  if (result.sigma_estimate) {
    os << "sigma_estimate " << *result.sigma_estimate << '\n';
    os << "sigma_increment " << *result.sigma_increment << '\n';
  } else {
    os << "sigma_estimate none\n";
    os << "sigma_increment none\n";
  }
  os << "functional_min " << result.functional_min() << '\n';
}

}  // namespace baeeeg
