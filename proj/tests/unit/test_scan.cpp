#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "baeeeg/errors.hpp"
#include "baeeeg/scan.hpp"
#include "support.hpp"

using namespace baeeeg;
using testsupport::relative_error;
using testsupport::small_model;

namespace {

const StatsLibrary& library() {
  static const StatsLibrary lib = [] {
    const auto& sm = small_model();
    StatsConfig c;
    c.plan.amplitudes = 40;
    c.master_seed = 8;
    return build_stats_library(c, sm.standard, sm.sample_lead_fields, sm.samples, sm.sources.radial_dirs);
  }();
  return lib;
}

// Pseudo-inverse of C on the zero-sum subspace without any basis:
// (Pi C Pi + J/m)^-1 - J/m with J the all-ones matrix.
Eigen::MatrixXd zero_sum_pinv(const Eigen::MatrixXd& c) {
  const Eigen::Index m = c.rows();
  const Eigen::MatrixXd j = Eigen::MatrixXd::Constant(m, m, 1.0 / static_cast<double>(m));
  const Eigen::MatrixXd pi = Eigen::MatrixXd::Identity(m, m) - j;
  return (pi * c * pi + j).inverse() - j;
}

Eigen::VectorXd noisy_data(std::size_t source, double sigma_skull, double zeta, unsigned seed) {
  const auto& sm = small_model();
  ConductivityAssignment c = sm.standard_cond;
  c.skull = sigma_skull;
  const std::vector<Eigen::Vector2d> p{sm.sources.positions[source]};
  Eigen::VectorXd v = build_lead_field(*sm.mesh, c, p, sm.electrodes).response(0, sm.sources.radial_dirs[source]);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, zeta);
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += normal(rng);
  average_reference(v);
  return v;
}

double rms(const Eigen::VectorXd& v) { return std::sqrt(v.squaredNorm() / static_cast<double>(v.size())); }

// Library with eps_* = 0 and every eigenvalue zero, keeping p components.
StatsLibrary collapsed_library(const LeadField& standard, std::size_t p) {
  StatsLibrary lib;
  lib.standard_digest = standard.digest();
  const auto m = static_cast<Eigen::Index>(standard.electrode_count());
  for (std::size_t i = 0; i < standard.source_count(); ++i) {
    ErrorStats e;
    e.eps_mean = Eigen::VectorXd::Zero(m);
    e.eigvals = Eigen::VectorXd::Zero(m);
    e.eigvecs = Eigen::MatrixXd::Identity(m, m);
    e.p = p;
    e.cross_cov = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    lib.entries.push_back(e);
  }
  return lib;
}

}  // namespace

TEST_CASE("zero-sum basis is orthonormal and orthogonal to constants") {
  for (std::size_t m : {2UL, 5UL, 32UL}) {
    const Eigen::MatrixXd u = zero_mean_basis(m);
    CHECK(u.rows() == static_cast<Eigen::Index>(m));
    CHECK(u.cols() == static_cast<Eigen::Index>(m - 1));
    CHECK((u.transpose() * u - Eigen::MatrixXd::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(u.colwise().sum().cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("whitener inverts the covariance on the zero-sum subspace") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(8, 8);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = normal(rng);
  const Eigen::MatrixXd c = a * a.transpose() + NoiseModel::average_referenced(8, 0.5).covariance;
  const Eigen::MatrixXd l = whitener(c);
  CHECK(l.rows() == 7);
  CHECK(l.cols() == 8);
  CHECK((l.transpose() * l - zero_sum_pinv(c)).cwiseAbs().maxCoeff() < 1e-10 * zero_sum_pinv(c).cwiseAbs().maxCoeff());
  const Eigen::MatrixXd u = zero_mean_basis(8);
  CHECK(((l * u) * (u.transpose() * c * u) * (l * u).transpose() - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff() <
        1e-10);
  CHECK((l * Eigen::VectorXd::Ones(8)).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(whitener(Eigen::MatrixXd::Zero(4, 4)), NumericalError);
  CHECK_THROWS_AS(whitener(Eigen::MatrixXd::Identity(1, 1)), ValidationError);
}

TEST_CASE("average-referenced noise model") {
  const NoiseModel n = NoiseModel::average_referenced(4, 2.0);
  CHECK(n.m() == 4);
  CHECK(n.mean.isZero());
  CHECK(n.covariance(0, 0) == doctest::Approx(4.0 * 0.75));
  CHECK(n.covariance(0, 1) == doctest::Approx(-1.0));
  CHECK((n.covariance * Eigen::VectorXd::Ones(4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("argmin ties go to the lowest index") {
  CHECK(argmin_lowest(Eigen::Vector4d(3, 1, 1, 2)) == 1);
  CHECK(argmin_lowest(Eigen::Vector3d(5, 5, 5)) == 0);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(argmin_lowest(Eigen::Vector3d(inf, 2, inf)) == 1);
}

TEST_CASE("standard scan recovers a noiseless self-generated source") {
  const auto& sm = small_model();
  const NoiseModel noise = NoiseModel::average_referenced(32, 1e-3);
  for (std::size_t src : {0UL, 7UL, sm.sources.size() - 1}) {
    const Eigen::Vector2d q = 1.7 * sm.sources.radial_dirs[src];
    const Eigen::VectorXd v = sm.standard.response(src, q);
    const ScanResult r = standard_scan(v, sm.standard, noise);
    CHECK(r.winner == src);
    CHECK((r.dipole - q).norm() < 1e-8 * q.norm());
    CHECK(r.functional_min() < 1e-16);
    CHECK(r.alpha.size() == 0);
    CHECK(!r.sigma_estimate);
    CHECK(r.skipped.empty());
  }
}

TEST_CASE("standard scan matches a normal-equations oracle") {
  const auto& sm = small_model();
  const double zeta = 2e-3;
  const Eigen::VectorXd v = noisy_data(4, 0.0065, zeta, 1);
  const NoiseModel noise = NoiseModel::average_referenced(32, zeta);
  const ScanResult r = standard_scan(v, sm.standard, noise);
  const Eigen::MatrixXd p = zero_sum_pinv(noise.covariance);
  for (std::size_t i = 0; i < sm.sources.size(); i += 5) {
    const Eigen::MatrixXd a = sm.standard.block(i);
    const Eigen::Vector2d d = (a.transpose() * p * a).ldlt().solve(a.transpose() * p * v);
    const Eigen::VectorXd res = v - a * d;
    CHECK((r.moments.col(static_cast<Eigen::Index>(i)) - d).norm() <= 1e-8 * d.norm());
    CHECK(r.functional_values(static_cast<Eigen::Index>(i)) ==
          doctest::Approx(res.dot(p * res)).epsilon(1e-8));
  }
}

TEST_CASE("scaling data and noise together scales the moment only") {
  const auto& sm = small_model();
  const Eigen::VectorXd v = noisy_data(6, 0.0073, 2e-3, 2);
  const ScanResult a = standard_scan(v, sm.standard, NoiseModel::average_referenced(32, 2e-3));
  const ScanResult b = standard_scan(5.0 * v, sm.standard, NoiseModel::average_referenced(32, 1e-2));
  CHECK(a.winner == b.winner);
  CHECK((5.0 * a.dipole - b.dipole).norm() < 1e-10 * b.dipole.norm());
  CHECK(a.functional_min() == doctest::Approx(b.functional_min()).epsilon(1e-10));
}

TEST_CASE("BAE collapses to the standard scan without approximation error") {
  const auto& sm = small_model();
  const double zeta = 3e-3;
  const NoiseModel noise = NoiseModel::average_referenced(32, zeta);
  const Eigen::VectorXd v = noisy_data(9, 0.006, zeta, 4);
  const ScanResult s = standard_scan(v, sm.standard, noise);
  for (std::size_t p : {0UL, 2UL}) {
    const ScanResult b = bae_scan(v, sm.standard, collapsed_library(sm.standard, p), noise);
    CHECK(b.winner == s.winner);
    CHECK((b.dipole - s.dipole).norm() <= 1e-8 * s.dipole.norm());
    CHECK((b.moments - s.moments).cwiseAbs().maxCoeff() <= 1e-8 * s.moments.cwiseAbs().maxCoeff());
    CHECK(b.functional_min() == doctest::Approx(s.functional_min()).epsilon(1e-8));
    CHECK(b.alpha.size() == static_cast<Eigen::Index>(p));
    CHECK(b.alpha.isZero());
  }
}

TEST_CASE("augmented solve matches a dense normal-equations oracle") {
  const auto& sm = small_model();
  const StatsLibrary& lib = library();
  const double zeta = 2e-3;
  const NoiseModel noise = NoiseModel::average_referenced(32, zeta);
  const Eigen::VectorXd v = noisy_data(11, 0.0055, zeta, 5);
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> pick(0, sm.sources.size() - 1);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t i = pick(rng);
    const ErrorStats& st = lib.entries[i];
    const LocationFit fit = bae_fit_location(v, sm.standard.block(i), st, noise);
    REQUIRE(!fit.rank_deficient);

    const auto p = static_cast<Eigen::Index>(st.p);
    const Eigen::MatrixXd pinv = zero_sum_pinv(st.residual_covariance() + noise.covariance);
    Eigen::MatrixXd g(32, 2 + p);
    g << sm.standard.block(i), st.W();
    Eigen::MatrixXd normal = g.transpose() * pinv * g;
    for (Eigen::Index k = 0; k < p; ++k) normal(2 + k, 2 + k) += 1.0 / st.eigvals(k);
    const Eigen::VectorXd r = v - st.eps_mean;
    const Eigen::VectorXd x = normal.ldlt().solve(g.transpose() * pinv * r);

    Eigen::VectorXd got(2 + p);
    got << fit.moment, fit.alpha;
    CHECK((got - x).norm() <= 1e-8 * x.norm());
    const Eigen::VectorXd res = r - g * x;
    double functional = res.dot(pinv * res);
    for (Eigen::Index k = 0; k < p; ++k) functional += x(2 + k) * x(2 + k) / st.eigvals(k);
    CHECK(fit.functional == doctest::Approx(functional).epsilon(1e-8));
  }
}

TEST_CASE("BAE scan carries alpha and a conductivity estimate") {
  const auto& sm = small_model();
  const StatsLibrary& lib = library();
  const double zeta = 1e-3;
  const Eigen::VectorXd v = noisy_data(10, 0.0055, zeta, 6);
  const ScanResult r = bae_scan(v, sm.standard, lib, NoiseModel::average_referenced(32, zeta));
  REQUIRE(r.sigma_estimate);
  CHECK(r.alpha.size() == static_cast<Eigen::Index>(lib.entries[r.winner].p));
  CHECK(*r.sigma_estimate == doctest::Approx(lib.config.prior.mean + *r.sigma_increment));
  CHECK(r.alphas.size() == sm.sources.size());
  CHECK(r.moments.cols() == static_cast<Eigen::Index>(sm.sources.size()));
}

TEST_CASE("scans do not depend on the thread count") {
  const auto& sm = small_model();
  const Eigen::VectorXd v = noisy_data(3, 0.01, 2e-3, 7);
  const NoiseModel noise = NoiseModel::average_referenced(32, 2e-3);
  const ScanResult a = bae_scan(v, sm.standard, library(), noise, 1);
  const ScanResult b = bae_scan(v, sm.standard, library(), noise, 4);
  CHECK(a.winner == b.winner);
  CHECK(a.functional_values == b.functional_values);
  CHECK(a.moments == b.moments);
  const ScanResult c = standard_scan(v, sm.standard, noise, 1);
  const ScanResult d = standard_scan(v, sm.standard, noise, 3);
  CHECK(c.functional_values == d.functional_values);
}

TEST_CASE("conductivity estimate from alpha") {
  ErrorStats st;
  st.p = 1;
  st.eigvals = Eigen::Vector2d(4.0, 1.0);
  st.cross_cov = Eigen::VectorXd::Constant(1, 0.002);
  const ConductivityPrior prior;
  const ConductivityEstimate e = estimate_conductivity(Eigen::VectorXd::Constant(1, 2.0), st, prior);
  CHECK(e.increment == doctest::Approx(0.001));
  CHECK(e.value == doctest::Approx(0.0083));
  CHECK(estimate_conductivity(Eigen::VectorXd::Zero(1), st, prior).value == doctest::Approx(0.0073));

  st.p = 2;
  st.cross_cov = Eigen::Vector2d(0.002, -0.001);
  CHECK(estimate_conductivity(Eigen::Vector2d(2.0, 3.0), st, prior).value == doctest::Approx(0.0073 + 0.001 - 0.003));
  CHECK_THROWS_AS(estimate_conductivity(Eigen::VectorXd::Zero(1), st, prior), ValidationError);
  st.eigvals(1) = 0.0;
  CHECK_THROWS_AS(estimate_conductivity(Eigen::Vector2d(1, 1), st, prior), StatisticsError);
}

TEST_CASE("scan input validation") {
  const auto& sm = small_model();
  const NoiseModel noise = NoiseModel::average_referenced(32, 1e-3);
  CHECK_THROWS_AS(standard_scan(Eigen::VectorXd::Zero(31), sm.standard, noise), ValidationError);
  CHECK_THROWS_AS(standard_scan(Eigen::VectorXd::Zero(32), sm.standard, NoiseModel::average_referenced(30, 1e-3)),
                  ValidationError);
  StatsLibrary wrong = collapsed_library(sm.standard, 0);
  wrong.standard_digest ^= 1;
  CHECK_THROWS_AS(bae_scan(Eigen::VectorXd::Zero(32), sm.standard, wrong, noise), ConfigurationError);
  StatsLibrary short_lib = collapsed_library(sm.standard, 0);
  short_lib.entries.pop_back();
  CHECK_THROWS_AS(bae_scan(Eigen::VectorXd::Zero(32), sm.standard, short_lib, noise), ConfigurationError);
}

TEST_CASE("rank-deficient locations are skipped") {
  const auto& sm = small_model();
  LeadField lf = sm.standard;
  lf.matrix.middleCols(0, 2).setZero();
  lf.matrix.col(3).setZero();
  const Eigen::VectorXd v = sm.standard.response(5, sm.sources.radial_dirs[5]);
  const ScanResult r = standard_scan(v, lf, NoiseModel::average_referenced(32, 1e-3));
  REQUIRE(r.skipped.size() == 2);
  CHECK(r.skipped[0] == 0);
  CHECK(r.skipped[1] == 1);
  CHECK(std::isinf(r.functional_values(0)));
  CHECK(r.winner == 5);
}

TEST_CASE("scan result text record") {
  ScanResult r;
  r.winner = 3;
  r.dipole = Eigen::Vector2d(0.5, -0.25);
  r.alpha = Eigen::VectorXd::Constant(1, 1.5);
  r.functional_values = Eigen::Vector4d(4, 3, 2, 1);
  r.sigma_estimate = 0.006;
  r.sigma_increment = -0.0013;
  std::ostringstream os;
  write_scan_result(os, r, "bae", Eigen::Vector2d(0.06, 0.01));
  const std::string text = os.str();
  CHECK(text.rfind("baeeeg-scan 1\nmethod bae\nwinner 3\nposition 0.059999999999999998 0.01\n", 0) == 0);
  CHECK(text.find("p 1\nalpha 1.5\nsigma_estimate 0.0060000000000000001\n") != std::string::npos);
  CHECK(text.find("functional_min 1\n") != std::string::npos);

  ScanResult s;
  s.functional_values = Eigen::VectorXd::Constant(1, 2.0);
  std::ostringstream os2;
  write_scan_result(os2, s, "standard", Eigen::Vector2d::Zero());
  CHECK(os2.str().find("sigma_estimate none\nsigma_increment none\n") != std::string::npos);
}
