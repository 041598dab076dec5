#include "baeeeg/baestats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "baeeeg/binio.hpp"
#include "baeeeg/errors.hpp"
#include "baeeeg/parallel.hpp"
#include "baeeeg/rng.hpp"

namespace baeeeg {

void ConductivityPrior::validate() const {
  if (!(std >= 0.0) || !std::isfinite(mean)) throw ValidationError("conductivity prior: std must be >= 0");
  if (!(lower_clip > 0.0)) throw ValidationError("conductivity prior: lower_clip must be positive");
}

void AmplitudePrior::validate() const {
  if (!(std >= 0.0) || !std::isfinite(mean)) throw ValidationError("amplitude prior: std must be >= 0");
}

ConductivitySamples sample_conductivities(const ConductivityPrior& prior, std::size_t count, std::uint64_t seed) {
  prior.validate();
  ConductivitySamples out;
  out.values.reserve(count);
  Rng rng = make_rng(seed, {kConductivityStream});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < count; ++k) {
    double s = prior.mean + prior.std * normal(rng);
    if (s < prior.lower_clip) {
      s = prior.lower_clip;
      ++out.clipped;
    }
    out.values.push_back(s);
  }
  return out;
}

std::vector<LeadField> compute_sample_lead_fields(const Mesh& mesh, std::span<const double> skull_conductivities,
                                                  const ConductivityAssignment& base,
                                                  std::span<const Eigen::Vector2d> source_positions,
                                                  std::span<const int> electrodes, int threads,
                                                  const DipoleSpread& spread) {
  // The dipole loads do not depend on conductivity; only K changes per sample.
  const SparseMatrix loads = dipole_loads(mesh, source_positions, spread);
  std::vector<LeadField> out(skull_conductivities.size());
  parallel_for(out.size(), threads, [&](std::size_t k) {
    ConductivityAssignment cond = base;
    cond.skull = skull_conductivities[k];
    const Eigen::MatrixXd transfer = compute_transfer_matrix(assemble_stiffness(mesh, cond), electrodes);
    LeadField& lf = out[k];
    lf.matrix = transfer * loads;
    average_reference(lf.matrix);
    lf.electrodes.assign(electrodes.begin(), electrodes.end());
  });
  return out;
}

LocationDraws draw_location(std::size_t location, std::size_t model_count, const SamplingPlan& plan,
                            std::uint64_t master_seed) {
  if (model_count == 0) throw ConfigurationError("no sample head models available");
  if (plan.amplitudes < 1) throw ConfigurationError("at least one amplitude sample per location is required");
  plan.amplitude.validate();
  Rng rng = make_rng(master_seed, {kLocationStream, location});
  LocationDraws draws;
  if (plan.pairing == Pairing::Exhaustive) {
    draws.models.resize(model_count);
    std::iota(draws.models.begin(), draws.models.end(), std::size_t{0});
  } else {
    if (plan.models_per_location < 1) throw ConfigurationError("models_per_location must be positive");
    std::uniform_int_distribution<std::size_t> pick(0, model_count - 1);
    draws.models.resize(plan.models_per_location);
    for (auto& k : draws.models) k = pick(rng);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  draws.amplitudes.resize(static_cast<Eigen::Index>(plan.amplitudes));
  for (Eigen::Index s = 0; s < draws.amplitudes.size(); ++s) {
    draws.amplitudes(s) = plan.amplitude.mean + plan.amplitude.std * normal(rng);
  }
  return draws;
}

ErrorSamples compute_error_samples(std::size_t location, std::span<const LeadField> sample_lead_fields,
                                   std::span<const double> sample_sigmas, const LeadField& standard,
                                   const Eigen::Vector2d& radial_dir, const LocationDraws& draws) {
  if (sample_lead_fields.empty() || draws.models.empty()) throw ConfigurationError("empty sample lead-field list");
  if (sample_sigmas.size() != sample_lead_fields.size()) {
    throw ConfigurationError("sample conductivities and lead fields differ in count");
  }
  const Eigen::VectorXd base = standard.response(location, radial_dir);
  const auto S = static_cast<std::size_t>(draws.amplitudes.size());
  ErrorSamples out;
  out.eps.resize(base.size(), static_cast<Eigen::Index>(draws.sample_count()));
  out.sigma.resize(draws.sample_count());
  for (std::size_t k = 0; k < draws.models.size(); ++k) {
    const std::size_t model = draws.models[k];
    if (model >= sample_lead_fields.size()) throw ConfigurationError("model index out of range");
    const Eigen::VectorXd diff = sample_lead_fields[model].response(location, radial_dir) - base;
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t j = s + S * k;
      out.eps.col(static_cast<Eigen::Index>(j)) = draws.amplitudes(static_cast<Eigen::Index>(s)) * diff;
      out.sigma[j] = sample_sigmas[model];
    }
  }
  return out;
}

SampleMoments compute_statistics(const Eigen::MatrixXd& samples) {
  if (samples.cols() < 2) throw StatisticsError("at least two samples are needed for a covariance");
  SampleMoments out;
  out.mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - out.mean;
  out.covariance = centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
  return out;
}

std::size_t truncation_order(const Eigen::VectorXd& descending_eigvals, double energy_threshold) {
  const auto m = static_cast<std::size_t>(descending_eigvals.size());
  const Eigen::VectorXd energy = descending_eigvals.cwiseMax(0.0);
  const double total = energy.sum();
  if (!(total > 0.0)) return 0;
  if (energy_threshold >= 1.0) return m;
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    running += energy(static_cast<Eigen::Index>(k));
    if (running >= energy_threshold * total) return k + 1;
  }
  return m;
}

Spectrum eigendecompose_truncate(const Eigen::MatrixXd& covariance, double energy_threshold) {
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0) {
    throw ValidationError("eigendecomposition needs a non-empty square matrix");
  }
  const double scale = std::max(covariance.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError("covariance matrix is not symmetric");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (covariance + covariance.transpose()));
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  Spectrum out;
  out.eigvals = solver.eigenvalues().reverse();
  out.eigvecs = solver.eigenvectors().rowwise().reverse();
  // Sign convention: the largest-magnitude entry of each eigenvector is positive.
  for (Eigen::Index k = 0; k < out.eigvecs.cols(); ++k) {
    Eigen::Index arg = 0;
    out.eigvecs.col(k).cwiseAbs().maxCoeff(&arg);
    if (out.eigvecs(arg, k) < 0.0) out.eigvecs.col(k) *= -1.0;
  }
  out.p = truncation_order(out.eigvals, energy_threshold);
  return out;
}

Eigen::MatrixXd compute_alpha_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& eps_mean,
                                      const Eigen::MatrixXd& leading) {
  if (samples.rows() != eps_mean.size() || leading.rows() != eps_mean.size()) {
    throw ValidationError("alpha projection: dimension mismatch");
  }
  return leading.transpose() * (samples.colwise() - eps_mean);
}

Eigen::MatrixXd compute_residual_samples(const Eigen::MatrixXd& samples, const Eigen::VectorXd& eps_mean,
                                         const Eigen::MatrixXd& trailing) {
  if (samples.rows() != eps_mean.size() || trailing.rows() != eps_mean.size()) {
    throw ValidationError("residual projection: dimension mismatch");
  }
  return trailing * (trailing.transpose() * (samples.colwise() - eps_mean));
}

Eigen::VectorXd compute_cross_covariance(std::span<const double> sigma, const Eigen::MatrixXd& alpha) {
  if (static_cast<Eigen::Index>(sigma.size()) != alpha.cols()) {
    throw ValidationError("cross-covariance: sigma and alpha sample counts differ");
  }
  if (sigma.size() < 2) throw StatisticsError("cross-covariance needs at least two samples");
  const Eigen::Map<const Eigen::VectorXd> s(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  const Eigen::VectorXd sc = s.array() - s.mean();
  const Eigen::MatrixXd ac = alpha.colwise() - alpha.rowwise().mean();
  return ac * sc / static_cast<double>(sigma.size() - 1);
}

Eigen::MatrixXd ErrorStats::residual_covariance() const {
  const Eigen::MatrixXd q = Q();
  const Eigen::VectorXd tail = eigvals.tail(q.cols());
  return q * tail.asDiagonal() * q.transpose();
}

namespace {

// Clamps round-off negatives of a covariance spectrum to zero.
void clamp_spectrum(Eigen::VectorXd& eigvals) {
  const double top = eigvals.size() > 0 ? std::max(eigvals(0), 0.0) : 0.0;
  for (Eigen::Index k = 0; k < eigvals.size(); ++k) {
    if (eigvals(k) < 0.0) {
      if (eigvals(k) < -1e-8 * top) throw StatisticsError("covariance has a significantly negative eigenvalue");
      eigvals(k) = 0.0;
    }
  }
}

ErrorStats finish_stats(Eigen::VectorXd mean, const Eigen::MatrixXd& covariance, double energy_threshold) {
  Spectrum spectrum = eigendecompose_truncate(covariance, energy_threshold);
  clamp_spectrum(spectrum.eigvals);
  ErrorStats stats;
  stats.eps_mean = std::move(mean);
  stats.eigvals = std::move(spectrum.eigvals);
  stats.eigvecs = std::move(spectrum.eigvecs);
  stats.p = spectrum.p;
  return stats;
}

}  // namespace

ErrorStats stats_from_samples(const ErrorSamples& samples, double energy_threshold) {
  const SampleMoments moments = compute_statistics(samples.eps);
  ErrorStats stats = finish_stats(moments.mean, moments.covariance, energy_threshold);
  stats.cross_cov = compute_cross_covariance(samples.sigma, compute_alpha_samples(samples.eps, stats.eps_mean, stats.W()));
  return stats;
}

ErrorStats stats_from_grid(const Eigen::MatrixXd& differences, std::span<const double> sigma,
                           const Eigen::VectorXd& amplitudes, double energy_threshold) {
  const Eigen::Index k_count = differences.cols();
  const Eigen::Index s_count = amplitudes.size();
  if (static_cast<Eigen::Index>(sigma.size()) != k_count) throw ValidationError("grid: sigma count mismatch");
  if (k_count < 1 || s_count < 1) throw ConfigurationError("grid needs at least one model and one amplitude");
  const double j_count = static_cast<double>(k_count) * static_cast<double>(s_count);
  if (j_count < 2) throw StatisticsError("at least two samples are needed for a covariance");

  // eps_{k,s} - mean = a_s D_k + (a_s - a_bar) diff_bar with D_k = diff_k - diff_bar;
  // the cross terms vanish because sum_k D_k = 0.
  const Eigen::VectorXd diff_bar = differences.rowwise().mean();
  const Eigen::MatrixXd centered = differences.colwise() - diff_bar;
  const double a_bar = amplitudes.mean();
  const double a_sum = amplitudes.sum();
  const double a_sq = amplitudes.squaredNorm();
  const double a_var = (amplitudes.array() - a_bar).square().sum();

  const Eigen::MatrixXd covariance =
      (a_sq * centered * centered.transpose() + static_cast<double>(k_count) * a_var * diff_bar * diff_bar.transpose()) /
      (j_count - 1.0);
  ErrorStats stats = finish_stats(a_bar * diff_bar, covariance, energy_threshold);

  const Eigen::Map<const Eigen::VectorXd> s(sigma.data(), k_count);
  const Eigen::VectorXd sc = s.array() - s.mean();
  stats.cross_cov = a_sum * stats.W().transpose() * (centered * sc) / (j_count - 1.0);
  stats.models = static_cast<std::size_t>(k_count);
  stats.amplitudes = static_cast<std::size_t>(s_count);
  return stats;
}

std::uint64_t sample_models_digest(std::span<const double> conductivities, std::span<const LeadField> lead_fields) {
  binio::Fnv1a h;
  h.doubles(conductivities);
  for (const auto& lf : lead_fields) h.value(lf.digest());
  return h.digest();
}

std::uint64_t StatsLibrary::provenance() const {
  binio::Fnv1a h;
  h.value(standard_digest);
  h.value(samples_digest);
  h.value(config.standard_skull);
  h.value(config.prior.mean);
  h.value(config.prior.std);
  h.value(config.prior.lower_clip);
  h.value(config.plan.amplitude.mean);
  h.value(config.plan.amplitude.std);
  h.value<std::uint64_t>(config.plan.amplitudes);
  h.value<std::uint32_t>(static_cast<std::uint32_t>(config.plan.pairing));
  h.value<std::uint64_t>(config.plan.models_per_location);
  h.value(config.energy_threshold);
  h.value(config.master_seed);
  return h.digest();
}

StatsLibrary build_stats_library(const StatsConfig& config, const LeadField& standard,
                                 std::span<const LeadField> sample_lead_fields,
                                 const ConductivitySamples& conductivities,
                                 std::span<const Eigen::Vector2d> radial_dirs, int threads) {
  if (sample_lead_fields.empty()) throw ConfigurationError("no sample lead fields");
  if (conductivities.values.size() != sample_lead_fields.size()) {
    throw ConfigurationError("sample conductivities and lead fields differ in count");
  }
  if (radial_dirs.size() != standard.source_count()) throw ConfigurationError("radial directions do not match A_0");
  for (const auto& lf : sample_lead_fields) {
    if (lf.matrix.rows() != standard.matrix.rows() || lf.matrix.cols() != standard.matrix.cols()) {
      throw ConfigurationError("sample lead field dimensions differ from A_0");
    }
  }
  if (!(config.energy_threshold > 0.0 && config.energy_threshold <= 1.0)) {
    throw ValidationError("energy threshold must lie in (0, 1]");
  }

  StatsLibrary lib;
  lib.config = config;
  lib.model_count = sample_lead_fields.size();
  lib.clipped = conductivities.clipped;
  lib.standard_digest = standard.digest();
  lib.samples_digest = sample_models_digest(conductivities.values, sample_lead_fields);

  const std::size_t n = standard.source_count();
  lib.entries.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const LocationDraws draws = draw_location(i, sample_lead_fields.size(), config.plan, config.master_seed);
    const Eigen::VectorXd base = standard.response(i, radial_dirs[i]);
    Eigen::MatrixXd differences(base.size(), static_cast<Eigen::Index>(draws.models.size()));
    std::vector<double> sigma(draws.models.size());
    for (std::size_t k = 0; k < draws.models.size(); ++k) {
      differences.col(static_cast<Eigen::Index>(k)) =
          sample_lead_fields[draws.models[k]].response(i, radial_dirs[i]) - base;
      sigma[k] = conductivities.values[draws.models[k]];
    }
    lib.entries[i] = stats_from_grid(differences, sigma, draws.amplitudes, config.energy_threshold);
  });
  return lib;
}

namespace {

constexpr std::uint64_t kStatsHeaderSize = 256;

void put_matrix(std::ostream& os, const Eigen::MatrixXd& a) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) binio::put(os, a(r, c));
  }
}

void get_matrix(std::istream& is, Eigen::MatrixXd& a) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = binio::get<double>(is);
  }
}

}  // namespace

void write_stats_library(std::ostream& os, const StatsLibrary& lib) {
  const std::uint64_t m = lib.m();
  const std::uint64_t n = lib.n();
  binio::put_magic(os, "BAESTAT");
  binio::put<std::uint32_t>(os, 1);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(lib.config.plan.pairing));
  binio::put(os, m);
  binio::put(os, n);
  binio::put(os, lib.config.energy_threshold);
  binio::put(os, lib.standard_digest);
  binio::put(os, lib.samples_digest);
  binio::put(os, lib.config.master_seed);
  binio::put(os, lib.config.prior.mean);
  binio::put(os, lib.config.prior.std);
  binio::put(os, lib.config.prior.lower_clip);
  binio::put(os, lib.config.plan.amplitude.mean);
  binio::put(os, lib.config.plan.amplitude.std);
  binio::put(os, lib.config.standard_skull);
  binio::put<std::uint64_t>(os, lib.model_count);
  binio::put<std::uint64_t>(os, lib.config.plan.amplitudes);
  binio::put<std::uint64_t>(os, lib.config.plan.models_per_location);
  binio::put<std::uint64_t>(os, lib.clipped);
  for (int pad = 144; pad < static_cast<int>(kStatsHeaderSize); ++pad) binio::put<std::uint8_t>(os, 0);

  std::uint64_t offset = kStatsHeaderSize + 8 * n;
  for (const auto& e : lib.entries) {
    if (e.m() != m) throw ValidationError("stats library entries differ in m");
    binio::put(os, offset);
    offset += 8 * (3 + 2 * m + m * m + e.p);
  }
  for (const auto& e : lib.entries) {
    binio::put<std::uint64_t>(os, e.p);
    binio::put<std::uint64_t>(os, e.models);
    binio::put<std::uint64_t>(os, e.amplitudes);
    binio::put_doubles(os, std::span<const double>(e.eps_mean.data(), m));
    binio::put_doubles(os, std::span<const double>(e.eigvals.data(), m));
    put_matrix(os, e.W());
    put_matrix(os, e.Q());
    binio::put_doubles(os, std::span<const double>(e.cross_cov.data(), e.p));
  }
}

StatsLibrary read_stats_library(std::istream& is) {
  binio::expect_magic(is, "BAESTAT");
  if (binio::get<std::uint32_t>(is) != 1) throw IoError("stats file: unsupported version");
  StatsLibrary lib;
  const auto pairing = binio::get<std::uint32_t>(is);
  if (pairing > 1) throw IoError("stats file: unknown pairing mode");
  lib.config.plan.pairing = static_cast<Pairing>(pairing);
  const auto m = binio::get<std::uint64_t>(is);
  const auto n = binio::get<std::uint64_t>(is);
  if (m == 0 || m > 100000 || n > 10000000) throw IoError("stats file: implausible dimensions");
  lib.config.energy_threshold = binio::get<double>(is);
  lib.standard_digest = binio::get<std::uint64_t>(is);
  lib.samples_digest = binio::get<std::uint64_t>(is);
  lib.config.master_seed = binio::get<std::uint64_t>(is);
  lib.config.prior.mean = binio::get<double>(is);
  lib.config.prior.std = binio::get<double>(is);
  lib.config.prior.lower_clip = binio::get<double>(is);
  lib.config.plan.amplitude.mean = binio::get<double>(is);
  lib.config.plan.amplitude.std = binio::get<double>(is);
  lib.config.standard_skull = binio::get<double>(is);
  lib.model_count = binio::get<std::uint64_t>(is);
  lib.config.plan.amplitudes = binio::get<std::uint64_t>(is);
  lib.config.plan.models_per_location = binio::get<std::uint64_t>(is);
  lib.clipped = binio::get<std::uint64_t>(is);

  is.seekg(static_cast<std::streamoff>(kStatsHeaderSize));
  std::vector<std::uint64_t> offsets(n);
  for (auto& o : offsets) o = binio::get<std::uint64_t>(is);
  lib.entries.resize(n);
  const auto mi = static_cast<Eigen::Index>(m);
  for (std::size_t i = 0; i < n; ++i) {
    is.seekg(static_cast<std::streamoff>(offsets[i]));
    if (!is) throw IoError("stats file: bad record offset");
    ErrorStats& e = lib.entries[i];
    e.p = binio::get<std::uint64_t>(is);
    if (e.p > m) throw IoError("stats file: truncation order exceeds m");
    e.models = binio::get<std::uint64_t>(is);
    e.amplitudes = binio::get<std::uint64_t>(is);
    e.eps_mean.resize(mi);
    e.eigvals.resize(mi);
    binio::get_doubles(is, std::span<double>(e.eps_mean.data(), m));
    binio::get_doubles(is, std::span<double>(e.eigvals.data(), m));
    const auto p = static_cast<Eigen::Index>(e.p);
    Eigen::MatrixXd w(mi, p);
    Eigen::MatrixXd q(mi, mi - p);
    get_matrix(is, w);
    get_matrix(is, q);
    e.eigvecs.resize(mi, mi);
    e.eigvecs.leftCols(p) = w;
    e.eigvecs.rightCols(mi - p) = q;
    e.cross_cov.resize(p);
    binio::get_doubles(is, std::span<double>(e.cross_cov.data(), e.p));
  }
  return lib;
}

void save_stats_library(const std::string& path, const StatsLibrary& lib) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_stats_library(os, lib);
  if (!os) throw IoError("write failed: " + path);
}

StatsLibrary load_stats_library(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_stats_library(is);
}

}  // namespace baeeeg
