#include "baeeeg/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "baeeeg/errors.hpp"
#include "baeeeg/parallel.hpp"
#include "baeeeg/rng.hpp"

namespace baeeeg {

double noise_std_for_snr(const Eigen::VectorXd& signal, double snr_db) {
  if (std::isnan(snr_db)) throw ValidationError("snr_db is NaN");
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (signal.size() == 0) throw ValidationError("empty signal");
  const double rms = std::sqrt(signal.squaredNorm() / static_cast<double>(signal.size()));
  if (!(rms > 0.0)) throw ValidationError("degenerate signal: zero rms at finite SNR");
  return rms / std::pow(10.0, snr_db / 20.0);
}

Measurement simulate_measurements(const LeadField& accurate, const Dipole& dipole, double snr_db,
                                  std::uint64_t seed) {
  Measurement out;
  out.clean = forward_map(accurate, dipole);
  out.noise_std = noise_std_for_snr(out.clean, snr_db);
  out.data = out.clean;
  if (out.noise_std > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, out.noise_std);
    for (Eigen::Index k = 0; k < out.data.size(); ++k) out.data(k) += normal(rng);
    average_reference(out.data);
  }
  return out;
}

double euclidean_distance_mm(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return 1000.0 * (a - b).norm();
}

Eigen::Vector2d SourcePreset::position() const {
  return radius * Eigen::Vector2d(std::cos(angle), std::sin(angle));
}

std::vector<SourcePreset> default_source_presets() {
  return {
      {"A", 0.0665, 0.80, 1.0},
      {"B", 0.0707, 2.79, 1.0},
      {"C", 0.0665, 5.06, 1.0},
  };
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find_first_of(",\n\r\"") != std::string::npos) {
    throw ValidationError("experiment name must be non-empty and free of commas, quotes and newlines");
  }
  if (!(true_skull_conductivity > 0.0) || !std::isfinite(true_skull_conductivity)) {
    throw ValidationError("true_skull_conductivity must be positive and finite");
  }
  if (!(source.radius > 0.0) || !std::isfinite(source.angle) || !std::isfinite(source.amplitude)) {
    throw ValidationError("source needs a positive radius and finite angle/amplitude");
  }
  if (std::isnan(snr_db) || snr_db == -kInfiniteSnr) throw ValidationError("snr_db must be a number or +inf");
  if (!std::isfinite(noise_floor_db)) throw ValidationError("noise_floor_db must be finite");
  if (trials < 1) throw ValidationError("trials must be >= 1");
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double rate(std::size_t hits, std::size_t total) {
  return total ? static_cast<double>(hits) / static_cast<double>(total) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

EnsembleSummary summarize(const std::vector<TrialRecord>& records, double prior_mean, const std::string& label) {
  EnsembleSummary s;
  s.label = label;
  s.trials = records.size();
  if (!records.empty()) s.sigma_true = records.front().sigma_true;
  std::vector<double> eds, edb, sig;
  std::size_t wins = 0, not_worse = 0, closer = 0;
  for (const TrialRecord& r : records) {
    if (!r.ok()) {
      ++s.failed;
      continue;
    }
    eds.push_back(r.ed_standard_mm);
    edb.push_back(r.ed_bae_mm);
    wins += r.ed_bae_mm < r.ed_standard_mm;
    not_worse += r.ed_bae_mm <= r.ed_standard_mm;
    if (r.sigma_hat) {
      sig.push_back(*r.sigma_hat);
      closer += std::abs(*r.sigma_hat - r.sigma_true) < std::abs(prior_mean - r.sigma_true);
    }
  }
  s.mean_ed_standard = mean(eds);
  s.mean_ed_bae = mean(edb);
  s.median_ed_standard = median(eds);
  s.median_ed_bae = median(edb);
  s.bae_win_rate = rate(wins, eds.size());
  s.bae_not_worse_rate = rate(not_worse, eds.size());
  s.sigma_estimates = sig.size();
  s.sigma_closer_rate = rate(closer, sig.size());
  s.median_sigma_hat = median(sig);
  if (!sig.empty()) {
    const double want = s.sigma_true - prior_mean;
    const double got = s.median_sigma_hat - prior_mean;
    s.sigma_correct_side = (want > 0 && got > 0) || (want < 0 && got < 0);
  }
  return s;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentModels& models,
                                const StatsLibrary& stats, int threads) {
  config.validate();
  if (!models.forward_mesh || !models.sources || !models.standard) {
    throw ConfigurationError("experiment models are incomplete");
  }
  const SourceSpace& sources = *models.sources;

  ExperimentReport report;
  report.config = config;

  Eigen::Vector2d true_position = config.source.position();
  std::optional<std::size_t> true_index;
  Eigen::Vector2d direction = true_position.normalized();
  if (config.on_grid) {
    true_index = sources.nearest(true_position);
    true_position = sources.positions[*true_index];
    direction = sources.radial_dirs[*true_index];
  }

  ConductivityAssignment truth = models.base;
  truth.skull = config.true_skull_conductivity;
  const std::vector<Eigen::Vector2d> position{true_position};
  const LeadField accurate =
      build_lead_field(*models.forward_mesh, truth, position, models.forward_electrodes, models.spread);
  const Dipole dipole{0, config.source.amplitude * direction};
  const double inverse_snr = std::isinf(config.snr_db) ? config.noise_floor_db : config.snr_db;

  report.records.resize(config.trials);
  parallel_for(config.trials, threads, [&](std::size_t t) {
    TrialRecord& r = report.records[t];
    r.case_name = config.name;
    r.trial = t;
    r.sigma_true = config.true_skull_conductivity;
    r.true_position = true_position;
    r.true_index = true_index;
    try {
      const std::uint64_t seed = substream_seed(config.master_seed, {kTrialStream, config.case_index, t});
      const Measurement meas = simulate_measurements(accurate, dipole, config.snr_db, seed);
      r.noise_std = meas.noise_std;
      const NoiseModel noise =
          NoiseModel::average_referenced(meas.data.size(), noise_std_for_snr(meas.clean, inverse_snr));

      const ScanResult standard = standard_scan(meas.data, *models.standard, noise);
      const ScanResult bae = bae_scan(meas.data, *models.standard, stats, noise);
      r.standard_index = standard.winner;
      r.bae_index = bae.winner;
      r.standard_position = sources.positions[standard.winner];
      r.bae_position = sources.positions[bae.winner];
      r.ed_standard_mm = euclidean_distance_mm(true_position, r.standard_position);
      r.ed_bae_mm = euclidean_distance_mm(true_position, r.bae_position);
      r.sigma_hat = bae.sigma_estimate;
      r.p = static_cast<std::size_t>(bae.alpha.size());
    } catch (const std::exception& e) {
      r.error = e.what();
      if (r.error.empty()) r.error = "unknown error";
    }
  });
  report.summary = summarize(report.records, stats.config.prior.mean, config.name);
  return report;
}

namespace {

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  }
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double to_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(std::string("trials csv: bad number in column ") + what + ": '" + s + "'");
  }
}

std::size_t to_index(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw IoError(std::string("trials csv: bad integer in column ") + what + ": '" + s + "'");
  }
}

constexpr const char* kTrialsHeader =
    "case,trial,sigma_true,true_index,true_x,true_y,standard_index,standard_x,standard_y,bae_index,bae_x,bae_y,"
    "ed_standard_mm,ed_bae_mm,sigma_hat,p,noise_std,status";

}  // namespace

void write_trials_csv(std::ostream& os, const std::vector<TrialRecord>& records,
                      const std::vector<std::string>& comments) {
  for (const std::string& c : comments) os << "# " << c << '\n';
  os << kTrialsHeader << '\n';
  os << std::setprecision(17);
  for (const TrialRecord& r : records) {
    os << r.case_name << ',' << r.trial << ',' << r.sigma_true << ',';
    if (r.true_index) os << *r.true_index;
    os << ',' << r.true_position.x() << ',' << r.true_position.y() << ',';
    if (r.ok()) {
      os << r.standard_index << ',' << r.standard_position.x() << ',' << r.standard_position.y() << ','
         << r.bae_index << ',' << r.bae_position.x() << ',' << r.bae_position.y() << ',' << r.ed_standard_mm << ','
         << r.ed_bae_mm << ',';
      if (r.sigma_hat) os << *r.sigma_hat;
      os << ',' << r.p << ',' << r.noise_std << ",ok\n";
    } else {
      os << ",,,,,,,,,,," << "error: " << csv_safe(r.error) << '\n';
    }
  }
}

std::vector<TrialRecord> read_trials_csv(std::istream& is) {
  std::vector<TrialRecord> records;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kTrialsHeader) throw IoError("trials csv: unexpected header");
      header = true;
      continue;
    }
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != 18) throw IoError("trials csv: expected 18 fields, got " + std::to_string(f.size()));
    TrialRecord r;
    r.case_name = f[0];
    r.trial = to_index(f[1], "trial");
    r.sigma_true = to_double(f[2], "sigma_true");
    if (!f[3].empty()) r.true_index = to_index(f[3], "true_index");
    r.true_position = {to_double(f[4], "true_x"), to_double(f[5], "true_y")};
    if (f[17] != "ok") {
      r.error = f[17].rfind("error: ", 0) == 0 ? f[17].substr(7) : f[17];
      if (r.error.empty()) r.error = "unknown error";
      records.push_back(std::move(r));
      continue;
    }
    r.standard_index = to_index(f[6], "standard_index");
    r.standard_position = {to_double(f[7], "standard_x"), to_double(f[8], "standard_y")};
    r.bae_index = to_index(f[9], "bae_index");
    r.bae_position = {to_double(f[10], "bae_x"), to_double(f[11], "bae_y")};
    r.ed_standard_mm = to_double(f[12], "ed_standard_mm");
    r.ed_bae_mm = to_double(f[13], "ed_bae_mm");
    if (!f[14].empty()) r.sigma_hat = to_double(f[14], "sigma_hat");
    r.p = to_index(f[15], "p");
    r.noise_std = to_double(f[16], "noise_std");
    records.push_back(std::move(r));
  }
  if (!header) throw IoError("trials csv: missing header");
  return records;
}

void write_summary_csv(std::ostream& os, const std::vector<EnsembleSummary>& rows,
                       const std::vector<std::string>& comments) {
  for (const std::string& c : comments) os << "# " << c << '\n';
  os << "label,sigma_true,trials,failed,mean_ed_standard_mm,mean_ed_bae_mm,median_ed_standard_mm,median_ed_bae_mm,"
        "bae_win_rate,bae_not_worse_rate,sigma_estimates,sigma_closer_rate,median_sigma_hat,sigma_correct_side\n";
  os << std::setprecision(17);
  for (const EnsembleSummary& s : rows) {
    os << s.label << ',' << s.sigma_true << ',' << s.trials << ',' << s.failed << ',' << s.mean_ed_standard << ','
       << s.mean_ed_bae << ',' << s.median_ed_standard << ',' << s.median_ed_bae << ',' << s.bae_win_rate << ','
       << s.bae_not_worse_rate << ',' << s.sigma_estimates << ',' << s.sigma_closer_rate << ','
       << s.median_sigma_hat << ',' << (s.sigma_correct_side ? "true" : "false") << '\n';
  }
}

void write_experiment_svg(std::ostream& os, const ExperimentReport& report, const HeadGeometry& geometry,
                          const SourceSpace& sources) {
  constexpr double size = 480.0;
  constexpr double margin = 20.0;
  const double scale = (size / 2.0 - margin) / geometry.r_scalp;
  const double c = size / 2.0;
  auto px = [&](const Eigen::Vector2d& p) { return Eigen::Vector2d(c + scale * p.x(), c - scale * p.y()); };
  auto circle = [&](double r, const char* style) {
    os << "<circle cx=\"" << c << "\" cy=\"" << c << "\" r=\"" << scale * r << "\" " << style << "/>\n";
  };

  const EnsembleSummary& s = report.summary;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 70
     << "\" viewBox=\"0 0 " << size << ' ' << size + 70 << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  circle(geometry.r_scalp, "fill=\"#f3e6d8\" stroke=\"black\"");
  circle(geometry.r_skull, "fill=\"#e8e8e8\" stroke=\"black\"");
  circle(geometry.r_brain, "fill=\"#fbf6f0\" stroke=\"black\"");
  circle(geometry.band_outer, "fill=\"none\" stroke=\"#999\" stroke-dasharray=\"3,3\"");
  circle(geometry.band_inner, "fill=\"none\" stroke=\"#999\" stroke-dasharray=\"3,3\"");
  for (const Eigen::Vector2d& p : sources.positions) {
    const Eigen::Vector2d q = px(p);
    os << "<circle cx=\"" << q.x() << "\" cy=\"" << q.y() << "\" r=\"0.8\" fill=\"#bbb\"/>\n";
  }
  for (const TrialRecord& r : report.records) {
    if (!r.ok()) continue;
    const Eigen::Vector2d a = px(r.standard_position);
    const Eigen::Vector2d b = px(r.bae_position);
    os << "<circle cx=\"" << a.x() << "\" cy=\"" << a.y() << "\" r=\"4\" fill=\"none\" stroke=\"#1f5fbf\"/>\n";
    os << "<rect x=\"" << b.x() - 3 << "\" y=\"" << b.y() - 3
       << "\" width=\"6\" height=\"6\" fill=\"none\" stroke=\"#c0392b\"/>\n";
  }
  if (!report.records.empty()) {
    const Eigen::Vector2d t = px(report.records.front().true_position);
    os << "<path d=\"M" << t.x() - 5 << ',' << t.y() - 5 << " L" << t.x() + 5 << ',' << t.y() + 5 << " M"
       << t.x() - 5 << ',' << t.y() + 5 << " L" << t.x() + 5 << ',' << t.y() - 5
       << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }

  auto text = [&](double y, const std::string& s) {
    os << "<text x=\"10\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\"13\">" << s << "</text>\n";
  };
  std::ostringstream l1, l2, l3;
  l1 << std::setprecision(4) << "case " << report.config.name << ": true skull conductivity "
     << report.config.true_skull_conductivity << " S/m, " << s.trials << " trials";
  l2 << std::fixed << std::setprecision(2) << "mean ED standard (blue circles) " << s.mean_ed_standard
     << " mm, BAE (red squares) " << s.mean_ed_bae << " mm";
  l3 << std::setprecision(4) << "median estimated skull conductivity " << s.median_sigma_hat << " S/m";
  text(size + 18, l1.str());
  text(size + 38, l2.str());
  text(size + 58, l3.str());
  os << "</svg>\n";
}

}  // namespace baeeeg
