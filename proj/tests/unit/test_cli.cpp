#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "baeeeg/pipeline.hpp"

using namespace baeeeg;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CliRun cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli-output.txt";
  const std::string cmd = std::string("\"") + BAEEEG_CLI + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

// One work directory with a small model shared by all CLI tests.
struct Workspace {
  fs::path dir = fs::temp_directory_path() / "baeeeg-cli-test";
  fs::path config = dir / "small.json";
  std::string base;

  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(config) << R"({
      "mesh": {"forward_nodes": 700, "inverse_nodes": 450},
      "sampling": {"models": 20, "amplitudes": 20},
      "experiment": {"trials": 3}
    })";
    base = "--config \"" + config.string() + "\" --out \"" + (dir / "work").string() + "\" ";
  }
  ~Workspace() { fs::remove_all(dir); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  }
  return "";
}

}  // namespace

TEST_CASE("cli: build-model, then refuse to overwrite") {
  Workspace& w = workspace();
  const CliRun first = cli(w.base + "build-model", w.dir);
  REQUIRE_MESSAGE(first.code == 0, first.output);
  CHECK(fs::exists(w.dir / "work" / "model-config.json"));
  const CliRun again = cli(w.base + "build-model", w.dir);
  CHECK(again.code == 2);
  CHECK(again.output.find("--force") != std::string::npos);
}

TEST_CASE("cli: configuration errors name the field and exit 2") {
  Workspace& w = workspace();
  const fs::path bad = w.dir / "bad.json";
  std::ofstream(bad) << R"({"prior": {"skull_std": "wide"}})";
  const CliRun r = cli("--config \"" + bad.string() + "\" print-config", w.dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("prior.skull_std") != std::string::npos);
  CHECK(cli("--no-such-flag", w.dir).code == 2);
  const CliRun ok = cli(w.base + "print-config", w.dir);
  CHECK(ok.code == 0);
  CHECK(ok.output.find("\"forward_nodes\": 700") != std::string::npos);
}

TEST_CASE("cli: bae scan without statistics explains what to run") {
  Workspace& w = workspace();
  REQUIRE(cli(w.base + "simulate --sigma-true 0.0085 --source-index 7 --snr-db inf --data \"" +
                  (w.dir / "clean.txt").string() + "\"",
              w.dir)
              .code == 0);
  fs::remove(w.dir / "work" / "stats.bin");
  const CliRun r = cli(w.base + "scan --method bae --data \"" + (w.dir / "clean.txt").string() + "\"", w.dir);
  CHECK(r.code == 4);
  CHECK(r.output.find("precompute-stats") != std::string::npos);
}

TEST_CASE("cli: standard scan of noiseless matched data finds the source") {
  Workspace& w = workspace();
  const fs::path data = w.dir / "clean.txt";
  REQUIRE(cli(w.base + "simulate --sigma-true 0.0085 --source-index 7 --snr-db inf --data \"" + data.string() + "\"",
              w.dir)
              .code == 0);
  CHECK(slurp(data).find("# source_index 7") != std::string::npos);
  const fs::path result = w.dir / "standard.txt";
  const CliRun r = cli(w.base + "scan --method standard --data \"" + data.string() + "\" --result \"" +
                           result.string() + "\"",
                       w.dir);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(value_of(slurp(result), "winner") == "7");
  CHECK(value_of(slurp(result), "method") == "standard");
}

TEST_CASE("cli: precompute-stats is reproducible and honours the threshold") {
  Workspace& w = workspace();
  const fs::path stats = w.dir / "work" / "stats.bin";
  REQUIRE(cli(w.base + "precompute-stats --force", w.dir).code == 0);
  const std::string first = slurp(stats);
  CHECK(cli(w.base + "precompute-stats", w.dir).code == 2);
  REQUIRE(cli(w.base + "--threads 2 precompute-stats --force", w.dir).code == 0);
  CHECK(slurp(stats) == first);

  const CliRun full = cli(w.base + "precompute-stats --force --threshold 1.0", w.dir);
  REQUIRE(full.code == 0);
  CHECK(full.output.find("p=32:") != std::string::npos);
  REQUIRE(cli(w.base + "precompute-stats --force", w.dir).code == 0);
  CHECK(slurp(stats) == first);
}

TEST_CASE("cli: bae scan reports a conductivity estimate") {
  Workspace& w = workspace();
  if (!fs::exists(w.dir / "work" / "stats.bin")) REQUIRE(cli(w.base + "precompute-stats", w.dir).code == 0);
  const fs::path data = w.dir / "thin.txt";
  REQUIRE(cli(w.base + "simulate --sigma-true 0.0055 --source A --data \"" + data.string() + "\"", w.dir).code == 0);
  const fs::path result = w.dir / "bae.txt";
  REQUIRE(cli(w.base + "scan --method bae --data \"" + data.string() + "\" --result \"" + result.string() + "\"",
              w.dir)
              .code == 0);
  const std::string text = slurp(result);
  CHECK(value_of(text, "method") == "bae");
  const std::string sigma = value_of(text, "sigma_estimate");
  REQUIRE(!sigma.empty());
  CHECK(sigma != "none");
  CHECK(std::stod(sigma) > 0.0);
}

TEST_CASE("cli: reproduce-fig2 covers both conductivities and its summary is recomputable") {
  Workspace& w = workspace();
  const CliRun r = cli(w.base + "reproduce-fig2", w.dir);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const fs::path out = w.dir / "work" / "fig2";
  std::ifstream in(out / "trials.csv");
  const auto records = read_trials_csv(in);
  CHECK(records.size() == 2 * 3 * 3);
  const std::string summary = slurp(out / "summary.csv");
  CHECK(summary.find("pooled-s0.0055") != std::string::npos);
  CHECK(summary.find("pooled-s0.011") != std::string::npos);

  std::vector<TrialRecord> low;
  for (const TrialRecord& t : records) {
    if (t.sigma_true == 0.0055) low.push_back(t);
  }
  const EnsembleSummary s = summarize(low, 0.0073, "pooled-s0.0055");
  std::ostringstream line;
  line.precision(17);
  line << "pooled-s0.0055,";
  const std::size_t at = summary.find(line.str());
  REQUIRE(at != std::string::npos);
  const std::string row = summary.substr(at, summary.find('\n', at) - at);
  std::ostringstream rate;
  rate.precision(17);
  rate << s.bae_win_rate;
  CHECK(row.find("," + rate.str() + ",") != std::string::npos);
}
