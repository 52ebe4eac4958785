#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "twinphoton/io.hpp"

namespace fs = std::filesystem;
namespace io = twinphoton::io;

namespace {

struct Result {
  int status = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(TWINPHOTON_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          (std::string("twinphoton_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const char* name) const { return (dir / name).string(); }

  fs::path dir;
};

double number_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  if (pos == std::string::npos) return -1.0;
  return std::stod(text.substr(pos + key.size()));
}

}  // namespace

TEST_F(Cli, CwTwinRateExample) {
  const auto r = run("tpr-cw --n-spcm 103e3 --eps 0.0095 --eta 0.09 --alpha 0.39");
  EXPECT_EQ(r.status, 0);
  EXPECT_NEAR(number_after(r.out, "TPR = "), 234.0, 4.0) << r.out;
}

TEST_F(Cli, PnrReconstructExample) {
  const auto r = run("pnr-reconstruct --r21 1.81e-4 --r10 1.1e-4 --s 5.04e-4");
  EXPECT_EQ(r.status, 0);
  EXPECT_NEAR(number_after(r.out, "p2 = "), 0.080, 0.005) << r.out;
}

TEST_F(Cli, PrintOnlyCommandsLeaveNoFiles) {
  ASSERT_EQ(run("tpr-pulsed --p-twin 0.08 --eta 0.09").status, 0);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST_F(Cli, EmptyTagFileGivesZeroHistogram) {
  io::write_text(path("tags.csv"), "time_ps,detector\n");
  const auto r = run("correlate --in " + path("tags.csv") + " --bin-ps 100 --window-ps 1000 --out " + path("h.csv"));
  ASSERT_EQ(r.status, 0);
  const auto h = io::parse_histogram(io::read_text(path("h.csv")));
  EXPECT_EQ(h.histogram.counts.size(), 21u);
  EXPECT_EQ(h.histogram.total(), 0u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("no-such-command").status, 2);
  EXPECT_EQ(run("tpr-cw --eps 0.01").status, 2);
  EXPECT_EQ(run("tpr-cw --n-spcm 1e5 --eps 0 --eta 0.1 --alpha 0.3").status, 2);
  EXPECT_EQ(run("correlate --in " + path("missing.csv") + " --out " + path("h.csv")).status, 3);
  io::write_text(path("bad.csv"), "something,else\n1,2\n");
  EXPECT_EQ(run("correlate --in " + path("bad.csv") + " --out " + path("h.csv")).status, 3);
  EXPECT_EQ(run("--help").status, 0);
  EXPECT_EQ(run("--version").status, 0);
}

TEST_F(Cli, FitFailureExitCode) {
  std::string text = "tau_ps,g2\n";
  for (int t = -2000; t <= 2000; t += 16) text += std::to_string(t) + ",1\n";
  io::write_text(path("curve.csv"), text);
  const auto r = run("fit-g2 --in " + path("curve.csv") + " --kind cross --max-iterations 1 --out " + path("fit.json"));
  EXPECT_EQ(r.status, 4);
  EXPECT_FALSE(fs::exists(path("fit.json")));
}

TEST_F(Cli, ConfigFileValuesAndOverrides) {
  io::write_text(path("run.cfg"), "# pulsed run\nprob_b = 0.5\npulses = 1000\n");
  ASSERT_EQ(run("--config " + path("run.cfg") + " simulate-pulsed --out " + path("a.csv")).status, 0);
  ASSERT_EQ(run("--config " + path("run.cfg") + " simulate-pulsed --pulses 10 --out " + path("b.csv")).status, 0);
  const auto a = io::parse_events(io::read_text(path("a.csv")));
  const auto b = io::parse_events(io::read_text(path("b.csv")));
  EXPECT_GT(a.size(), 600u);
  EXPECT_LT(b.size(), 30u);
  const auto prov = io::parse_json(io::read_text(path("a.csv.provenance.json")));
  EXPECT_EQ(prov["options"]["prob-b"], "0.5");
  EXPECT_EQ(prov["command"], "simulate-pulsed");

  io::write_text(path("bad.cfg"), "no_such_key = 3\n");
  EXPECT_EQ(run("--config " + path("bad.cfg") + " simulate-pulsed --out " + path("c.csv")).status, 2);
  io::write_text(path("dup.cfg"), "pulses = 1\npulses = 2\n");
  EXPECT_EQ(run("--config " + path("dup.cfg") + " simulate-pulsed --out " + path("c.csv")).status, 2);
}

TEST_F(Cli, ProvenanceRecordsSeedAndHash) {
  ASSERT_EQ(run("--seed 42 simulate-cw --duration-ns 1000 --out " + path("a.csv")).status, 0);
  ASSERT_EQ(run("--seed 43 simulate-cw --duration-ns 1000 --out " + path("b.csv")).status, 0);
  ASSERT_EQ(run("--seed 42 simulate-cw --duration-ns 2000 --out " + path("c.csv")).status, 0);
  const auto a = io::parse_json(io::read_text(path("a.csv.provenance.json")));
  const auto b = io::parse_json(io::read_text(path("b.csv.provenance.json")));
  const auto c = io::parse_json(io::read_text(path("c.csv.provenance.json")));
  EXPECT_EQ(a["seed"], 42);
  EXPECT_EQ(b["seed"], 43);
  EXPECT_TRUE(a["versions"].contains("twinphoton"));
  EXPECT_NE(a["config_hash_fnv1a64"], c["config_hash_fnv1a64"]);
  EXPECT_NE(io::read_text(path("a.csv")), io::read_text(path("b.csv")));
}

TEST_F(Cli, RerunIsByteIdenticalAndThreadIndependent) {
  const std::string sim = "simulate-cw --seed 5 --pump 0.5 --duration-ns 50000 --shards 4 --out ";
  ASSERT_EQ(run(sim + path("a.csv")).status, 0);
  const auto first = io::read_text(path("a.csv"));
  const auto first_prov = io::read_text(path("a.csv.provenance.json"));
  ASSERT_EQ(run(sim + path("a.csv")).status, 0);
  EXPECT_EQ(io::read_text(path("a.csv")), first);
  EXPECT_EQ(io::read_text(path("a.csv.provenance.json")), first_prov);
  ASSERT_EQ(run("--threads 4 " + sim + path("b.csv")).status, 0);
  EXPECT_EQ(io::read_text(path("b.csv")), first);
}

TEST_F(Cli, PipelineThroughFiles) {
  ASSERT_EQ(run("simulate-cw --pump 1 --duration-ns 2000000 --out " + path("ev.csv")).status, 0);
  ASSERT_EQ(run("detect --in " + path("ev.csv") + " --filter V --splitter species --jitter-fwhm-ps 247.5 --out " +
                path("tags.csv"))
                .status,
            0);
  ASSERT_EQ(run("correlate --in " + path("tags.csv") + " --bin-ps 32 --window-ps 10000 --out " + path("h.csv")).status,
            0);
  const auto r = run("fit-g2 --in " + path("h.csv") + " --kind cross --out " + path("fit.json"));
  ASSERT_EQ(r.status, 0);
  const auto fit = io::parse_json(io::read_text(path("fit.json")));
  const double g0 = fit["g_fit_0"].get<double>();
  EXPECT_NEAR(g0, 4.0, 5.0 * fit["g_fit_0_sigma"].get<double>());
  ASSERT_EQ(run("report --in " + path("h.csv") + " --out " + path("h.svg")).status, 0);
  const auto svg = io::read_text(path("h.svg"));
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("<!-- generator: twinphoton"), std::string::npos);
  EXPECT_NE(svg.find("delay (ns)"), std::string::npos);
}

TEST_F(Cli, SpectraRoundTrip) {
  ASSERT_EQ(run("spectra-sim --out " + path("map.csv")).status, 0);
  const auto r = run("spectra-fit --in " + path("map.csv") + " --out " + path("fss.json"));
  ASSERT_EQ(r.status, 0);
  const auto j = io::parse_json(io::read_text(path("fss.json")));
  EXPECT_NEAR(j["delta_fss_mean_ueV"].get<double>(), 51.0, 1e-6);
  EXPECT_TRUE(j["h_degenerate"].get<bool>());
  ASSERT_EQ(run("report --in " + path("map.csv") + " --out " + path("map.svg")).status, 0);
}

TEST_F(Cli, PnrRecordsThroughFiles) {
  const std::string tes = "pnr-sim --p 0.858,0.062,0.080 --s 0.05 --triggers 200000 ";
  ASSERT_EQ(run("--seed 3 " + tes + "--mode photon-triggered --out " + path("twins.json")).status, 0);
  ASSERT_EQ(run("--seed 4 " + tes + "--out " + path("vac.json") + " --areas-out " + path("areas.csv")).status, 0);
  const auto r = run("pnr-reconstruct --record " + path("twins.json") + " --vacuum " + path("vac.json") +
                     " --s 0.05 --resamples 200 --out " + path("dist.json"));
  ASSERT_EQ(r.status, 0);
  const auto j = io::parse_json(io::read_text(path("dist.json")));
  EXPECT_NEAR(j["p"][2].get<double>(), 0.080, 0.02);
  ASSERT_EQ(run("report --in " + path("areas.csv") + " --out " + path("areas.svg")).status, 0);
}
