#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optonoise/commands.hpp"

using namespace optonoise;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() /
             (std::string("optonoise_cli_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Result run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("optonoise_cli_run_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(dir);
  const auto out = dir / "stdout";
  const auto err = dir / "stderr";
  const std::string cmd = env + " " + OPTONOISE_CLI_PATH + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  fs::remove_all(dir);
  return r;
}

std::string config(const std::string& name) { return std::string(OPTONOISE_CONFIG_DIR) + "/" + name; }

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;

  std::size_t col(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    ADD_FAILURE() << "no column " << name;
    return 0;
  }
  double at(std::size_t row, const std::string& name) const {
    return std::stod(cells[row][col(name)]);
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Csv parse_csv(const std::string& text) {
  Csv csv;
  std::stringstream ss(text);
  std::string line;
  std::getline(ss, line);
  csv.header = split(line);
  while (std::getline(ss, line)) csv.cells.push_back(split(line));
  return csv;
}

}  // namespace

// --- config parsing ------------------------------------------------------------

TEST(RunConfigParse, NumbersAndMultiplesOfPi) {
  EXPECT_EQ(parse_number("1e-6", "k"), 1e-6);
  EXPECT_EQ(parse_number(" 300 ", "k"), 300.0);
  EXPECT_EQ(parse_number("pi", "k"), constants::pi);
  EXPECT_EQ(parse_number("pi/2", "k"), constants::pi / 2);
  EXPECT_EQ(parse_number("3*pi/4", "k"), 3.0 * constants::pi / 4);
  EXPECT_THROW(parse_number("", "k"), usage_error);
  EXPECT_THROW(parse_number("1e6x", "k"), usage_error);
  EXPECT_THROW(parse_number("2pi", "k"), usage_error);
  EXPECT_EQ(parse_list("300, 70,4", "k"), (std::vector<double>{300, 70, 4}));
  EXPECT_TRUE(parse_list("", "k").empty());
}

TEST(RunConfigParse, LambdaSpecifications) {
  EXPECT_EQ(parse_lambda("off").mode, FeedbackSetting::Mode::off);
  EXPECT_EQ(parse_lambda("opt").mode, FeedbackSetting::Mode::optimal_per_omega);
  const auto f = parse_lambda("fixed:-2.5e8");
  EXPECT_EQ(f.mode, FeedbackSetting::Mode::fixed);
  EXPECT_EQ(f.value, -2.5e8);
  const auto a = parse_lambda("opt-at:1e6");
  EXPECT_EQ(a.mode, FeedbackSetting::Mode::optimal_at);
  EXPECT_EQ(a.value, 1e6);
  EXPECT_THROW(parse_lambda("opt-at:0"), usage_error);
  EXPECT_THROW(parse_lambda("fixed:"), usage_error);
  EXPECT_THROW(parse_lambda("on"), usage_error);
}

TEST(RunConfigParse, FileWithCommentsAndOverrides) {
  std::istringstream in(
      "# header\n"
      "m = 2e-6   # kg\n"
      "\n"
      "temperatures = 4, 70\n"
      "thetas = 0, pi/2\n"
      "spacing = linear\n"
      "n_points = 11\n"
      "closure = self_consistent\n"
      "m = 3e-6\n");
  RunConfig rc;
  apply_config_text(rc, in, "inline");
  EXPECT_EQ(rc.physical.m, 3e-6);
  EXPECT_EQ(*rc.temperatures, (std::vector<double>{4, 70}));
  EXPECT_EQ(rc.thetas->size(), 2u);
  EXPECT_EQ(rc.grid.spacing, Spacing::linear);
  EXPECT_EQ(rc.grid.n_points, 11u);
  EXPECT_EQ(rc.closure, LoopClosure::self_consistent);
}

TEST(RunConfigParse, ErrorsNameTheLine) {
  RunConfig rc;
  std::istringstream unknown("m = 1e-6\nmass = 2\n");
  try {
    apply_config_text(rc, unknown, "cfg");
    FAIL() << "expected usage_error";
  } catch (const usage_error& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("mass"), std::string::npos);
  }
  std::istringstream no_eq("omega_m 1e6\n");
  EXPECT_THROW(apply_config_text(rc, no_eq, "cfg"), usage_error);
  std::istringstream bad_count("n_points = -3\n");
  EXPECT_THROW(apply_config_text(rc, bad_count, "cfg"), usage_error);
}

TEST(SqueezingBand, ContiguousAroundMinimum) {
  const std::vector<double> w{1, 2, 3, 4, 5, 6, 7};
  const std::vector<double> s{0.5, 1.0, 0.95, 0.9, 0.97, 1.0, 0.98};
  const auto b = squeezing_band(w, s, 0.01);
  EXPECT_EQ(b.omega_at_min, 1);
  EXPECT_EQ(b.lo, 1);
  EXPECT_EQ(b.hi, 1);
  const std::vector<double> s2{1.0, 0.995, 0.95, 0.9, 0.97, 1.0, 0.98};
  const auto b2 = squeezing_band(w, s2, 0.01);
  EXPECT_EQ(b2.lo, 3);
  EXPECT_EQ(b2.hi, 5);
  EXPECT_EQ(b2.width(), 2);
  const std::vector<double> flat(7, 0.999);
  EXPECT_EQ(squeezing_band(w, flat, 0.01).width(), 0);
}

// --- spectra -------------------------------------------------------------------

TEST(CliSpectra, AmplitudeQuadratureIsShotNoiseWithoutFeedback) {
  const auto r = run("--mode spectra --set thetas=0");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_EQ(csv.cells.size(), 2000u);
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    EXPECT_EQ(csv.cells[i][csv.col("S_X0_out[SNU]")], "1") << i;
    EXPECT_EQ(csv.cells[i][csv.col("lambda[A^-1 s^-1/2]")], "0");
  }
}

TEST(CliSpectra, RowCountAndOrdering) {
  const auto r = run("--config " + config("default.cfg") + " --set temperatures=4,300");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_EQ(csv.cells.size(), 2000u * 3u * 2u);
  const std::vector<double> thetas{0.0, constants::pi / 4, constants::pi / 2};
  const std::vector<double> temps{4.0, 300.0};
  double last_w = 0;
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    const double w = csv.at(i, "omega[rad/s]");
    if (i % 6 == 0) {
      EXPECT_GT(w, last_w);
      last_w = w;
    } else {
      EXPECT_EQ(w, last_w);
    }
    EXPECT_EQ(csv.at(i, "theta[rad]"), thetas[(i / 2) % 3]);
    EXPECT_EQ(csv.at(i, "T[K]"), temps[i % 2]);
  }
  EXPECT_EQ(csv.at(0, "omega[rad/s]"), 1e4);
  EXPECT_EQ(csv.at(csv.cells.size() - 1, "omega[rad/s]"), 1e8);
}

TEST(CliSpectra, ValuesMatchLibrary) {
  const auto r = run("--set n_points=7 --set thetas=pi/4 --set T=70 --lambda fixed:-3e9 "
                     "--set closure=self_consistent");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  PhysicalConfig c;
  c.T = 70;
  const auto dp = derive_params(c);
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    const double w = csv.at(i, "omega[rad/s]");
    const auto row = evaluate_row(w, constants::pi / 4, -3e9, dp, LoopClosure::self_consistent);
    EXPECT_EQ(csv.at(i, "S_X_out[SNU]"), row.S_X_out);
    EXPECT_EQ(csv.at(i, "S_cond[SNU]"), row.S_cond);
    EXPECT_EQ(csv.at(i, "Im_C_x0out_iout[A s^1/2]"), row.C_x0out_iout.imag());
  }
}

TEST(CliSpectra, CsvFormat) {
  const auto r = run("--set n_points=50 --set thetas=0,pi/2 --lambda opt");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find('\r'), std::string::npos);
  ASSERT_FALSE(r.out.empty());
  EXPECT_EQ(r.out.back(), '\n');
  const auto csv = parse_csv(r.out);
  for (const auto& h : csv.header) {
    EXPECT_NE(h.find('['), std::string::npos) << h;
    EXPECT_EQ(h.back(), ']') << h;
  }
  for (const auto& row : csv.cells) {
    ASSERT_EQ(row.size(), csv.header.size());
    for (const auto& cell : row) {
      EXPECT_EQ(format_double(std::strtod(cell.c_str(), nullptr)), cell);
    }
  }
}

TEST(CliSpectra, DeterministicOutputFile) {
  const auto dir = scratch();
  const std::string args = "--set n_points=300 --set temperatures=4,70,300 --lambda opt --out ";
  ASSERT_EQ(run(args + (dir / "a.csv").string()).code, 0);
  ASSERT_EQ(run(args + (dir / "b.csv").string()).code, 0);
  const auto a = slurp(dir / "a.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b.csv"));
}

TEST(CliSpectra, OutputDirectoryOverride) {
  const auto dir = scratch();
  const auto r = run("--set n_points=5 --out rel.csv", "OPTONOISE_OUTPUT_DIR=" + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(parse_csv(slurp(dir / "rel.csv")).cells.size(), 5u);
}

TEST(CliSpectra, JsonTable) {
  const auto r = run("--set n_points=4 --format json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["columns"].size(), spectra_columns().size());
  EXPECT_EQ(j["rows"].size(), 4u);
}

TEST(CliSpectra, FlagsOverrideFileAndSet) {
  const auto dir = scratch();
  std::ofstream(dir / "c.cfg") << "n_points = 3\nlambda = fixed:1e8\nformat = json\n";
  const auto r = run("--config " + (dir / "c.cfg").string() +
                     " --set n_points=4 --lambda off --format csv --set thetas=0");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_EQ(csv.cells.size(), 4u);
  EXPECT_EQ(csv.at(0, "lambda[A^-1 s^-1/2]"), 0.0);
}

TEST(CliSpectra, OptimalAtReferenceFrequency) {
  const auto r = run("--set n_points=9 --set thetas=0 --set T=4 --lambda opt-at:1e6");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  PhysicalConfig c;
  c.T = 4;
  const double expected = lambda_opt(1e6, derive_params(c));
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    EXPECT_EQ(csv.at(i, "lambda[A^-1 s^-1/2]"), expected);
  }
}

// --- exit codes ----------------------------------------------------------------

TEST(CliExit, UsageErrors) {
  EXPECT_EQ(run("--set temperatures=").code, 2);
  EXPECT_EQ(run("--set thetas=").code, 2);
  EXPECT_EQ(run("--set n_points=1").code, 2);
  EXPECT_EQ(run("--set omega_min=0").code, 2);
  EXPECT_EQ(run("--set omega_max=1e3").code, 2);
  EXPECT_EQ(run("--mode plot").code, 2);
  EXPECT_EQ(run("--format xml").code, 2);
  EXPECT_EQ(run("--lambda maybe").code, 2);
  EXPECT_EQ(run("--set nonsense=1").code, 2);
  EXPECT_EQ(run("--config /nonexistent/file.cfg").code, 2);
  EXPECT_EQ(run("--set m=0").code, 2);
  EXPECT_EQ(run("--mode optimize --set epsilon=0").code, 2);
  EXPECT_EQ(run("--mode verify --format csv").code, 2);
  const auto r = run("--unknown-flag");
  EXPECT_EQ(r.code, 2);
}

TEST(CliExit, DetunedCavityRefused) {
  const auto r = run("--set Delta=1e3");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("QND"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST(CliExit, HelpSucceeds) { EXPECT_EQ(run("--help").code, 0); }

// --- fig1 ----------------------------------------------------------------------

TEST(CliFig1, HotToColdColumnsAndOrdering) {
  const auto r = run("--mode fig1 --config " + config("fig1.cfg") + " --set temperatures=4,300,70");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_GE(csv.header.size(), 4u);
  EXPECT_EQ(csv.header[1], "S_X0_out@300K[SNU]");
  EXPECT_EQ(csv.header[2], "S_X0_out@70K[SNU]");
  EXPECT_EQ(csv.header[3], "S_X0_out@4K[SNU]");
  std::map<std::string, std::pair<double, double>> minima;
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    const double w = csv.at(i, "omega[rad/s]");
    const double s300 = csv.at(i, csv.header[1]);
    const double s70 = csv.at(i, csv.header[2]);
    const double s4 = csv.at(i, csv.header[3]);
    EXPECT_GE(s300, s70 - 1e-10) << w;
    EXPECT_GE(s70, s4 - 1e-10) << w;
    for (std::size_t k = 1; k <= 3; ++k) {
      const double s = csv.at(i, csv.header[k]);
      EXPECT_LE(s, 1.0 + 1e-12);
      auto& m = minima.try_emplace(csv.header[k], 2.0, 0.0).first->second;
      if (s < m.first) m = {s, w};
    }
  }
  for (const auto& [name, m] : minima) {
    EXPECT_LT(m.first, 1.0) << name;
    EXPECT_GE(m.second, 5e5) << name;
    EXPECT_LE(m.second, 1.5e6) << name;
  }
}

TEST(CliFig1, DefaultsToThreeTemperaturesAndOptimalGain) {
  const auto r = run("--mode fig1 --set n_points=11");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_EQ(csv.header.size(), 7u);
  EXPECT_EQ(csv.header[4], "lambda@300K[A^-1 s^-1/2]");
  PhysicalConfig c;
  c.T = 300;
  const auto dp = derive_params(c);
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    const double w = csv.at(i, "omega[rad/s]");
    EXPECT_EQ(csv.at(i, csv.header[4]), lambda_opt(w, dp));
  }
}

// --- optimize ------------------------------------------------------------------

TEST(CliOptimize, ZeroTemperatureRejected) {
  const auto r = run("--mode optimize --set T=0");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("T = 0"), std::string::npos) << r.err;
}

TEST(CliOptimize, LowTemperatureAcceptedWithWarning) {
  const auto ok = run("--mode optimize --set T=0.001 --set n_points=5");
  EXPECT_EQ(ok.code, 0) << ok.err;
  const auto cold = run("--mode optimize --set T=5e-5 --set n_points=5");
  EXPECT_EQ(cold.code, 0) << cold.err;
  EXPECT_NE(cold.err.find("warning"), std::string::npos);
  EXPECT_EQ(parse_csv(cold.out).cells.size(), 5u);
}

TEST(CliOptimize, GainColumnMatchesFormula) {
  const auto r = run("--mode optimize --set temperatures=4,70 --set n_points=200");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  ASSERT_EQ(csv.cells.size(), 400u);
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    PhysicalConfig c;
    c.T = csv.at(i, "T[K]");
    const auto dp = derive_params(c);
    const double w = csv.at(i, "omega[rad/s]");
    const double lam = lambda_opt(w, dp);
    EXPECT_LE(std::abs(csv.at(i, "lambda_opt[A^-1 s^-1/2]") - lam), 1e-12 * std::abs(lam));
    EXPECT_EQ(csv.at(i, "S_X0_out_min[SNU]"), s_x0_out_fb(w, lam, dp));
    EXPECT_EQ(csv.at(i, "significance[1]"), squeezing_significance(w, dp));
  }
}

TEST(CliOptimize, ColderBandIsWider) {
  const auto r = run("--mode optimize --config " + config("optimize_band.cfg"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = parse_csv(r.out);
  std::map<double, double> width;
  for (std::size_t i = 0; i < csv.cells.size(); ++i) {
    width[csv.at(i, "T[K]")] = csv.at(i, "bandwidth[rad/s]");
  }
  ASSERT_EQ(width.size(), 3u);
  EXPECT_GT(width[4], 0.0);
  EXPECT_GE(width[4], width[70]);
  EXPECT_GE(width[70], width[300]);
}

// --- verify --------------------------------------------------------------------

TEST(CliVerify, DemonstrationPointPasses) {
  const auto dir = scratch();
  const auto r = run("--mode verify --set n_points=400 --out " + (dir / "r.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  EXPECT_TRUE(j["overall"].get<bool>());
  ASSERT_EQ(j["oracle_comparison"]["runs"].size(), 4u);
  for (const auto& run : j["oracle_comparison"]["runs"]) {
    EXPECT_TRUE(run["pass"].get<bool>());
    for (const auto& [name, f] : run["fields"].items()) {
      EXPECT_LE(f["max_rel_dev"].get<double>(), 1e-9) << name;
    }
  }
  EXPECT_GE(j["uncertainty_scan"]["min_p47"].get<double>(), 1.0 - 1e-9);
  EXPECT_LE(j["equilibrium_residual"]["max_residual"].get<double>(), 1e-9);
  EXPECT_TRUE(j["optimality_scan"]["pass"].get<bool>());
  EXPECT_TRUE(j["monte_carlo"].is_null());
  EXPECT_FALSE(j["loop_diagnostic"]["warn"].get<bool>());
}

TEST(CliVerify, FailureStillWritesReport) {
  const auto dir = scratch();
  const auto r =
      run("--mode verify --set n_points=50 --set rel_tol=1e-20 --out " + (dir / "r.json").string());
  EXPECT_EQ(r.code, 4);
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  EXPECT_FALSE(j["overall"].get<bool>());
  bool named = false;
  for (const auto& run : j["oracle_comparison"]["runs"]) named = named || run.contains("first_failure");
  EXPECT_TRUE(named);
}

TEST(CliVerify, MonteCarloDeterministicUnderSeed) {
  const std::string args =
      "--mode verify --set n_points=20 --set temperatures=4 --set thetas=0 "
      "--set mc_realizations=4000 --set mc_bins=101";
  const auto a = run(args + " --seed 5");
  const auto b = run(args + " --seed 5");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_GE(j["monte_carlo"]["min_coverage"].get<double>(), 0.99);
  EXPECT_EQ(j["monte_carlo"]["seed"].get<std::uint64_t>(), 5u);
}
