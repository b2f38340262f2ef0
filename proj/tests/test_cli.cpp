// Runs the agrocausal binary as a subprocess and checks exit codes and the
// files it writes.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "agrocausal/agrocausal.hpp"
#include "support/oracles.hpp"

using namespace agrocausal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli_output.txt";
  const std::string cmd = std::string("\"") + AGROCAUSAL_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }
std::string src(const std::string& rel) { return q(oracle::source_dir() / rel); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const Date kIssue = Date::parse("2021-04-10");

// Every variable of every cell takes value(variable, day, cell).
ForecastGrid make_grid(GridGeometry geo, std::size_t horizon, Date issue,
                       const std::function<double(Variable, std::size_t, std::size_t)>& value) {
  std::map<Variable, std::vector<double>> vals;
  for (Variable v : kAllVariables) {
    for (std::size_t d = 1; d <= horizon; ++d) {
      for (std::size_t c = 0; c < geo.cells(); ++c) vals[v].push_back(value(v, d, c));
    }
  }
  return ForecastGrid(geo, issue, horizon, vals);
}

fs::path save_grid(const fs::path& dir, const std::string& stem, const ForecastGrid& g) {
  const auto csv = dir / (stem + ".csv");
  write_grid(csv.string(), (dir / (stem + ".json")).string(), g);
  return csv;
}

double warm(Variable v) {
  switch (v) {
    case Variable::soil_t_mean: return 21.0;
    case Variable::air_t_max: return 29.0;
    default: return 13.0;
  }
}

// ---------------------------------------------------------------------------
// identify

TEST(CliIdentify, FarmGraphListsSetsAndAcceptsReportedSet) {
  const auto dir = oracle::scratch_dir("cli_identify");
  auto r = cli("identify --graph " + src("data/farm_graph.json") + " --out " + q(dir), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("(minimal)"), std::string::npos);
  EXPECT_NE(r.output.find("Chosen: {"), std::string::npos);
  const auto j = json::parse(slurp(dir / "identification.json"));
  EXPECT_EQ(j["treatment"], "T");
  EXPECT_FALSE(j["candidate_sets"].empty());
  r = cli("identify --graph " + src("data/farm_graph.json") +
              " --adjustment WS_min,WS_max,SoC,SM,G_geom,SP_silt,SP_clay,SP_sand,AbS,AdS,SV",
          dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("Chosen: {AbS, AdS, G_geom, SM, SP_clay, SP_sand, SP_silt, SV, SoC, WS_max, WS_min}"),
            std::string::npos)
      << r.output;
}

TEST(CliIdentify, DirectEffectOnlyGivesEmptySet) {
  const auto dir = oracle::scratch_dir("cli_identify_empty");
  write_file(dir / "g.json", R"({"nodes":[{"name":"T","role":"treatment"},{"name":"Y","role":"outcome"}],"edges":[["T","Y"]]})");
  const auto r = cli("identify --graph " + q(dir / "g.json"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("Chosen: {}"), std::string::npos) << r.output;
}

TEST(CliIdentify, UnobservedConfounderExitsThree) {
  const auto dir = oracle::scratch_dir("cli_identify_none");
  write_file(dir / "g.json",
             R"({"nodes":[{"name":"U","role":"unobserved"},{"name":"W","role":"observed"},
                 {"name":"T","role":"treatment"},{"name":"Y","role":"outcome"}],
                 "edges":[["U","T"],["U","Y"],["W","T"],["T","Y"]]})");
  EXPECT_EQ(cli("identify --graph " + q(dir / "g.json"), dir).code, 3);
  EXPECT_EQ(cli("identify --graph " + src("data/farm_graph.json") + " --adjustment SM", dir).code, 3);
}

TEST(CliIdentify, BadInputsExitTwo) {
  const auto dir = oracle::scratch_dir("cli_identify_bad");
  EXPECT_EQ(cli("identify --graph " + q(dir / "missing.json"), dir).code, 2);
  write_file(dir / "cyclic.json", R"({"nodes":[{"name":"T","role":"treatment"},{"name":"Y","role":"outcome"}],
                                       "edges":[["T","Y"],["Y","T"]]})");
  EXPECT_EQ(cli("identify --graph " + q(dir / "cyclic.json"), dir).code, 2);
  EXPECT_EQ(cli("identify", dir).code, 2);
  EXPECT_EQ(cli("identify --bogus-flag", dir).code, 2);
  EXPECT_EQ(cli("", dir).code, 2);
}

// ---------------------------------------------------------------------------
// run

const std::string kSmallRun = " --n 300 --bootstrap 20 --replicates 3 --trees 10";

TEST(CliRun, WritesReportTableAndHeatmaps) {
  const auto dir = oracle::scratch_dir("cli_run");
  const auto r = cli("run --simulate " + src("scm/farm_default.json") + " --seed 5 --estimators linear,ips" +
                         " --refuters placebo,ucc" + kSmallRun + " --out " + q(dir / "out"),
                     dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = json::parse(slurp(dir / "out/report.json"));
  ASSERT_EQ(j["estimates"].size(), 2u);
  EXPECT_EQ(j["estimates"][0]["method"], "linear");
  EXPECT_EQ(j["estimates"][1]["method"], "ips");
  for (const auto& row : j["estimates"]) {
    ASSERT_EQ(row["refutations"].size(), 2u);
    EXPECT_EQ(row["refutations"][0]["test"], "placebo");
    EXPECT_EQ(row["refutations"][1]["test"], "ucc");
  }
  EXPECT_EQ(j["provenance"]["seed"], 5);
  EXPECT_EQ(j["data"]["rows"], 300);
  EXPECT_TRUE(fs::exists(dir / "out/ucc_linear.csv"));
  EXPECT_TRUE(fs::exists(dir / "out/ucc_ips.csv"));
  EXPECT_EQ(slurp(dir / "out/report.txt"), r.output);
  EXPECT_NE(r.output.find("PLACEBO Effect*"), std::string::npos);
}

TEST(CliRun, RepeatedRunsAreByteIdentical) {
  const auto dir = oracle::scratch_dir("cli_run_repeat");
  const std::string args = "run --simulate " + src("scm/farm_default.json") + " --seed 9" + kSmallRun;
  ASSERT_EQ(cli(args + " --out " + q(dir / "a"), dir).code, 0);
  ASSERT_EQ(cli(args + " --out " + q(dir / "b"), dir).code, 0);
  EXPECT_EQ(slurp(dir / "a/report.json"), slurp(dir / "b/report.json"));
  ASSERT_EQ(cli("run --simulate " + src("scm/farm_default.json") + " --seed 10" + kSmallRun + " --out " + q(dir / "c"), dir).code, 0);
  EXPECT_NE(slurp(dir / "a/report.json"), slurp(dir / "c/report.json"));
}

TEST(CliRun, ConfigFileWithRelativePaths) {
  const auto dir = oracle::scratch_dir("cli_run_config");
  fs::create_directories(dir / "cfg");
  fs::copy_file(oracle::source_dir() / "scm/farm_default.json", dir / "cfg/scm.json");
  write_file(dir / "cfg/run.json", R"({"simulate": "scm.json", "sample_size": 250, "estimators": ["linear"],
      "refuters": "none", "bootstrap_replicates": 10, "seed": 3, "out": "results", "oracle_draws": 500})");
  const auto r = cli("run --config " + q(dir / "cfg/run.json") + " --refuters none", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = json::parse(slurp(dir / "cfg/results/report.json"));
  EXPECT_EQ(j["data"]["rows"], 250);
  EXPECT_EQ(j["estimates"].size(), 1u);
  EXPECT_TRUE(j["estimates"][0]["refutations"].empty());
}

TEST(CliRun, ConfigurationErrorsExitTwo) {
  const auto dir = oracle::scratch_dir("cli_run_errors");
  const auto scm = src("scm/farm_default.json");
  EXPECT_EQ(cli("run --simulate " + scm + kSmallRun, dir).code, 2);  // no seed
  EXPECT_EQ(cli("run --simulate " + scm + " --seed 1 --estimators linear,forest" + kSmallRun, dir).code, 2);
  EXPECT_EQ(cli("run --simulate " + scm + " --seed 1 --refuters placebo,nope" + kSmallRun, dir).code, 2);
  EXPECT_EQ(cli("run --simulate " + q(dir / "missing.json") + " --seed 1", dir).code, 2);
  EXPECT_EQ(cli("run --simulate " + scm + " --seed notanumber", dir).code, 2);
  write_file(dir / "broken.json", "{ not json");
  EXPECT_EQ(cli("run --config " + q(dir / "broken.json"), dir).code, 2);
}

TEST(CliRun, InvalidAdjustmentExitsThree) {
  const auto dir = oracle::scratch_dir("cli_run_adjust");
  EXPECT_EQ(cli("run --simulate " + src("scm/farm_default.json") + " --seed 1 --adjustment SM" + kSmallRun, dir).code, 3);
}

// ---------------------------------------------------------------------------
// simulate

TEST(CliSimulate, WritesFieldsAndOracle) {
  const auto dir = oracle::scratch_dir("cli_simulate");
  const auto r = cli("simulate --scm " + src("scm/farm_default.json") + " --seed 4 --n 120 --out " + q(dir / "sim"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto ds = load_fields_csv((dir / "sim/fields.csv").string(), infer_schema((dir / "sim/fields.csv").string()));
  EXPECT_EQ(ds.rows(), 120u);
  const auto meta = json::parse(slurp(dir / "sim/oracle.json"));
  EXPECT_EQ(meta["rows"], 120);
  EXPECT_EQ(meta["treated"].get<std::size_t>(), ds.count_treated());
  EXPECT_NEAR(meta["oracle"]["ate"].get<double>(), 500.0, 1e-6);
  // the sample matches the in-process generator for the same derived seed
  const auto direct = sample(load_scm((oracle::source_dir() / "scm/farm_default.json").string()), 120, derive_seed(4, 1));
  EXPECT_EQ(direct.count_treated(), ds.count_treated());
  EXPECT_EQ(cli("simulate --scm " + src("scm/farm_default.json") + " --out " + q(dir / "x"), dir).code, 2);
}

TEST(CliSimulate, OutputFeedsRunAsDataset) {
  const auto dir = oracle::scratch_dir("cli_simulate_run");
  ASSERT_EQ(cli("simulate --scm " + src("scm/farm_default.json") + " --seed 5 --n 300 --out " + q(dir / "sim"), dir).code, 0);
  const auto r = cli("run --dataset " + q(dir / "sim/fields.csv") + " --graph " + src("data/farm_graph.json") +
                         " --seed 5 --estimators linear --refuters none --bootstrap 20 --out " + q(dir / "run"),
                     dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rep = json::parse(slurp(dir / "run/report.json"));
  EXPECT_EQ(rep["data"]["rows"], 300);
  EXPECT_NEAR(rep["estimates"][0]["estimate"]["ate"].get<double>(), 500.0, 150.0);
}

// ---------------------------------------------------------------------------
// recommend

TEST(CliRecommend, AllFavorableFixture) {
  const auto dir = oracle::scratch_dir("cli_recommend");
  const auto csv = save_grid(dir, "fc", make_grid({37.0, 22.0, 0.02, 4, 3}, 11, kIssue,
                                                  [](Variable v, std::size_t, std::size_t) { return warm(v); }));
  const auto r = cli("recommend --forecast " + q(csv) + " --out " + q(dir / "maps"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("2021-04-11: 12/12 cells favorable (100% favorable)"), std::string::npos) << r.output;
  EXPECT_TRUE(fs::exists(dir / "maps/map_2021-04-11.geojson"));
  EXPECT_TRUE(fs::exists(dir / "maps/map_2021-04-11.csv"));
}

TEST(CliRecommend, GeoJsonRoundTripsAgainstLibraryMap) {
  const auto dir = oracle::scratch_dir("cli_recommend_roundtrip");
  std::mt19937_64 rng(12);
  std::normal_distribution<> nd(0.0, 2.0);
  const auto grid = make_grid({37.0, 22.0, 0.02, 5, 4}, 12, kIssue,
                              [&](Variable v, std::size_t, std::size_t) { return warm(v) - 1.5 + nd(rng); });
  const auto csv = save_grid(dir, "fc", grid);
  ASSERT_EQ(cli("recommend --forecast " + q(csv) + " --rules " + src("rules/cotton_default.json") +
                    " --date 2021-04-12 --out " + q(dir / "maps"),
                dir)
                .code,
            0);
  const auto written = json::parse(slurp(dir / "maps/map_2021-04-12.geojson"));
  const auto reloaded = load_grid(csv.string(), (dir / "fc.json").string());
  const auto expected = map_to_geojson(recommendation_map(reloaded, cotton_default_rules(), Date::parse("2021-04-12")));
  EXPECT_EQ(written, expected);
  ASSERT_EQ(written["features"].size(), 20u);
  const auto table = csv::read((dir / "maps/map_2021-04-12.csv").string());
  ASSERT_EQ(table.rows.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(table.rows[i][2] == "1", written["features"][i]["properties"]["favorable"].get<bool>()) << i;
  }
}

TEST(CliRecommend, ShortHorizonExitsFour) {
  const auto dir = oracle::scratch_dir("cli_recommend_short");
  const auto csv = save_grid(dir, "fc", make_grid({37.0, 22.0, 0.02, 2, 2}, 9, kIssue,
                                                  [](Variable v, std::size_t, std::size_t) { return warm(v); }));
  const auto r = cli("recommend --forecast " + q(csv), dir);
  EXPECT_EQ(r.code, 4) << r.output;
}

// ---------------------------------------------------------------------------
// blend

TEST(CliBlend, ConstantCoarseRepeatsFineDayOne) {
  const auto dir = oracle::scratch_dir("cli_blend_constant");
  const auto coarse = save_grid(dir, "coarse", make_grid({36.75, 21.75, 0.25, 3, 3}, 10, kIssue,
                                                         [](Variable, std::size_t, std::size_t c) { return 15.0 + c; }));
  const auto fine = save_grid(dir, "fine", make_grid({37.0, 22.0, 0.05, 6, 6}, 2, kIssue,
                                                     [](Variable v, std::size_t d, std::size_t c) {
                                                       return warm(v) + 0.25 * static_cast<double>(c) + 0.5 * static_cast<double>(d);
                                                     }));
  const auto r = cli("blend --fine " + q(fine) + " --coarse " + q(coarse) + " --out " + q(dir / "art"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto art = load_grid((dir / "art/art.csv").string(), (dir / "art/art.json").string());
  const auto f = load_grid(fine.string(), (dir / "fine.json").string());
  ASSERT_EQ(art.horizon(), 10u);
  for (Variable v : kAllVariables) {
    for (std::size_t c = 0; c < 36; ++c) {
      for (std::size_t d = 1; d <= 2; ++d) EXPECT_EQ(art.value(v, d, c), f.value(v, d, c));
      for (std::size_t d = 3; d <= 10; ++d) EXPECT_EQ(art.value(v, d, c), f.value(v, 1, c));
    }
  }
}

TEST(CliBlend, HandFixture) {
  const auto dir = oracle::scratch_dir("cli_blend_hand");
  const double coarse_series[] = {20, 21, 22, 19, 25, 24, 23, 22, 21, 20};
  const auto coarse = save_grid(dir, "coarse", make_grid({37.0, 22.0, 0.25, 1, 1}, 10, kIssue,
                                                         [&](Variable, std::size_t d, std::size_t) { return coarse_series[d - 1]; }));
  const auto fine = save_grid(dir, "fine", make_grid({37.0, 22.0, 0.25, 1, 1}, 2, kIssue,
                                                     [](Variable, std::size_t d, std::size_t) { return d == 1 ? 18.0 : 18.5; }));
  ASSERT_EQ(cli("blend --fine " + q(fine) + " --coarse " + q(coarse) + " --out " + q(dir / "art"), dir).code, 0);
  const auto art = load_grid((dir / "art/art.csv").string(), (dir / "art/art.json").string());
  const double expected[] = {18, 18.5, 19.8, 17.1, 22.5, 21.6, 20.7, 19.8, 18.9, 18.0};
  for (std::size_t d = 1; d <= 10; ++d) EXPECT_NEAR(art.value(Variable::soil_t_min, d, 0), expected[d - 1], 1e-12) << d;
}

TEST(CliBlend, MismatchesExitFour) {
  const auto dir = oracle::scratch_dir("cli_blend_mismatch");
  const auto flat = [](Variable v, std::size_t, std::size_t) { return warm(v); };
  const auto coarse = save_grid(dir, "coarse", make_grid({36.75, 21.75, 0.25, 3, 3}, 10, kIssue, flat));
  const auto late = save_grid(dir, "late", make_grid({37.0, 22.0, 0.05, 4, 4}, 2, kIssue + 1, flat));
  EXPECT_EQ(cli("blend --fine " + q(late) + " --coarse " + q(coarse), dir).code, 4);
  const auto outside = save_grid(dir, "outside", make_grid({40.0, 25.0, 0.05, 4, 4}, 2, kIssue, flat));
  EXPECT_EQ(cli("blend --fine " + q(outside) + " --coarse " + q(coarse), dir).code, 4);
  const auto short_coarse = save_grid(dir, "short", make_grid({36.75, 21.75, 0.25, 3, 3}, 9, kIssue, flat));
  const auto fine = save_grid(dir, "fine", make_grid({37.0, 22.0, 0.05, 4, 4}, 2, kIssue, flat));
  EXPECT_EQ(cli("blend --fine " + q(fine) + " --coarse " + q(short_coarse), dir).code, 4);
  EXPECT_EQ(cli("blend --fine " + q(fine) + " --coarse " + q(coarse) + " --units rankine", dir).code, 2);
}

// ---------------------------------------------------------------------------
// skill

TEST(CliSkill, LeadFiveAgainstStation) {
  const auto dir = oracle::scratch_dir("cli_skill");
  std::vector<std::string> paths;
  // issue k forecasts 30 + k for every lead; the station observes 29 throughout
  for (int k = 0; k < 3; ++k) {
    const auto csv = save_grid(dir, "issue" + std::to_string(k),
                               make_grid({37.0, 22.0, 0.02, 2, 2}, 10, kIssue + k,
                                         [k](Variable, std::size_t, std::size_t) { return 30.0 + k; }));
    paths.push_back(csv.string());
  }
  std::string station = "date,tmax_c,tmin_c\n";
  for (int d = 0; d < 20; ++d) station += (kIssue + d).iso() + ",29,12\n";
  write_file(dir / "station.csv", station);
  const auto r = cli("skill --forecast " + q(paths[0] + "," + paths[1] + "," + paths[2]) + " --station " +
                         q(dir / "station.csv") + " --lead 5 --out " + q(dir / "skill"),
                     dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = json::parse(slurp(dir / "skill/skill.json"));
  EXPECT_EQ(j["n"], 3);
  EXPECT_DOUBLE_EQ(j["mae"].get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(j["rmse"].get<double>(), std::sqrt(14.0 / 3.0));  // errors 1, 2, 3
  EXPECT_EQ(cli("skill --forecast " + q(paths[0]) + " --station " + q(dir / "station.csv") + " --lead 11", dir).code, 4);
  EXPECT_EQ(cli("skill --forecast " + q(paths[0]) + " --station " + q(dir / "station.csv") + " --variable soil_t_mean",
                dir)
                .code,
            4);
}

TEST(CliVersion, PrintsVersion) {
  const auto dir = oracle::scratch_dir("cli_version");
  const auto r = cli("--version", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find(kVersion), std::string::npos);
}

}  // namespace
