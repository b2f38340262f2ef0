#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "agrocausal/pipeline.hpp"
#include "support/oracles.hpp"

using namespace agrocausal;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

std::string farm_scm_path() { return (oracle::source_dir() / "scm/farm_default.json").string(); }

PipelineConfig small_config(std::uint64_t seed = 11) {
  PipelineConfig c;
  c.simulate = farm_scm_path();
  c.sample_size = 400;
  c.bootstrap_replicates = 20;
  c.refuter_replicates = 3;
  c.forest.n_trees = 10;
  c.oracle_draws = 2000;
  c.ucc.alpha_t = {0.0, 0.5};
  c.ucc.alpha_y = {0.0, 1.0};
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// configuration

TEST(Config, ParsesFieldsAndResolvesRelativePaths) {
  const json j = {{"simulate", "scm/farm_default.json"},
                  {"graph", "/abs/graph.json"},
                  {"estimators", "linear, ips"},
                  {"refuters", json::array({"placebo", "ucc"})},
                  {"bootstrap_replicates", 50},
                  {"refuter_replicates", 7},
                  {"rsr_keep_fraction", 0.5},
                  {"forest", {{"n_trees", 30}, {"min_leaf", 3}}},
                  {"ips", {{"trim_low", 0.1}, {"trim_high", 0.9}}},
                  {"seed", 99},
                  {"out", "results"}};
  const auto c = config_from_json(j, "/base");
  EXPECT_EQ(*c.simulate, "/base/scm/farm_default.json");
  EXPECT_EQ(*c.graph, "/abs/graph.json");
  EXPECT_EQ(c.estimators, (std::vector<Method>{Method::linear, Method::ips}));
  EXPECT_EQ(c.refuters, (std::vector<Refuter>{Refuter::placebo, Refuter::ucc}));
  EXPECT_EQ(c.bootstrap_replicates, 50u);
  EXPECT_EQ(c.refuter_replicates, 7u);
  EXPECT_EQ(c.rsr_keep_fraction, 0.5);
  EXPECT_EQ(c.forest.n_trees, 30u);
  EXPECT_EQ(c.forest.min_leaf, 3u);
  EXPECT_EQ(c.ips.trim_low, 0.1);
  EXPECT_EQ(c.ips.trim_high, 0.9);
  EXPECT_EQ(*c.seed, 99u);
  EXPECT_EQ(c.out_dir, "/base/results");
}

TEST(Config, SeedIsRequired) {
  auto c = small_config();
  c.seed.reset();
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::InvalidArgument);
}

TEST(Config, SourcesAreValidated) {
  auto c = small_config();
  c.simulate = "/nonexistent/scm.json";
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::Io);
  c = small_config();
  c.dataset = farm_scm_path();
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::InvalidArgument);
  c = small_config();
  c.simulate.reset();
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::InvalidArgument);
  c = small_config();
  c.estimators.clear();
  EXPECT_EQ(code_of([&] { validate_config(c); }), ErrorCode::InvalidArgument);
}

TEST(Config, UnknownNamesAreRejected) {
  EXPECT_THROW(config_from_json({{"estimators", "linear,forest"}}), Error);
  EXPECT_THROW(config_from_json({{"refuters", "placebo,bogus"}}), Error);
  EXPECT_EQ(code_of([] { config_from_json({{"bootstrap_replicates", "many"}}); }), ErrorCode::Parse);
}

TEST(Config, HashTracksContent) {
  const auto a = small_config(), b = small_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  auto c = small_config();
  c.bootstrap_replicates = 21;
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_NE(config_hash(a), config_hash(small_config(12)));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(SplitList, TrimsAndDropsEmpties) {
  EXPECT_EQ(split_list(" a, b ,,c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(split_list("").empty());
}

// ---------------------------------------------------------------------------
// identification

TEST(Identify, ExplicitSetMustBeValid) {
  const auto g = load_scm(farm_scm_path()).graph();
  const std::vector<std::string> paper{"WS_min", "WS_max", "SoC", "SM", "G_geom", "SP_silt",
                                       "SP_clay", "SP_sand", "AbS", "AdS", "SV"};
  const auto id = identify(g, paper);
  EXPECT_EQ(id.chosen, NodeSet(paper.begin(), paper.end()));
  EXPECT_FALSE(id.candidates.empty());
  EXPECT_EQ(code_of([&] { identify(g, std::vector<std::string>{"SM"}); }), ErrorCode::NoAdjustmentSet);
}

TEST(Identify, DefaultsToFirstMinimalSet) {
  const auto g = load_scm(farm_scm_path()).graph();
  const auto id = identify(g, std::nullopt);
  ASSERT_TRUE(id.candidates.front().minimal);
  EXPECT_EQ(id.chosen, id.candidates.front().members);
  EXPECT_TRUE(is_valid_backdoor(g, id.chosen));
}

TEST(Identify, NoSetRaises) {
  const CausalGraph g({{"U", Role::unobserved}, {"T", Role::treatment}, {"Y", Role::outcome}},
                      {{"U", "T"}, {"U", "Y"}, {"T", "Y"}});
  EXPECT_EQ(code_of([&] { identify(g, std::nullopt); }), ErrorCode::NoAdjustmentSet);
}

TEST(PrepareAnalysis, CodesCategoriesAndDropsConstants) {
  const auto scm = load_scm(farm_scm_path());
  const auto ds = sample(scm, 300, 5);
  const auto id = identify(scm.graph(), std::nullopt);
  const auto prep = prepare_analysis(ds, scm.graph(), id.chosen);
  for (const auto& c : prep.columns) {
    EXPECT_TRUE(prep.data.has(c)) << c;
    EXPECT_NE(prep.data.column(c).type, ColumnType::categorical) << c;
  }
  // categorical SV: one reference level dropped
  const auto sv = std::count_if(prep.columns.begin(), prep.columns.end(), [](const std::string& c) { return c.rfind("SV_", 0) == 0; });
  if (id.chosen.contains("SV")) {
    const auto& labels = ds.column("SV").labels;
    EXPECT_EQ(static_cast<std::size_t>(sv) + 1, std::set<std::string>(labels.begin(), labels.end()).size());
  }
  for (const auto& name : {"AbS", "AdS", "AaS"}) {
    if (id.chosen.contains(name)) {
      EXPECT_NE(std::find(prep.dropped.begin(), prep.dropped.end(), name), prep.dropped.end()) << name;
    }
  }
}

// ---------------------------------------------------------------------------
// run

TEST(RunPipeline, ShapeMatchesSelection) {
  auto c = small_config();
  c.estimators = {Method::linear, Method::ips, Method::t_learner};
  c.refuters = {Refuter::placebo, Refuter::rsr};
  const auto r = run_pipeline(c);
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_EQ(r.rows[i].method, c.estimators[i]);
    ASSERT_EQ(r.rows[i].refuters.size(), 2u);
    EXPECT_EQ(r.rows[i].refuters[0].test, Refuter::placebo);
    EXPECT_EQ(r.rows[i].refuters[1].test, Refuter::rsr);
    ASSERT_TRUE(r.rows[i].estimate);
    EXPECT_TRUE(r.rows[i].estimate->ci_low && r.rows[i].estimate->ci_high && r.rows[i].estimate->p_value);
    for (const auto& cell : r.rows[i].refuters) EXPECT_TRUE(cell.report || cell.error);
  }
  EXPECT_EQ(r.n_rows, 400u);
  ASSERT_TRUE(r.oracle);
  const auto j = to_json(r);
  EXPECT_EQ(j["estimates"].size(), 3u);
  EXPECT_EQ(j["estimates"][0]["refutations"].size(), 2u);
  EXPECT_EQ(j["provenance"]["seed"], 11);
  EXPECT_EQ(j["provenance"]["config_hash"], config_hash(c));
}

TEST(RunPipeline, DeterministicPerSeed) {
  auto c = small_config(21);
  c.estimators = {Method::linear, Method::matching, Method::x_learner};
  const auto a = to_json(run_pipeline(c)).dump();
  const auto b = to_json(run_pipeline(c)).dump();
  EXPECT_EQ(a, b);
  c.seed = 22;
  EXPECT_NE(a, to_json(run_pipeline(c)).dump());
}

TEST(RunPipeline, UccColumnIsHeatmapMean) {
  auto c = small_config();
  c.estimators = {Method::linear};
  c.refuters = {Refuter::ucc};
  const auto r = run_pipeline(c);
  const auto& h = *r.rows[0].refuters[0].heatmap;
  double total = 0;
  for (const auto& row : h.ate) {
    for (double v : row) total += v;
  }
  EXPECT_NEAR(h.mean_ate, total / 4.0, 1e-9);
  EXPECT_EQ(h.ate[0][0], r.rows[0].estimate->ate);
  EXPECT_NE(render_table(r).find("UCC"), std::string::npos);
}

TEST(RunPipeline, EstimatorFailureIsRecordedPerCell) {
  // T is a deterministic function of X, so every propensity falls outside the
  // overlap window and IPS has no rows left
  const auto dir = oracle::scratch_dir("pipeline_failure");
  {
    std::ofstream g(dir / "graph.json");
    g << R"({"nodes":[{"name":"X","role":"observed"},{"name":"T","role":"treatment"},{"name":"Y","role":"outcome"}],
             "edges":[["X","T"],["X","Y"],["T","Y"]]})";
    std::ofstream d(dir / "fields.csv");
    d << "field_id,X,T,Y\n";
    std::mt19937_64 rng(3);
    std::normal_distribution<> nd;
    for (int i = 0; i < 200; ++i) {
      const double x = nd(rng);
      const int t = x > 0 ? 1 : 0;
      d << "f" << i << "," << x << "," << t << "," << 100 + 2 * x + 3 * t + nd(rng) << "\n";
    }
  }
  PipelineConfig c;
  c.graph = (dir / "graph.json").string();
  c.dataset = (dir / "fields.csv").string();
  c.estimators = {Method::linear, Method::ips};
  c.refuters = {Refuter::placebo};
  c.bootstrap_replicates = 20;
  c.refuter_replicates = 3;
  c.seed = 1;
  const auto r = run_pipeline(c);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_TRUE(r.rows[0].estimate);
  EXPECT_FALSE(r.rows[0].error);
  EXPECT_FALSE(r.rows[1].estimate);
  ASSERT_TRUE(r.rows[1].error);
  ASSERT_TRUE(r.rows[1].refuters[0].error);
  EXPECT_EQ(r.rows[1].refuters[0].error->code, "EstimatorFailure");
  EXPECT_FALSE(r.oracle);
  const auto j = to_json(r);
  EXPECT_TRUE(j["estimates"][1]["estimate"].is_null());
  EXPECT_TRUE(j["oracle"].is_null());
}

TEST(RunPipeline, DefaultScmIntervalsContainOracle) {
  PipelineConfig c;
  c.simulate = farm_scm_path();
  c.refuters.clear();
  c.bootstrap_replicates = 200;
  c.forest.n_trees = 50;
  c.oracle_draws = 20000;
  c.seed = 7;
  const auto r = run_pipeline(c);
  ASSERT_TRUE(r.oracle);
  EXPECT_EQ(r.n_rows, 171u);
  for (const auto& row : r.rows) {
    ASSERT_TRUE(row.estimate) << to_string(row.method);
    EXPECT_LE(*row.estimate->ci_low, r.oracle->ate) << to_string(row.method);
    EXPECT_GE(*row.estimate->ci_high, r.oracle->ate) << to_string(row.method);
  }
}

TEST(RenderTable, OneLinePerEstimator) {
  auto c = small_config();
  c.estimators = {Method::linear, Method::ips};
  c.refuters = {Refuter::placebo, Refuter::rcc};
  const auto text = render_table(run_pipeline(c));
  EXPECT_NE(text.find("linear"), std::string::npos);
  EXPECT_NE(text.find("ips"), std::string::npos);
  EXPECT_EQ(text.find("x_learner"), std::string::npos);
}

}  // namespace
