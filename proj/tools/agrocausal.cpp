// agrocausal command-line front end.
//
// Exit codes: 0 success, 2 configuration or I/O, 3 identification,
// 4 forecast horizon or grid extent.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "agrocausal/agrocausal.hpp"

namespace fs = std::filesystem;
using namespace agrocausal;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIdentification = 3;
constexpr int kExitHorizon = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoAdjustmentSet:
      return kExitIdentification;
    case ErrorCode::InsufficientHorizon:
    case ErrorCode::MissingMap:
    case ErrorCode::OutOfGrid:
    case ErrorCode::ExtentMismatch:
    case ErrorCode::IssueDateMismatch:
    case ErrorCode::MissingVariable:
    case ErrorCode::NoOverlap:
      return kExitHorizon;
    default:
      return kExitConfig;
  }
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string estimators;
  std::string refuters;
  std::string simulate;
  std::string graph;
  std::string dataset;
  std::string adjustment;
  std::optional<std::size_t> n;
  std::optional<std::size_t> bootstrap;
  std::optional<std::size_t> replicates;
  std::optional<std::size_t> trees;
  // forecast commands
  std::string forecast;
  std::string fine;
  std::string coarse;
  std::string rules;
  std::string date;
  std::string station;
  std::string variable = "air_t_max";
  std::size_t lead = 5;
  std::string units = "celsius";
};

nlohmann::json config_json(const Options& o) {
  if (o.config.empty()) return nlohmann::json::object();
  return read_json_file(o.config);
}

std::string config_dir(const Options& o) {
  return o.config.empty() ? std::string() : fs::path(o.config).parent_path().string();
}

// Flag value, else the config entry resolved against the config's directory.
std::string pick(const std::string& flag, const nlohmann::json& cfg, const char* key, const Options& o) {
  if (!flag.empty()) return flag;
  if (cfg.contains(key) && cfg.at(key).is_string()) return detail::resolve_path(config_dir(o), cfg.at(key).get<std::string>());
  return {};
}

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw Error(ErrorCode::InvalidArgument, std::string("missing ") + what);
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
}

// Grid sidecars sit next to the value CSV with a .json extension.
ForecastGrid load_grid_pair(const std::string& csv_path) {
  return load_grid(csv_path, fs::path(csv_path).replace_extension(".json").string());
}

std::string set_text(const NodeSet& s) {
  std::string out = "{";
  for (const auto& m : s) out += (out.size() > 1 ? ", " : "") + m;
  return out + "}";
}

PipelineConfig pipeline_config(const Options& o) {
  const auto j = config_json(o);
  PipelineConfig cfg = config_from_json(j, config_dir(o));
  if (!o.simulate.empty()) {
    cfg.simulate = o.simulate;
    cfg.dataset.reset();
  }
  if (!o.dataset.empty()) {
    cfg.dataset = o.dataset;
    cfg.simulate.reset();
  }
  if (!o.graph.empty()) cfg.graph = o.graph;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.estimators.empty()) {
    cfg.estimators.clear();
    for (const auto& m : split_list(o.estimators)) cfg.estimators.push_back(parse_method(m));
  }
  if (!o.refuters.empty()) {
    cfg.refuters.clear();
    if (o.refuters != "none") {
      for (const auto& r : split_list(o.refuters)) cfg.refuters.push_back(parse_refuter(r));
    }
  }
  if (!o.adjustment.empty()) cfg.adjustment_set = split_list(o.adjustment);
  if (o.n) cfg.sample_size = *o.n;
  if (o.bootstrap) cfg.bootstrap_replicates = *o.bootstrap;
  if (o.replicates) cfg.refuter_replicates = *o.replicates;
  if (o.trees) cfg.forest.n_trees = *o.trees;
  return cfg;
}

int cmd_identify(const Options& o) {
  const auto j = config_json(o);
  CausalGraph g;
  const auto graph_path = pick(o.graph, j, "graph", o);
  const auto scm_path = pick(o.simulate, j, "simulate", o);
  if (!graph_path.empty()) {
    g = load_graph(graph_path);
  } else if (!scm_path.empty()) {
    g = load_scm(scm_path).graph();
  } else {
    throw Error(ErrorCode::InvalidArgument, "identify needs --graph, --simulate or a config naming one");
  }
  g.require_valid();
  std::optional<std::vector<std::string>> explicit_set;
  if (!o.adjustment.empty()) {
    explicit_set = split_list(o.adjustment);
  } else if (j.contains("adjustment_set") && j.at("adjustment_set").is_array()) {
    explicit_set = j.at("adjustment_set").get<std::vector<std::string>>();
  }
  const auto id = identify(g, explicit_set);
  std::cout << "Back-door adjustment sets for " << g.treatment() << " -> " << g.outcome() << ":\n";
  for (const auto& s : id.candidates) std::cout << "  " << set_text(s.members) << (s.minimal ? " (minimal)" : "") << '\n';
  std::cout << "Chosen: " << set_text(id.chosen) << '\n';
  if (!o.out.empty()) {
    nlohmann::json sets = nlohmann::json::array();
    for (const auto& s : id.candidates) sets.push_back({{"members", s.members}, {"minimal", s.minimal}});
    const nlohmann::json out{{"treatment", g.treatment()}, {"outcome", g.outcome()}, {"candidate_sets", sets},
                             {"chosen", id.chosen}};
    write_text(fs::path(o.out) / "identification.json", out.dump(2) + "\n");
  }
  return 0;
}

int cmd_run(const Options& o) {
  const auto cfg = pipeline_config(o);
  const auto report = run_pipeline(cfg);
  const fs::path out(cfg.out_dir);
  write_text(out / "report.json", to_json(report).dump(2) + "\n");
  const auto table = render_table(report);
  write_text(out / "report.txt", table);
  for (const auto& row : report.rows) {
    for (const auto& cell : row.refuters) {
      if (cell.heatmap) {
        fs::create_directories(out);
        write_heatmap_csv((out / ("ucc_" + std::string(to_string(row.method)) + ".csv")).string(), *cell.heatmap);
      }
    }
  }
  std::cout << table;
  return 0;
}

int cmd_simulate(const Options& o) {
  const auto j = config_json(o);
  const auto scm_path = require(pick(o.simulate, j, "simulate", o), "--simulate <scm.json>");
  std::optional<std::uint64_t> seed = o.seed;
  if (!seed && j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
  if (!seed) throw Error(ErrorCode::InvalidArgument, "a seed is required (--seed)");
  const auto scm = load_scm(scm_path);
  std::size_t n = o.n.value_or(j.value("sample_size", scm.sample_size()));
  const auto out = fs::path(o.out.empty() ? j.value("out", std::string("out")) : o.out);
  fs::create_directories(out);
  const auto ds = sample(scm, n, derive_seed(*seed, 1));
  write_fields_csv((out / "fields.csv").string(), ds);
  const auto draws = j.value("oracle_draws", std::size_t{100000});
  const auto oracle = true_ate(scm, draws, derive_seed(*seed, 4));
  const nlohmann::json meta{{"scm", fs::path(scm_path).filename().string()},
                            {"rows", n},
                            {"treated", ds.count_treated()},
                            {"seed", *seed},
                            {"oracle", {{"ate", oracle.ate}, {"mc_se", oracle.mc_se}, {"draws", oracle.n_mc}}}};
  write_text(out / "oracle.json", meta.dump(2) + "\n");
  std::cout << "Wrote " << n << " rows (" << ds.count_treated() << " treated); oracle ATE "
            << detail::fmt("%.2f", oracle.ate) << " (MC se " << detail::fmt("%.2f", oracle.mc_se) << ")\n";
  return 0;
}

int cmd_blend(const Options& o) {
  const auto j = config_json(o);
  const auto fine = load_grid_pair(require(pick(o.fine, j, "fine", o), "--fine <grid.csv>"));
  const auto coarse = load_grid_pair(require(pick(o.coarse, j, "coarse", o), "--coarse <grid.csv>"));
  TrendOptions opt;
  if (o.units == "kelvin") {
    opt.units = RatioUnits::kelvin;
  } else if (o.units != "celsius") {
    throw Error(ErrorCode::InvalidArgument, "--units must be celsius or kelvin");
  }
  const auto art = synthesize_art(fine, coarse, 10, opt);
  const auto out = fs::path(o.out.empty() ? j.value("out", std::string("out")) : o.out);
  fs::create_directories(out);
  write_grid((out / "art.csv").string(), (out / "art.json").string(), art.grid);
  if (art.fallback_cells > 0) {
    log::warn(std::to_string(art.fallback_cells) + " coarse cell series used the additive fallback");
  }
  std::cout << "ART grid: " << art.grid.geometry().cells() << " cells x " << art.grid.horizon() << " days -> "
            << (out / "art.csv").string() << '\n';
  return 0;
}

int cmd_recommend(const Options& o) {
  const auto j = config_json(o);
  const auto forecast = load_grid_pair(require(pick(o.forecast, j, "forecast", o), "--forecast <grid.csv>"));
  const auto rules_path = pick(o.rules, j, "rules", o);
  const auto rules = rules_path.empty() ? cotton_default_rules() : load_rules(rules_path);
  const std::string day_text = o.date.empty() ? j.value("date", std::string()) : o.date;
  const Date day = day_text.empty() ? forecast.issue_date() + 1 : Date::parse(day_text);
  const auto map = recommendation_map(forecast, rules, day);
  const auto out = fs::path(o.out.empty() ? j.value("out", std::string("out")) : o.out);
  const auto stem = "map_" + day.iso();
  write_text(out / (stem + ".geojson"), map_to_geojson(map).dump(2) + "\n");
  write_map_csv((out / (stem + ".csv")).string(), map);
  const std::size_t cells = map.favorable + map.unfavorable;
  const double pct = cells ? 100.0 * static_cast<double>(map.favorable) / static_cast<double>(cells) : 0.0;
  std::cout << day.iso() << ": " << map.favorable << "/" << cells << " cells favorable ("
            << detail::fmt("%.0f", pct) << "% favorable)\n";
  return 0;
}

int cmd_skill(const Options& o) {
  const auto j = config_json(o);
  auto station = load_station_csv(require(pick(o.station, j, "station", o), "--station <station.csv>"));
  const auto list = require(pick(o.forecast, j, "forecast", o), "--forecast a.csv,b.csv");
  std::vector<ForecastGrid> issues;
  for (const auto& p : split_list(list)) issues.push_back(load_grid_pair(p));
  if (j.contains("station_location")) {
    station.location = {j.at("station_location").at(0).get<double>(), j.at("station_location").at(1).get<double>()};
  } else {
    // without an explicit location the station sits at the first grid's origin cell
    station.location = issues.front().geometry().center(0);
  }
  const auto s = skill_at_lead(issues, station, parse_variable(o.variable), o.lead);
  auto result = to_json(s);
  result["variable"] = o.variable;
  result["lead_days"] = o.lead;
  std::cout << result.dump(2) << '\n';
  if (!o.out.empty()) write_text(fs::path(o.out) / "skill.json", result.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal effect estimation for farm-level sowing recommendations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory");
  };

  auto* identify_cmd = app.add_subcommand("identify", "List back-door adjustment sets");
  common(identify_cmd);
  identify_cmd->add_option("--graph", o.graph, "Graph JSON");
  identify_cmd->add_option("--simulate", o.simulate, "SCM JSON (its graph is used)");
  identify_cmd->add_option("--adjustment", o.adjustment, "Explicit set to check, comma separated");

  auto* run_cmd = app.add_subcommand("run", "Estimate and refute the treatment effect");
  common(run_cmd);
  run_cmd->add_option("--simulate", o.simulate, "SCM JSON to sample from");
  run_cmd->add_option("--dataset", o.dataset, "Field CSV");
  run_cmd->add_option("--graph", o.graph, "Graph JSON");
  run_cmd->add_option("--estimators", o.estimators, "linear,matching,ips,t_learner,x_learner");
  run_cmd->add_option("--refuters", o.refuters, "placebo,rcc,rsr,ucc or none");
  run_cmd->add_option("--adjustment", o.adjustment, "Explicit adjustment set, comma separated");
  run_cmd->add_option("--n", o.n, "Rows to simulate");
  run_cmd->add_option("--bootstrap", o.bootstrap, "Bootstrap replicates");
  run_cmd->add_option("--replicates", o.replicates, "Refuter replicates");
  run_cmd->add_option("--trees", o.trees, "Trees per forest");

  auto* simulate_cmd = app.add_subcommand("simulate", "Sample a field CSV from an SCM");
  common(simulate_cmd);
  simulate_cmd->add_option("--simulate,--scm", o.simulate, "SCM JSON");
  simulate_cmd->add_option("--n", o.n, "Rows");

  auto* blend_cmd = app.add_subcommand("blend", "Synthesize 10-day fine forecasts");
  common(blend_cmd);
  blend_cmd->add_option("--fine", o.fine, "Fine grid CSV (sidecar alongside as .json)");
  blend_cmd->add_option("--coarse", o.coarse, "Coarse grid CSV (sidecar alongside as .json)");
  blend_cmd->add_option("--units", o.units, "Ratio units: celsius or kelvin");

  auto* recommend_cmd = app.add_subcommand("recommend", "Daily sowing recommendation map");
  common(recommend_cmd);
  recommend_cmd->add_option("--forecast", o.forecast, "Forecast grid CSV");
  recommend_cmd->add_option("--rules", o.rules, "Rule set JSON");
  recommend_cmd->add_option("--date", o.date, "Candidate sowing date (YYYY-MM-DD)");

  auto* skill_cmd = app.add_subcommand("skill", "Forecast error against a station");
  common(skill_cmd);
  skill_cmd->add_option("--forecast", o.forecast, "Issued forecast grid CSVs, comma separated");
  skill_cmd->add_option("--station", o.station, "Station CSV (date, tmax_c, tmin_c)");
  skill_cmd->add_option("--variable", o.variable, "air_t_max or air_t_min");
  skill_cmd->add_option("--lead", o.lead, "Lead time in days");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*identify_cmd) return cmd_identify(o);
    if (*run_cmd) return cmd_run(o);
    if (*simulate_cmd) return cmd_simulate(o);
    if (*blend_cmd) return cmd_blend(o);
    if (*recommend_cmd) return cmd_recommend(o);
    if (*skill_cmd) return cmd_skill(o);
  } catch (const Error& e) {
    log::error(e.what());
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    log::error(e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
