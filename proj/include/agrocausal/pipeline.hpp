#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "agrocausal/causal_graph.hpp"
#include "agrocausal/dataset.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/estimators.hpp"
#include "agrocausal/inference.hpp"
#include "agrocausal/log.hpp"
#include "agrocausal/random.hpp"
#include "agrocausal/scm.hpp"

namespace agrocausal {

inline constexpr const char* kVersion = "1.0.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct PipelineConfig {
  std::optional<std::string> graph;    // defaults to the SCM's graph when simulating
  std::optional<std::string> dataset;  // field CSV
  std::optional<std::string> simulate; // SCM JSON
  std::optional<std::string> ndvi_dir;
  std::optional<std::size_t> sample_size;
  std::optional<std::vector<std::string>> adjustment_set;
  std::vector<Method> estimators{std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<Refuter> refuters{Refuter::placebo, Refuter::rcc, Refuter::rsr, Refuter::ucc};
  std::size_t bootstrap_replicates = 1000;
  std::size_t refuter_replicates = 100;
  double rsr_keep_fraction = 0.8;
  ForestParams forest;
  IpsOptions ips;
  UccGrid ucc;
  std::size_t oracle_draws = 100000;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
};

/// Splits "a,b,c" into trimmed non-empty items.
inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(',', start), s.size());
    auto item = s.substr(start, end - start);
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    start = end + 1;
  }
  return out;
}

namespace detail {

inline std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute() || base.empty()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

// Accepts a JSON array of names or a single comma-separated string.
template <typename T, typename F>
std::vector<T> parse_list(const nlohmann::json& j, F&& parse) {
  std::vector<T> out;
  if (j.is_string()) {
    for (const auto& v : split_list(j.get<std::string>())) out.push_back(parse(v));
    return out;
  }
  for (const auto& v : j) out.push_back(parse(v.get<std::string>()));
  return out;
}

}  // namespace detail

/// Paths are resolved against `base_dir` (normally the config file's directory).
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = "") {
  PipelineConfig c;
  try {
    const auto path = [&](const char* key) -> std::optional<std::string> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return detail::resolve_path(base_dir, j.at(key).get<std::string>());
    };
    c.graph = path("graph");
    c.dataset = path("dataset");
    c.simulate = path("simulate");
    c.ndvi_dir = path("ndvi_dir");
    if (j.contains("sample_size")) c.sample_size = j.at("sample_size").get<std::size_t>();
    if (j.contains("adjustment_set") && !j.at("adjustment_set").is_null()) {
      c.adjustment_set = j.at("adjustment_set").get<std::vector<std::string>>();
    }
    if (j.contains("estimators")) c.estimators = detail::parse_list<Method>(j.at("estimators"), parse_method);
    if (j.contains("refuters")) {
      const auto& r = j.at("refuters");
      c.refuters = r.is_string() && r.get<std::string>() == "none" ? std::vector<Refuter>{}
                                                                    : detail::parse_list<Refuter>(r, parse_refuter);
    }
    c.bootstrap_replicates = j.value("bootstrap_replicates", c.bootstrap_replicates);
    c.refuter_replicates = j.value("refuter_replicates", c.refuter_replicates);
    c.rsr_keep_fraction = j.value("rsr_keep_fraction", c.rsr_keep_fraction);
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
      c.forest.max_bins = f.value("max_bins", c.forest.max_bins);
      if (f.contains("max_depth") && !f.at("max_depth").is_null()) c.forest.max_depth = f.at("max_depth").get<std::size_t>();
      if (f.contains("features_per_split") && !f.at("features_per_split").is_null()) {
        c.forest.features_per_split = f.at("features_per_split").get<std::size_t>();
      }
    }
    if (j.contains("ips")) {
      const auto& i = j.at("ips");
      c.ips.trim = i.value("trim", c.ips.trim);
      c.ips.trim_low = i.value("trim_low", c.ips.trim_low);
      c.ips.trim_high = i.value("trim_high", c.ips.trim_high);
    }
    if (j.contains("ucc_grid")) {
      c.ucc.alpha_t = j.at("ucc_grid").at("alpha_t").get<std::vector<double>>();
      c.ucc.alpha_y = j.at("ucc_grid").at("alpha_y").get<std::vector<double>>();
    }
    c.oracle_draws = j.value("oracle_draws", c.oracle_draws);
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("out")) c.out_dir = detail::resolve_path(base_dir, j.at("out").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  return c;
}

/// Canonical form used for hashing; object keys are emitted sorted. The output
/// directory is left out so relocating a run does not change its report.
inline nlohmann::json config_to_json(const PipelineConfig& c) {
  const auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json est = nlohmann::json::array(), ref = nlohmann::json::array();
  for (auto m : c.estimators) est.push_back(to_string(m));
  for (auto r : c.refuters) ref.push_back(to_string(r));
  return {{"graph", opt(c.graph)},
          {"dataset", opt(c.dataset)},
          {"simulate", opt(c.simulate)},
          {"ndvi_dir", opt(c.ndvi_dir)},
          {"sample_size", opt(c.sample_size)},
          {"adjustment_set", opt(c.adjustment_set)},
          {"estimators", est},
          {"refuters", ref},
          {"bootstrap_replicates", c.bootstrap_replicates},
          {"refuter_replicates", c.refuter_replicates},
          {"rsr_keep_fraction", c.rsr_keep_fraction},
          {"forest",
           {{"n_trees", c.forest.n_trees},
            {"min_leaf", c.forest.min_leaf},
            {"max_bins", c.forest.max_bins},
            {"max_depth", opt(c.forest.max_depth)},
            {"features_per_split", opt(c.forest.features_per_split)}}},
          {"ips", {{"trim", c.ips.trim}, {"trim_low", c.ips.trim_low}, {"trim_high", c.ips.trim_high}}},
          {"ucc_grid", {{"alpha_t", c.ucc.alpha_t}, {"alpha_y", c.ucc.alpha_y}}},
          {"oracle_draws", c.oracle_draws},
          {"seed", opt(c.seed)}};
}

inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a(config_to_json(c).dump())); }

inline void validate_config(const PipelineConfig& c) {
  if (!c.seed) throw Error(ErrorCode::InvalidArgument, "a seed is required (--seed or \"seed\" in the config)");
  if (!c.dataset && !c.simulate) throw Error(ErrorCode::InvalidArgument, "either a dataset or an SCM to simulate is required");
  if (c.dataset && c.simulate) throw Error(ErrorCode::InvalidArgument, "dataset and simulate are mutually exclusive");
  if (!c.graph && !c.simulate) throw Error(ErrorCode::InvalidArgument, "a graph file is required");
  for (const auto* p : {&c.graph, &c.dataset, &c.simulate, &c.ndvi_dir}) {
    if (*p && !std::filesystem::exists(**p)) throw Error(ErrorCode::Io, "'" + **p + "' does not exist", {**p});
  }
  if (c.estimators.empty()) throw Error(ErrorCode::InvalidArgument, "no estimators selected");
  if (c.bootstrap_replicates == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap_replicates must be positive");
}

// --- analysis data -----------------------------------------------------------------

struct AnalysisData {
  FieldDataset data;
  std::vector<std::string> columns;  // numeric adjustment columns
  std::vector<std::string> dropped;  // nodes or columns without information
};

/// Numeric design for adjustment set `z`: categorical nodes become
/// reference-coded dummies (first level dropped), constant columns and
/// constant nodes absent from the data are dropped.
inline AnalysisData prepare_analysis(const FieldDataset& ds, const CausalGraph& g, const NodeSet& z) {
  validate_for_analysis(ds);
  AnalysisData out{ds, {}, {}};
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& node = g.node(i);
    if (!z.contains(node.name)) continue;
    if (!ds.has(node.name)) {
      if (node.role == Role::constant) {
        out.dropped.push_back(node.name);
        continue;
      }
      throw Error(ErrorCode::MissingColumn, "adjustment node '" + node.name + "' has no column", {node.name});
    }
    if (ds.column(node.name).type == ColumnType::categorical) {
      std::vector<std::string> levels;
      out.data = one_hot(out.data, node.name, &levels);
      if (!levels.empty()) {
        const auto ref = node.name + "_" + levels.front();
        out.data = out.data.without_column(ref);
        out.dropped.push_back(ref);
      }
      for (std::size_t k = 1; k < levels.size(); ++k) out.columns.push_back(node.name + "_" + levels[k]);
    } else {
      out.columns.push_back(node.name);
    }
  }
  auto varying = drop_constant_columns(out.data, out.columns);
  for (const auto& c : out.columns) {
    if (std::find(varying.begin(), varying.end(), c) == varying.end()) out.dropped.push_back(c);
  }
  out.columns = std::move(varying);
  return out;
}

// --- report -----------------------------------------------------------------------

struct CellError {
  std::string code;
  std::string message;
};

inline CellError cell_error(const Error& e) { return {to_string(e.code()), e.what()}; }

struct RefuterCell {
  Refuter test = Refuter::placebo;
  std::optional<RefutationReport> report;
  std::optional<UccHeatmap> heatmap;
  std::optional<CellError> error;
};

struct EstimatorRow {
  Method method = Method::linear;
  std::optional<EffectEstimate> estimate;
  std::size_t bootstrap_failed = 0;
  std::optional<CellError> error;
  std::vector<RefuterCell> refuters;
};

struct AnalysisReport {
  std::string source;
  std::size_t n_rows = 0;
  std::size_t n_treated = 0;
  std::vector<AdjustmentSet> candidate_sets;
  NodeSet adjustment_set;
  std::vector<std::string> adjustment_columns;
  std::vector<std::string> dropped_columns;
  std::vector<EstimatorRow> rows;
  std::optional<OracleAte> oracle;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline nlohmann::json to_json(const CellError& e) { return {{"code", e.code}, {"message", e.message}}; }

inline nlohmann::json to_json(const AnalysisReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json jr;
    jr["method"] = to_string(row.method);
    jr["estimate"] = row.estimate ? to_json(*row.estimate) : nlohmann::json(nullptr);
    jr["bootstrap_failed"] = row.bootstrap_failed;
    jr["error"] = row.error ? to_json(*row.error) : nlohmann::json(nullptr);
    if (r.oracle && row.estimate && row.estimate->ci_low) {
      jr["ci_covers_oracle"] = *row.estimate->ci_low <= r.oracle->ate && r.oracle->ate <= *row.estimate->ci_high;
    }
    nlohmann::json refs = nlohmann::json::array();
    for (const auto& cell : row.refuters) {
      nlohmann::json jc;
      if (cell.report) jc = to_json(*cell.report);
      if (cell.heatmap) jc = to_json(*cell.heatmap);
      jc["test"] = to_string(cell.test);
      jc["error"] = cell.error ? to_json(*cell.error) : nlohmann::json(nullptr);
      refs.push_back(jc);
    }
    jr["refutations"] = refs;
    rows.push_back(jr);
  }
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& s : r.candidate_sets) candidates.push_back({{"members", s.members}, {"minimal", s.minimal}});
  nlohmann::json j;
  j["data"] = {{"source", r.source}, {"rows", r.n_rows}, {"treated", r.n_treated}};
  j["identification"] = {{"candidate_sets", candidates},
                         {"adjustment_set", r.adjustment_set},
                         {"adjustment_columns", r.adjustment_columns},
                         {"dropped_columns", r.dropped_columns}};
  j["estimates"] = rows;
  j["oracle"] = r.oracle ? nlohmann::json{{"ate", r.oracle->ate}, {"mc_se", r.oracle->mc_se}, {"draws", r.oracle->n_mc}}
                         : nlohmann::json(nullptr);
  j["provenance"] = {{"tool", "agrocausal"},
                     {"version", kVersion},
                     {"seed", r.seed},
                     {"config_hash", r.config_hash},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  return j;
}

namespace detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

/// Estimators as rows; ATE, CI and p, then Effect* and p per refuter.
inline std::string render_table(const AnalysisReport& r) {
  using detail::fmt;
  using detail::pad;
  std::string out;
  out += "Adjustment set: {";
  bool first = true;
  for (const auto& m : r.adjustment_set) {
    out += (first ? "" : ", ") + m;
    first = false;
  }
  out += "}\nRows: " + std::to_string(r.n_rows) + " (" + std::to_string(r.n_treated) + " treated)\n";
  if (r.oracle) out += "Oracle ATE: " + fmt("%.2f", r.oracle->ate) + " (MC se " + fmt("%.2f", r.oracle->mc_se) + ")\n";
  out += "\n" + pad("Method", 11) + pad("ATE", 10) + pad("95% CI", 22) + pad("p", 8);
  std::vector<Refuter> tests;
  if (!r.rows.empty()) {
    for (const auto& c : r.rows.front().refuters) tests.push_back(c.test);
  }
  for (auto t : tests) {
    std::string name = to_string(t);
    for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    out += "| " + pad(name + " Effect*", 16) + (t == Refuter::ucc ? "" : pad("p", 8));
  }
  out += "\n";
  for (const auto& row : r.rows) {
    out += pad(to_string(row.method), 11);
    if (!row.estimate) {
      out += "error: " + (row.error ? row.error->code : std::string("unknown")) + "\n";
      continue;
    }
    const auto& e = *row.estimate;
    out += pad(fmt("%.1f", e.ate), 10);
    out += pad(e.ci_low ? "[" + fmt("%.1f", *e.ci_low) + ", " + fmt("%.1f", *e.ci_high) + "]" : "-", 22);
    out += pad(e.p_value ? fmt("%.3f", *e.p_value) : "-", 8);
    for (const auto& c : row.refuters) {
      if (c.error) {
        out += "| " + pad("error", 16) + (c.test == Refuter::ucc ? "" : pad("", 8));
      } else if (c.heatmap) {
        out += "| " + pad(fmt("%.1f", c.heatmap->mean_ate), 16);
      } else {
        out += "| " + pad(fmt("%.1f", c.report->new_effect), 16) + pad(fmt("%.3f", c.report->p_value), 8);
      }
    }
    out += "\n";
  }
  return out;
}

// --- run ----------------------------------------------------------------------------

namespace seeds {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t bootstrap = 2;
inline constexpr std::uint64_t forest = 3;
inline constexpr std::uint64_t oracle = 4;
inline constexpr std::uint64_t refuter_base = 16;
}  // namespace seeds

struct Identification {
  std::vector<AdjustmentSet> candidates;
  NodeSet chosen;
};

/// Candidate back-door sets and the chosen one: the configured set when
/// given (it must be valid), otherwise the first minimal set.
inline Identification identify(const CausalGraph& g, const std::optional<std::vector<std::string>>& explicit_set,
                               std::size_t max_sets = 10) {
  Identification id;
  id.candidates = enumerate_backdoor_sets(g, max_sets);
  if (explicit_set) {
    NodeSet z(explicit_set->begin(), explicit_set->end());
    if (!is_valid_backdoor(g, z)) {
      throw Error(ErrorCode::NoAdjustmentSet, "the configured adjustment set does not satisfy the back-door criterion",
                  std::vector<std::string>(z.begin(), z.end()));
    }
    id.chosen = std::move(z);
    return id;
  }
  if (id.candidates.empty()) {
    throw Error(ErrorCode::NoAdjustmentSet, "no observed set blocks every back-door path from " + g.treatment() +
                                                " to " + g.outcome());
  }
  id.chosen = id.candidates.front().members;
  return id;
}

inline AnalysisReport run_pipeline(const PipelineConfig& cfg) {
  validate_config(cfg);
  const std::uint64_t seed = *cfg.seed;
  AnalysisReport report;
  report.seed = seed;
  report.config_hash = config_hash(cfg);

  std::optional<ScmSpec> scm;
  FieldDataset ds;
  if (cfg.simulate) {
    scm = load_scm(*cfg.simulate);
    const std::size_t n = cfg.sample_size.value_or(scm->sample_size());
    ds = sample(*scm, n, derive_seed(seed, seeds::data));
    report.source = "simulated:" + std::filesystem::path(*cfg.simulate).filename().string();
  } else {
    LoadOptions lo;
    if (cfg.ndvi_dir) lo.ndvi_dir = *cfg.ndvi_dir;
    ds = load_fields_csv(*cfg.dataset, infer_schema(*cfg.dataset), lo);
    report.source = "file:" + std::filesystem::path(*cfg.dataset).filename().string();
  }
  const CausalGraph graph = cfg.graph ? load_graph(*cfg.graph) : scm->graph();
  graph.require_valid();
  if (ds.treatment_name() != graph.treatment() || ds.outcome_name() != graph.outcome()) {
    throw Error(ErrorCode::MissingColumn, "dataset treatment/outcome do not match the graph designations");
  }
  report.n_rows = ds.rows();
  report.n_treated = ds.count_treated();

  const auto id = identify(graph, cfg.adjustment_set);
  report.candidate_sets = id.candidates;
  report.adjustment_set = id.chosen;
  const auto prepared = prepare_analysis(ds, graph, id.chosen);
  report.adjustment_columns = prepared.columns;
  report.dropped_columns = prepared.dropped;
  const auto& data = prepared.data;
  const std::span<const std::string> z(prepared.columns);
  log::info("adjustment columns: " + std::to_string(z.size()) + ", rows: " + std::to_string(data.rows()));

  for (std::size_t m = 0; m < cfg.estimators.size(); ++m) {
    EstimatorRow row;
    row.method = cfg.estimators[m];
    EstimatorSpec spec{row.method, cfg.forest, cfg.ips};
    spec.forest.seed = derive_seed(seed, seeds::forest);
    const auto fn = effect_fn(spec);
    const auto method_index = static_cast<std::uint64_t>(row.method);
    try {
      auto est = estimate_effect(spec, data, z);
      const auto boot = bootstrap_effect(fn, data, z, cfg.bootstrap_replicates,
                                         derive_seed(derive_seed(seed, seeds::bootstrap), method_index));
      row.bootstrap_failed = boot.failed;
      row.estimate = with_bootstrap(std::move(est), boot);
    } catch (const Error& e) {
      log::warn(std::string(to_string(row.method)) + ": " + e.what());
      row.error = cell_error(e);
    }
    for (auto test : cfg.refuters) {
      RefuterCell cell;
      cell.test = test;
      const auto rseed =
          derive_seed(derive_seed(seed, seeds::refuter_base + static_cast<std::uint64_t>(test)), method_index);
      try {
        if (row.error) throw Error(ErrorCode::EstimatorFailure, "estimator failed on the full data");
        switch (test) {
          case Refuter::placebo: cell.report = refute_placebo(fn, data, z, cfg.refuter_replicates, rseed); break;
          case Refuter::rcc: cell.report = refute_rcc(fn, data, z, cfg.refuter_replicates, rseed); break;
          case Refuter::rsr:
            cell.report = refute_rsr(fn, data, z, cfg.rsr_keep_fraction, cfg.refuter_replicates, rseed);
            break;
          case Refuter::ucc: cell.heatmap = refute_ucc(fn, data, z, cfg.ucc, rseed); break;
        }
      } catch (const Error& e) {
        log::warn(std::string(to_string(row.method)) + "/" + to_string(test) + ": " + e.what());
        cell.error = cell_error(e);
      }
      row.refuters.push_back(std::move(cell));
    }
    report.rows.push_back(std::move(row));
  }
  if (scm) report.oracle = true_ate(*scm, cfg.oracle_draws, derive_seed(seed, seeds::oracle));
  return report;
}

}  // namespace agrocausal
