#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrocausal/causal_graph.hpp"
#include "agrocausal/csv.hpp"
#include "agrocausal/dataset.hpp"
#include "agrocausal/date.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/forecast.hpp"
#include "agrocausal/random.hpp"

namespace agrocausal {

enum class Priority { mandatory, optimum };

inline const char* to_string(Priority p) { return p == Priority::mandatory ? "mandatory" : "optimum"; }

inline Priority parse_priority(const std::string& s) {
  if (s == "mandatory") return Priority::mandatory;
  if (s == "optimum") return Priority::optimum;
  throw Error(ErrorCode::InvalidArgument, "unknown priority '" + s + "'", {s});
}

/// Holds when every daily value of `variable` over day offsets
/// start_offset .. start_offset + window_days - 1 strictly exceeds `threshold`.
struct Condition {
  std::string id;
  Variable variable = Variable::soil_t_mean;
  double threshold = 0.0;
  std::size_t window_days = 5;
  Priority priority = Priority::mandatory;
  std::size_t start_offset = 0;

  std::size_t days_needed() const { return start_offset + window_days; }
};

/// Which conditions a favorable day must satisfy.
enum class Requirement { all, mandatory };

struct RuleSet {
  std::vector<Condition> conditions;
  Requirement requirement = Requirement::all;

  std::size_t days_needed() const {
    std::size_t d = 0;
    for (const auto& c : conditions) d = std::max(d, c.days_needed());
    return d;
  }

  RuleSet without(const std::string& id) const {
    RuleSet out = *this;
    std::erase_if(out.conditions, [&](const Condition& c) { return c.id == id; });
    return out;
  }
};

/// Cotton sowing suitability thresholds (degrees C).
inline RuleSet cotton_default_rules() {
  RuleSet r;
  r.conditions = {
      {"soil-mean-optimum", Variable::soil_t_mean, 18.0, 10, Priority::optimum, 0},
      {"air-max-optimum", Variable::air_t_max, 26.0, 5, Priority::optimum, 0},
      {"soil-mean-mandatory", Variable::soil_t_mean, 15.56, 5, Priority::mandatory, 0},
      {"soil-min-mandatory", Variable::soil_t_min, 10.0, 5, Priority::mandatory, 0},
      {"air-min-mandatory", Variable::air_t_min, 10.0, 5, Priority::mandatory, 0},
  };
  return r;
}

inline void validate_rules(const RuleSet& rules) {
  std::vector<std::string> ids;
  for (const auto& c : rules.conditions) {
    if (c.id.empty()) throw Error(ErrorCode::InvalidArgument, "condition without id");
    if (!std::isfinite(c.threshold)) throw Error(ErrorCode::InvalidArgument, "non-finite threshold", {c.id});
    if (c.window_days == 0) throw Error(ErrorCode::InvalidArgument, "empty window", {c.id});
    if (std::find(ids.begin(), ids.end(), c.id) != ids.end()) {
      throw Error(ErrorCode::InvalidArgument, "duplicate condition id '" + c.id + "'", {c.id});
    }
    ids.push_back(c.id);
  }
}

inline RuleSet rules_from_json(const nlohmann::json& j) {
  RuleSet r;
  try {
    for (const auto& c : j.at("conditions")) {
      Condition cond;
      cond.id = c.at("id").get<std::string>();
      cond.variable = parse_variable(c.at("variable").get<std::string>());
      if (c.value("comparator", std::string(">")) != ">") {
        throw Error(ErrorCode::InvalidArgument, "only strict '>' comparisons are supported", {cond.id});
      }
      cond.threshold = c.at("threshold_c").get<double>();
      cond.window_days = c.at("window_days").get<std::size_t>();
      cond.priority = parse_priority(c.at("priority").get<std::string>());
      cond.start_offset = c.value("start_offset", std::size_t{0});
      r.conditions.push_back(std::move(cond));
    }
    const auto req = j.value("favorable_requires", std::string("all"));
    if (req == "all") {
      r.requirement = Requirement::all;
    } else if (req == "mandatory") {
      r.requirement = Requirement::mandatory;
    } else {
      throw Error(ErrorCode::InvalidArgument, "favorable_requires must be 'all' or 'mandatory'", {req});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("rule set: ") + e.what());
  }
  validate_rules(r);
  return r;
}

inline nlohmann::json rules_to_json(const RuleSet& r) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& c : r.conditions) {
    conds.push_back({{"id", c.id},
                     {"variable", to_string(c.variable)},
                     {"comparator", ">"},
                     {"threshold_c", c.threshold},
                     {"window_days", c.window_days},
                     {"start_offset", c.start_offset},
                     {"priority", to_string(c.priority)}});
  }
  return {{"conditions", conds}, {"favorable_requires", r.requirement == Requirement::all ? "all" : "mandatory"}};
}

inline RuleSet load_rules(const std::string& path) { return rules_from_json(read_json_file(path)); }

struct DayClassification {
  bool favorable = false;
  bool mandatory_ok = true;
  bool optimum_ok = true;
  std::vector<std::string> failed_conditions;  // in rule order

  bool operator==(const DayClassification&) const = default;
};

/// Daily values per variable, offset 0 being the candidate sowing day.
using DayWindow = std::map<Variable, std::vector<double>>;

inline DayClassification classify_day(const DayWindow& window, const RuleSet& rules) {
  DayClassification out;
  for (const auto& c : rules.conditions) {
    const auto it = window.find(c.variable);
    const std::size_t available = it == window.end() ? 0 : it->second.size();
    if (available < c.days_needed()) throw InsufficientHorizon(to_string(c.variable), c.days_needed(), available);
    const auto first = it->second.begin() + static_cast<std::ptrdiff_t>(c.start_offset);
    const bool holds = std::all_of(first, first + static_cast<std::ptrdiff_t>(c.window_days),
                                   [&](double v) { return v > c.threshold; });
    if (holds) continue;
    out.failed_conditions.push_back(c.id);
    (c.priority == Priority::mandatory ? out.mandatory_ok : out.optimum_ok) = false;
  }
  out.favorable = out.mandatory_ok && (rules.requirement == Requirement::mandatory || out.optimum_ok);
  return out;
}

struct RecommendationMap {
  GridGeometry geometry;
  Date day;
  std::vector<DayClassification> cells;  // by cell index
  std::size_t favorable = 0;
  std::size_t unfavorable = 0;
};

/// The forecast window starting on `day` for one cell. Forecast lead j is
/// valid on issue + j, so `day` must fall within the horizon.
inline DayWindow window_at(const ForecastGrid& forecast, Date day, std::size_t cell, std::size_t days) {
  const auto lead0 = day - forecast.issue_date();
  if (lead0 < 1) {
    throw Error(ErrorCode::InvalidArgument,
                day.iso() + " is not after the forecast issue date " + forecast.issue_date().iso());
  }
  const auto first = static_cast<std::size_t>(lead0);
  DayWindow w;
  for (Variable v : forecast.variables()) {
    const std::size_t available = forecast.horizon() >= first ? forecast.horizon() - first + 1 : 0;
    const std::size_t take = std::min(days, available);
    std::vector<double> vals(take);
    for (std::size_t k = 0; k < take; ++k) vals[k] = forecast.value(v, first + k, cell);
    w.emplace(v, std::move(vals));
  }
  return w;
}

inline RecommendationMap recommendation_map(const ForecastGrid& forecast, const RuleSet& rules, Date day) {
  const std::size_t days = rules.days_needed();
  RecommendationMap m;
  m.geometry = forecast.geometry();
  m.day = day;
  m.cells.resize(m.geometry.cells());
  parallel_for(m.cells.size(), [&](std::size_t c) { m.cells[c] = classify_day(window_at(forecast, day, c, days), rules); });
  for (const auto& c : m.cells) (c.favorable ? m.favorable : m.unfavorable) += 1;
  return m;
}

inline nlohmann::json map_to_geojson(const RecommendationMap& m) {
  nlohmann::json features = nlohmann::json::array();
  const double h = m.geometry.cell_size / 2;
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    const auto p = m.geometry.center(i);
    const auto& c = m.cells[i];
    const nlohmann::json ring = {{p.lon - h, p.lat - h}, {p.lon + h, p.lat - h}, {p.lon + h, p.lat + h},
                                 {p.lon - h, p.lat + h}, {p.lon - h, p.lat - h}};
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                        {"properties",
                         {{"cell", i},
                          {"favorable", c.favorable},
                          {"mandatory_ok", c.mandatory_ok},
                          {"optimum_ok", c.optimum_ok},
                          {"failed", c.failed_conditions}}}});
  }
  return {{"type", "FeatureCollection"},
          {"date", m.day.iso()},
          {"summary", {{"favorable", m.favorable}, {"unfavorable", m.unfavorable}}},
          {"features", features}};
}

inline void write_map_csv(const std::string& path, const RecommendationMap& m) {
  csv::Table t;
  t.header = {"lat", "lon", "favorable"};
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    const auto p = m.geometry.center(i);
    t.rows.push_back({csv::format_double(p.lat), csv::format_double(p.lon), m.cells[i].favorable ? "1" : "0"});
  }
  csv::write(path, t);
}

/// Binary treatment per field: 1 iff the field's nearest cell was favorable
/// on its sowing date. Fields need `sowing_date`, `lat` and `lon` columns.
inline Column treatment_labels(const FieldDataset& fields, const std::map<Date, RecommendationMap>& maps,
                               const std::string& name = "T") {
  const auto sow = fields.numeric("sowing_date");
  const auto lat = fields.numeric("lat");
  const auto lon = fields.numeric("lon");
  std::vector<double> t(fields.rows());
  for (std::size_t i = 0; i < fields.rows(); ++i) {
    const Date d(static_cast<std::int64_t>(sow[i]));
    const auto it = maps.find(d);
    if (it == maps.end()) throw Error(ErrorCode::MissingMap, "no recommendation map for " + d.iso(), {d.iso()});
    std::size_t cell = 0;
    try {
      cell = nearest_cell(it->second.geometry, lat[i], lon[i]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::OutOfGrid) throw;
      throw Error(ErrorCode::OutOfGrid, "field '" + fields.ids()[i] + "' lies outside the map", {fields.ids()[i]});
    }
    t[i] = it->second.cells[cell].favorable ? 1.0 : 0.0;
  }
  return Column::binary(name, std::move(t));
}

}  // namespace agrocausal
