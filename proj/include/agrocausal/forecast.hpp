#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrocausal/causal_graph.hpp"
#include "agrocausal/csv.hpp"
#include "agrocausal/date.hpp"
#include "agrocausal/error.hpp"

namespace agrocausal {

enum class Variable { soil_t_mean, soil_t_min, air_t_max, air_t_min };

inline constexpr std::array<Variable, 4> kAllVariables = {Variable::soil_t_mean, Variable::soil_t_min,
                                                          Variable::air_t_max, Variable::air_t_min};

inline const char* to_string(Variable v) {
  switch (v) {
    case Variable::soil_t_mean: return "soil_t_mean";
    case Variable::soil_t_min: return "soil_t_min";
    case Variable::air_t_max: return "air_t_max";
    case Variable::air_t_min: return "air_t_min";
  }
  return "soil_t_mean";
}

inline Variable parse_variable(const std::string& s) {
  for (Variable v : kAllVariables) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown variable '" + s + "'", {s});
}

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

inline constexpr double kEarthRadiusKm = 6371.0088;

inline double haversine_km(LatLon a, LatLon b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

/// Regular lat/lon grid. The origin is the center of cell (0, 0); rows run
/// north and columns east; cell index = row * width + col.
struct GridGeometry {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_size = 0.0;  // degrees, both axes
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t cells() const { return width * height; }
  LatLon center(std::size_t index) const {
    return {origin_lat + static_cast<double>(index / width) * cell_size,
            origin_lon + static_cast<double>(index % width) * cell_size};
  }
  // outer boundary of the cells: {south, west, north, east}
  std::array<double, 4> bounds() const {
    const double h = cell_size / 2;
    return {origin_lat - h, origin_lon - h, origin_lat + (static_cast<double>(height) - 1) * cell_size + h,
            origin_lon + (static_cast<double>(width) - 1) * cell_size + h};
  }
  bool contains(LatLon p) const {
    const auto b = bounds();
    const double tol = 1e-9 * std::max(1.0, cell_size);
    return p.lat >= b[0] - tol && p.lat <= b[2] + tol && p.lon >= b[1] - tol && p.lon <= b[3] + tol;
  }
  bool operator==(const GridGeometry&) const = default;
};

/// Daily forecast values per (variable, lead day, cell). Lead day j in
/// 1..horizon is valid on issue_date + j.
class ForecastGrid {
 public:
  ForecastGrid(GridGeometry geometry, Date issue_date, std::size_t horizon,
               std::map<Variable, std::vector<double>> values)
      : geometry_(geometry), issue_(issue_date), horizon_(horizon), values_(std::move(values)) {
    if (!(geometry_.cell_size > 0.0) || geometry_.width == 0 || geometry_.height == 0) {
      throw Error(ErrorCode::InvalidArgument, "grid needs positive cell size and dimensions");
    }
    for (const auto& [v, vals] : values_) {
      if (vals.size() != horizon_ * geometry_.cells()) {
        throw Error(ErrorCode::InvalidArgument, std::string("variable ") + to_string(v) + " is not fully populated",
                    {to_string(v)});
      }
    }
  }

  const GridGeometry& geometry() const { return geometry_; }
  Date issue_date() const { return issue_; }
  std::size_t horizon() const { return horizon_; }
  bool has(Variable v) const { return values_.contains(v); }
  std::vector<Variable> variables() const {
    std::vector<Variable> out;
    for (const auto& kv : values_) out.push_back(kv.first);
    return out;
  }

  const std::vector<double>& series(Variable v) const {
    const auto it = values_.find(v);
    if (it == values_.end()) throw Error(ErrorCode::MissingVariable, std::string("grid lacks ") + to_string(v), {to_string(v)});
    return it->second;
  }

  double value(Variable v, std::size_t day, std::size_t cell) const {
    if (day < 1 || day > horizon_) {
      throw InsufficientHorizon(to_string(v), day, horizon_);
    }
    return series(v)[(day - 1) * geometry_.cells() + cell];
  }

  /// Values for days 1..horizon at one cell.
  std::vector<double> cell_series(Variable v, std::size_t cell) const {
    const auto& s = series(v);
    std::vector<double> out(horizon_);
    for (std::size_t d = 0; d < horizon_; ++d) out[d] = s[d * geometry_.cells() + cell];
    return out;
  }

  bool operator==(const ForecastGrid&) const = default;

 private:
  GridGeometry geometry_;
  Date issue_;
  std::size_t horizon_;
  std::map<Variable, std::vector<double>> values_;  // [(day - 1) * cells + cell]
};

/// Index of the cell whose center is nearest by great-circle distance; ties
/// go to the lowest index.
inline std::size_t nearest_cell(const GridGeometry& g, double lat, double lon) {
  const LatLon p{lat, lon};
  if (!std::isfinite(lat) || !std::isfinite(lon) || !g.contains(p)) {
    throw Error(ErrorCode::OutOfGrid, "point (" + csv::format_double(lat) + ", " + csv::format_double(lon) +
                                          ") lies outside the grid");
  }
  const auto clamp_index = [](double x, std::size_t n) {
    return static_cast<std::ptrdiff_t>(std::clamp(std::round(x), 0.0, static_cast<double>(n - 1)));
  };
  const auto r0 = clamp_index((lat - g.origin_lat) / g.cell_size, g.height);
  const auto c0 = clamp_index((lon - g.origin_lon) / g.cell_size, g.width);
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (auto r = std::max<std::ptrdiff_t>(0, r0 - 2); r <= std::min(h - 1, r0 + 2); ++r) {
    for (auto c = std::max<std::ptrdiff_t>(0, c0 - 2); c <= std::min(w - 1, c0 + 2); ++c) {
      const auto idx = static_cast<std::size_t>(r * w + c);
      const double d = haversine_km(p, g.center(idx));
      if (!std::isfinite(best_d) || d < best_d - 1e-12 * std::max(1.0, best_d)) {
        best_d = d;
        best = idx;
      }
    }
  }
  return best;
}

inline std::size_t nearest_cell(const ForecastGrid& grid, double lat, double lon) {
  return nearest_cell(grid.geometry(), lat, lon);
}

// --- hourly to daily ---------------------------------------------------------

struct HourlyValue {
  Date date;  // local calendar day
  double value = 0.0;
};

struct DailyStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t hours = 0;
};

/// Daily mean/min/max over whichever hourly values are present per day.
inline std::map<Date, DailyStats> daily_stats(std::span<const HourlyValue> hourly) {
  std::map<Date, DailyStats> out;
  for (const auto& h : hourly) {
    auto [it, fresh] = out.try_emplace(h.date, DailyStats{0.0, h.value, h.value, 0});
    auto& s = it->second;
    s.mean += h.value;
    s.min = std::min(s.min, h.value);
    s.max = std::max(s.max, h.value);
    ++s.hours;
  }
  for (auto& [d, s] : out) s.mean /= static_cast<double>(s.hours);
  return out;
}

// --- trend factors and ART synthesis -------------------------------------------

enum class RatioUnits { celsius, kelvin };

inline constexpr double kKelvinOffset = 273.15;

struct TrendOptions {
  RatioUnits units = RatioUnits::celsius;
  double epsilon = 1.0;  // |day-1 value| at or below this triggers the additive fallback
};

/// Multiplicative trend relative to day 1 of a coarse series, or an additive
/// anomaly when the day-1 base is too close to zero.
struct TrendFactors {
  std::vector<double> factor;   // index j - 1; factor[0] == 1 in ratio mode
  std::vector<double> anomaly;  // coarse_j - coarse_1
  bool near_zero_base = false;  // additive fallback engaged
  RatioUnits units = RatioUnits::celsius;

  double apply(double fine_day1, std::size_t day) const {
    if (near_zero_base) return fine_day1 + anomaly[day - 1];
    if (units == RatioUnits::kelvin) return (fine_day1 + kKelvinOffset) * factor[day - 1] - kKelvinOffset;
    return fine_day1 * factor[day - 1];
  }
};

inline TrendFactors trend_factors(std::span<const double> coarse, std::size_t horizon = 10,
                                  const TrendOptions& opt = {}) {
  if (coarse.size() < horizon || horizon < 1) {
    throw InsufficientHorizon("coarse series", std::max<std::size_t>(horizon, 1), coarse.size());
  }
  TrendFactors tf;
  tf.units = opt.units;
  const double shift = opt.units == RatioUnits::kelvin ? kKelvinOffset : 0.0;
  const double base = coarse[0] + shift;
  tf.near_zero_base = !(std::abs(base) > opt.epsilon);
  tf.factor.resize(horizon);
  tf.anomaly.resize(horizon);
  for (std::size_t j = 0; j < horizon; ++j) {
    tf.anomaly[j] = coarse[j] - coarse[0];
    tf.factor[j] = tf.near_zero_base ? std::nan("") : (coarse[j] + shift) / base;
  }
  return tf;
}

struct ArtResult {
  ForecastGrid grid;
  std::size_t fallback_cells = 0;  // coarse cells (per variable) that used the additive fallback
};

/// Fine-resolution forecast over the coarse horizon: days 1-2 copy the fine
/// input, later days scale fine day 1 by the trend of the nearest coarse cell.
inline ArtResult synthesize_art(const ForecastGrid& fine, const ForecastGrid& coarse, std::size_t horizon = 10,
                                const TrendOptions& opt = {}) {
  if (fine.issue_date() != coarse.issue_date()) {
    throw Error(ErrorCode::IssueDateMismatch,
                "fine issued " + fine.issue_date().iso() + ", coarse issued " + coarse.issue_date().iso());
  }
  const auto fb = fine.geometry().bounds();
  const auto cb = coarse.geometry().bounds();
  const double tol = 1e-9 * std::max(1.0, coarse.geometry().cell_size);
  if (fb[0] < cb[0] - tol || fb[1] < cb[1] - tol || fb[2] > cb[2] + tol || fb[3] > cb[3] + tol) {
    throw Error(ErrorCode::ExtentMismatch, "fine grid extends beyond the coarse grid");
  }
  if (fine.horizon() < 2) {
    throw InsufficientHorizon("fine grid", 2, fine.horizon());
  }
  if (coarse.horizon() < horizon) {
    throw InsufficientHorizon("coarse grid", horizon, coarse.horizon());
  }

  const auto& fg = fine.geometry();
  const std::size_t cells = fg.cells();
  std::vector<std::size_t> coarse_of(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const auto p = fg.center(c);
    coarse_of[c] = nearest_cell(coarse.geometry(), p.lat, p.lon);
  }

  std::map<Variable, std::vector<double>> out;
  std::size_t fallbacks = 0;
  for (Variable v : fine.variables()) {
    if (!coarse.has(v)) throw Error(ErrorCode::MissingVariable, std::string("coarse grid lacks ") + to_string(v), {to_string(v)});
    std::map<std::size_t, TrendFactors> trends;
    for (std::size_t cc : coarse_of) {
      if (trends.contains(cc)) continue;
      const auto series = coarse.cell_series(v, cc);
      auto tf = trend_factors(series, horizon, opt);
      if (tf.near_zero_base) ++fallbacks;
      trends.emplace(cc, std::move(tf));
    }
    const auto& fs = fine.series(v);
    std::vector<double> vals(horizon * cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const double day1 = fs[c];
      vals[c] = day1;
      vals[cells + c] = fs[cells + c];
      const auto& tf = trends.at(coarse_of[c]);
      for (std::size_t j = 3; j <= horizon; ++j) vals[(j - 1) * cells + c] = tf.apply(day1, j);
    }
    out.emplace(v, std::move(vals));
  }
  return {ForecastGrid(fg, fine.issue_date(), horizon, std::move(out)), fallbacks};
}

// --- grid files ------------------------------------------------------------------

inline nlohmann::json geometry_to_json(const ForecastGrid& g) {
  nlohmann::json vars = nlohmann::json::array();
  for (Variable v : g.variables()) vars.push_back(to_string(v));
  const auto& geo = g.geometry();
  return {{"origin_lat", geo.origin_lat}, {"origin_lon", geo.origin_lon},         {"cell_size_deg", geo.cell_size},
          {"width", geo.width},           {"height", geo.height},                 {"horizon_days", g.horizon()},
          {"issue_date", g.issue_date().iso()}, {"variables", vars}};
}

/// Reads a grid from its value CSV (variable, day, lat, lon, value_c) and
/// its geometry sidecar JSON.
inline ForecastGrid load_grid(const std::string& csv_path, const std::string& sidecar_path) {
  const auto meta = read_json_file(sidecar_path);
  GridGeometry geo;
  std::size_t horizon = 0;
  Date issue;
  std::vector<Variable> vars;
  try {
    geo.origin_lat = meta.at("origin_lat").get<double>();
    geo.origin_lon = meta.at("origin_lon").get<double>();
    geo.cell_size = meta.at("cell_size_deg").get<double>();
    geo.width = meta.at("width").get<std::size_t>();
    geo.height = meta.at("height").get<std::size_t>();
    horizon = meta.at("horizon_days").get<std::size_t>();
    issue = Date::parse(meta.at("issue_date").get<std::string>());
    for (const auto& v : meta.at("variables")) vars.push_back(parse_variable(v.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, "'" + sidecar_path + "': " + e.what());
  }
  if (!(geo.cell_size > 0.0) || geo.width == 0 || geo.height == 0) {
    throw Error(ErrorCode::Parse, "'" + sidecar_path + "': bad grid geometry");
  }

  const auto table = csv::read(csv_path);
  const char* needed[] = {"variable", "day", "lat", "lon", "value_c"};
  std::array<std::ptrdiff_t, 5> col{};
  for (std::size_t k = 0; k < 5; ++k) {
    col[k] = table.column(needed[k]);
    if (col[k] < 0) throw Error(ErrorCode::MissingColumn, "'" + csv_path + "' lacks column " + needed[k], {needed[k]});
  }
  const std::size_t cells = geo.cells();
  std::map<Variable, std::vector<double>> values;
  std::map<Variable, std::vector<bool>> seen;
  for (Variable v : vars) {
    values[v].assign(horizon * cells, 0.0);
    seen[v].assign(horizon * cells, false);
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto field = [&](std::size_t k) -> const std::string& {
      const auto c = static_cast<std::size_t>(col[k]);
      if (c >= row.size()) throw TypeViolation(r + 1, needed[k], "");
      return row[c];
    };
    const Variable v = parse_variable(field(0));
    if (!values.contains(v)) throw Error(ErrorCode::Parse, "'" + csv_path + "': undeclared variable " + field(0));
    double day = 0, lat = 0, lon = 0, val = 0;
    if (!csv::parse_double(field(1), day) || day < 1 || day > static_cast<double>(horizon) || day != std::floor(day)) {
      throw TypeViolation(r + 1, "day", field(1));
    }
    if (!csv::parse_double(field(2), lat)) throw TypeViolation(r + 1, "lat", field(2));
    if (!csv::parse_double(field(3), lon)) throw TypeViolation(r + 1, "lon", field(3));
    if (!csv::parse_double(field(4), val)) throw TypeViolation(r + 1, "value_c", field(4));
    const double fr = (lat - geo.origin_lat) / geo.cell_size;
    const double fc = (lon - geo.origin_lon) / geo.cell_size;
    const double rr = std::round(fr), cc = std::round(fc);
    if (std::abs(fr - rr) > 1e-6 || std::abs(fc - cc) > 1e-6 || rr < 0 || cc < 0 ||
        rr >= static_cast<double>(geo.height) || cc >= static_cast<double>(geo.width)) {
      throw Error(ErrorCode::OutOfGrid, "'" + csv_path + "' row " + std::to_string(r + 1) + " is not a cell center");
    }
    const auto idx = (static_cast<std::size_t>(day) - 1) * cells + static_cast<std::size_t>(rr) * geo.width +
                     static_cast<std::size_t>(cc);
    values[v][idx] = val;
    seen[v][idx] = true;
  }
  for (const auto& [v, s] : seen) {
    if (std::find(s.begin(), s.end(), false) != s.end()) {
      throw Error(ErrorCode::MissingVariable, "'" + csv_path + "' does not populate every cell of " + to_string(v),
                  {to_string(v)});
    }
  }
  return ForecastGrid(geo, issue, horizon, std::move(values));
}

inline void write_grid(const std::string& csv_path, const std::string& sidecar_path, const ForecastGrid& g) {
  csv::Table t;
  t.header = {"variable", "day", "lat", "lon", "value_c"};
  const auto& geo = g.geometry();
  for (Variable v : g.variables()) {
    for (std::size_t d = 1; d <= g.horizon(); ++d) {
      for (std::size_t c = 0; c < geo.cells(); ++c) {
        const auto p = geo.center(c);
        t.rows.push_back({to_string(v), std::to_string(d), csv::format_double(p.lat), csv::format_double(p.lon),
                          csv::format_double(g.value(v, d, c))});
      }
    }
  }
  csv::write(csv_path, t);
  std::ofstream out(sidecar_path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + sidecar_path + "'");
  out << geometry_to_json(g).dump(2) << '\n';
}

// --- station skill ---------------------------------------------------------------

/// Observed daily air temperature extremes at a station.
struct StationSeries {
  LatLon location;
  std::vector<Date> dates;  // strictly increasing
  std::vector<double> tmax;
  std::vector<double> tmin;

  void validate() const {
    if (tmax.size() != dates.size() || tmin.size() != dates.size()) {
      throw Error(ErrorCode::InvalidArgument, "station columns differ in length");
    }
    for (std::size_t i = 1; i < dates.size(); ++i) {
      if (!(dates[i - 1] < dates[i])) throw Error(ErrorCode::InvalidArgument, "station dates must be unique and ordered");
    }
  }

  std::optional<double> observed(Variable v, Date d) const {
    const auto it = std::lower_bound(dates.begin(), dates.end(), d);
    if (it == dates.end() || *it != d) return std::nullopt;
    const auto i = static_cast<std::size_t>(it - dates.begin());
    if (v == Variable::air_t_max) return tmax[i];
    if (v == Variable::air_t_min) return tmin[i];
    throw Error(ErrorCode::MissingVariable, std::string("stations do not observe ") + to_string(v), {to_string(v)});
  }
};

/// Reads (date, tmax_c, tmin_c); rows are sorted by date on load.
inline StationSeries load_station_csv(const std::string& path, LatLon location = {}) {
  const auto table = csv::read(path);
  const char* needed[] = {"date", "tmax_c", "tmin_c"};
  std::array<std::size_t, 3> col{};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto c = table.column(needed[k]);
    if (c < 0) throw Error(ErrorCode::MissingColumn, "'" + path + "' lacks column " + needed[k], {needed[k]});
    col[k] = static_cast<std::size_t>(c);
  }
  std::vector<std::tuple<Date, double, double>> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto get = [&](std::size_t k) { return col[k] < row.size() ? row[col[k]] : std::string(); };
    Date d;
    double hi = 0, lo = 0;
    if (!Date::try_parse(get(0), d)) throw TypeViolation(r + 1, "date", get(0));
    if (!csv::parse_double(get(1), hi)) throw TypeViolation(r + 1, "tmax_c", get(1));
    if (!csv::parse_double(get(2), lo)) throw TypeViolation(r + 1, "tmin_c", get(2));
    rows.emplace_back(d, hi, lo);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
  StationSeries s;
  s.location = location;
  for (const auto& [d, hi, lo] : rows) {
    s.dates.push_back(d);
    s.tmax.push_back(hi);
    s.tmin.push_back(lo);
  }
  s.validate();
  return s;
}

struct Skill {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

inline nlohmann::json to_json(const Skill& s) { return {{"mae", s.mae}, {"rmse", s.rmse}, {"n", s.n}}; }

/// Forecast values on their valid dates against station observations.
inline Skill skill(std::span<const Date> valid_dates, std::span<const double> forecast, const StationSeries& station,
                   Variable v) {
  if (valid_dates.size() != forecast.size()) throw Error(ErrorCode::InvalidArgument, "dates and values differ in length");
  Skill s;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < forecast.size(); ++i) {
    const auto obs = station.observed(v, valid_dates[i]);
    if (!obs) continue;
    const double e = forecast[i] - *obs;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++s.n;
  }
  if (s.n == 0) throw Error(ErrorCode::NoOverlap, "no forecast date has a station observation");
  s.mae = abs_sum / static_cast<double>(s.n);
  s.rmse = std::sqrt(sq_sum / static_cast<double>(s.n));
  return s;
}

/// Scores a run of issued forecasts at one lead time, reading each grid at
/// the cell nearest the station.
inline Skill skill_at_lead(std::span<const ForecastGrid> issues, const StationSeries& station, Variable v,
                           std::size_t lead_days) {
  std::vector<Date> dates;
  std::vector<double> values;
  for (const auto& g : issues) {
    if (lead_days < 1 || lead_days > g.horizon()) {
      throw InsufficientHorizon(to_string(v), lead_days, g.horizon());
    }
    const auto cell = nearest_cell(g, station.location.lat, station.location.lon);
    dates.push_back(g.issue_date() + static_cast<std::int64_t>(lead_days));
    values.push_back(g.value(v, lead_days, cell));
  }
  return skill(dates, values, station, v);
}

}  // namespace agrocausal
