#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agrocausal/csv.hpp"
#include "agrocausal/date.hpp"
#include "agrocausal/error.hpp"

namespace agrocausal {

enum class ColumnType { binary, real, categorical, date };

inline const char* to_string(ColumnType t) {
  switch (t) {
    case ColumnType::binary: return "binary";
    case ColumnType::real: return "real";
    case ColumnType::categorical: return "categorical";
    case ColumnType::date: return "date";
  }
  return "real";
}

/// One named column. Binary, real and date columns live in `values` (dates
/// as days since epoch); categorical columns live in `labels`.
struct Column {
  std::string name;
  ColumnType type = ColumnType::real;
  std::vector<double> values;
  std::vector<std::string> labels;

  bool numeric() const { return type != ColumnType::categorical; }
  std::size_t size() const { return numeric() ? values.size() : labels.size(); }

  static Column real(std::string name, std::vector<double> v) {
    return {std::move(name), ColumnType::real, std::move(v), {}};
  }
  static Column binary(std::string name, std::vector<double> v) {
    return {std::move(name), ColumnType::binary, std::move(v), {}};
  }
  static Column categorical(std::string name, std::vector<std::string> l) {
    return {std::move(name), ColumnType::categorical, {}, std::move(l)};
  }

  bool operator==(const Column&) const = default;
};

/// Tabular observational data, one row per field, with a designated binary
/// treatment column and real outcome column. Values are immutable in
/// practice: every transformation returns a new dataset.
class FieldDataset {
 public:
  FieldDataset() = default;

  FieldDataset(std::vector<std::string> ids, std::vector<Column> columns, std::string treatment = "T",
               std::string outcome = "Y")
      : ids_(std::move(ids)), columns_(std::move(columns)), treatment_(std::move(treatment)),
        outcome_(std::move(outcome)) {
    for (const auto& c : columns_) {
      if (c.size() != ids_.size()) {
        throw Error(ErrorCode::InvalidArgument,
                    "column '" + c.name + "' has " + std::to_string(c.size()) + " rows, expected " +
                        std::to_string(ids_.size()));
      }
    }
  }

  /// Dataset with ids "1".."n".
  static FieldDataset from_columns(std::vector<Column> columns, std::string treatment = "T",
                                   std::string outcome = "Y") {
    const std::size_t n = columns.empty() ? 0 : columns.front().size();
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i + 1);
    return FieldDataset(std::move(ids), std::move(columns), std::move(treatment), std::move(outcome));
  }

  std::size_t rows() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<Column>& columns() const { return columns_; }
  const std::string& treatment_name() const { return treatment_; }
  const std::string& outcome_name() const { return outcome_; }

  bool has(const std::string& name) const {
    return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
  }

  const Column& column(const std::string& name) const {
    for (const auto& c : columns_) {
      if (c.name == name) return c;
    }
    throw Error(ErrorCode::UnknownColumn, "'" + name + "'", {name});
  }

  std::span<const double> numeric(const std::string& name) const {
    const auto& c = column(name);
    if (!c.numeric()) throw Error(ErrorCode::InvalidArgument, "column '" + name + "' is categorical", {name});
    return c.values;
  }

  std::span<const double> treatment() const { return numeric(treatment_); }
  std::span<const double> outcome() const { return numeric(outcome_); }

  std::size_t count_treated() const {
    const auto t = treatment();
    return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1.0));
  }

  /// Adds or replaces a column.
  FieldDataset with_column(Column col) const {
    FieldDataset out = *this;
    if (col.size() != rows()) throw Error(ErrorCode::InvalidArgument, "column '" + col.name + "' has wrong length");
    for (auto& c : out.columns_) {
      if (c.name == col.name) {
        c = std::move(col);
        return out;
      }
    }
    out.columns_.push_back(std::move(col));
    return out;
  }

  FieldDataset with_values(const std::string& name, std::vector<double> values) const {
    Column c = column(name);
    c.values = std::move(values);
    return with_column(std::move(c));
  }

  FieldDataset without_column(const std::string& name) const {
    FieldDataset out = *this;
    std::erase_if(out.columns_, [&](const Column& c) { return c.name == name; });
    return out;
  }

  /// Rows at `indices`, in that order; repeats allowed.
  FieldDataset select_rows(std::span<const std::size_t> indices) const {
    FieldDataset out;
    out.treatment_ = treatment_;
    out.outcome_ = outcome_;
    out.ids_.reserve(indices.size());
    for (auto i : indices) out.ids_.push_back(ids_.at(i));
    out.columns_.reserve(columns_.size());
    for (const auto& c : columns_) {
      Column sub{c.name, c.type, {}, {}};
      if (c.numeric()) {
        sub.values.reserve(indices.size());
        for (auto i : indices) sub.values.push_back(c.values[i]);
      } else {
        sub.labels.reserve(indices.size());
        for (auto i : indices) sub.labels.push_back(c.labels[i]);
      }
      out.columns_.push_back(std::move(sub));
    }
    return out;
  }

  bool operator==(const FieldDataset&) const = default;

 private:
  std::vector<std::string> ids_;
  std::vector<Column> columns_;
  std::string treatment_ = "T";
  std::string outcome_ = "Y";
};

/// Checks the analysis invariants: treatment in {0,1}; outcome finite and
/// strictly positive.
inline void validate_for_analysis(const FieldDataset& ds) {
  const auto t = ds.treatment();
  const auto y = ds.outcome();
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) {
      throw Error(ErrorCode::InvalidArgument, "treatment of field '" + ds.ids()[i] + "' is not 0/1");
    }
    if (!std::isfinite(y[i]) || y[i] <= 0.0) {
      throw Error(ErrorCode::InvalidArgument, "outcome of field '" + ds.ids()[i] + "' is not a positive number");
    }
  }
}

// --- CSV ingestion ----------------------------------------------------------

struct ColumnSpec {
  std::string header;  // name in the CSV file
  std::string name;    // name in the dataset
  ColumnType type = ColumnType::real;
  bool required = true;
};

struct FieldSchema {
  std::string id_header = "field_id";
  std::vector<ColumnSpec> columns;
  std::string treatment = "T";
  std::string outcome = "Y";
};

/// The cooperative field file: one row per field. Columns are renamed to the
/// farm-graph node names they feed. `treated` is optional so the same schema
/// covers files before and after treatment labelling; `cg_proxy` may instead
/// be derived from a companion NDVI series.
inline FieldSchema farm_field_schema() {
  FieldSchema s;
  s.columns = {
      {"sowing_date", "sowing_date", ColumnType::date, true},
      {"harvest_date", "harvest_date", ColumnType::date, true},
      {"variety", "SV", ColumnType::categorical, true},
      {"yield_kg_ha", "Y", ColumnType::real, true},
      {"ws_min_c", "WS_min", ColumnType::real, true},
      {"ws_max_c", "WS_max", ColumnType::real, true},
      {"ndwi_sowing", "SM", ColumnType::real, true},
      {"soc_g_kg", "SoC", ColumnType::real, true},
      {"clay_pct", "SP_clay", ColumnType::real, true},
      {"silt_pct", "SP_silt", ColumnType::real, true},
      {"sand_pct", "SP_sand", ColumnType::real, true},
      {"perim_area_ratio", "G_geom", ColumnType::real, true},
      {"cg_proxy", "CG", ColumnType::real, false},
      {"treated", "T", ColumnType::binary, false},
      {"lat", "lat", ColumnType::real, false},
      {"lon", "lon", ColumnType::real, false},
  };
  return s;
}

struct ObservationSeries {
  std::vector<Date> dates;
  std::vector<double> values;

  ObservationSeries() = default;
  ObservationSeries(std::vector<Date> d, std::vector<double> v) : dates(std::move(d)), values(std::move(v)) {
    if (dates.size() != values.size()) throw Error(ErrorCode::InvalidArgument, "dates and values differ in length");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) throw Error(ErrorCode::InvalidArgument, "non-finite series value");
      if (i > 0 && !(dates[i - 1] < dates[i])) {
        throw Error(ErrorCode::InvalidArgument, "series dates must be strictly increasing");
      }
    }
  }
  std::size_t size() const { return values.size(); }
};

/// Reads a `date,value` series file.
inline ObservationSeries load_series_csv(const std::string& path) {
  const auto table = csv::read(path);
  const auto dc = table.column("date");
  const auto vc = table.column("value");
  if (dc < 0) throw Error(ErrorCode::MissingColumn, "'date' in " + path, {"date"});
  if (vc < 0) throw Error(ErrorCode::MissingColumn, "'value' in " + path, {"value"});
  std::vector<std::pair<Date, double>> points;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Date d;
    double v = 0;
    if (static_cast<std::size_t>(dc) >= row.size() || !Date::try_parse(row[dc], d)) {
      throw TypeViolation(r + 1, "date", static_cast<std::size_t>(dc) < row.size() ? row[dc] : "");
    }
    if (static_cast<std::size_t>(vc) >= row.size() || !csv::parse_double(row[vc], v)) {
      throw TypeViolation(r + 1, "value", static_cast<std::size_t>(vc) < row.size() ? row[vc] : "");
    }
    points.emplace_back(d, v);
  }
  std::sort(points.begin(), points.end());
  ObservationSeries s;
  for (auto& [d, v] : points) {
    s.dates.push_back(d);
    s.values.push_back(v);
  }
  return ObservationSeries(std::move(s.dates), std::move(s.values));
}

/// Normalized difference (a - b) / (a + b) of two reflectances; NDVI is
/// (NIR, Red), NDWI is (NIR, SWIR).
inline double spectral_index(double band_a, double band_b) {
  if (band_a < 0.0 || band_b < 0.0) throw Error(ErrorCode::InvalidArgument, "reflectance must be non-negative");
  const double denom = band_a + band_b;
  if (denom == 0.0) throw Error(ErrorCode::ZeroDenominator, "band sum is zero");
  return (band_a - band_b) / denom;
}

/// Trapezoid-rule integral over the series, with time in days.
inline double trapezoid_integral(const ObservationSeries& series) {
  if (series.size() < 2) throw Error(ErrorCode::TooFewPoints, "need at least two observations");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < series.size(); ++i) {
    const double dt = static_cast<double>(series.dates[i + 1] - series.dates[i]);
    total += 0.5 * (series.values[i] + series.values[i + 1]) * dt;
  }
  return total;
}

/// Observation closest to `date` within +/- max_days; the earlier one wins
/// a tie.
inline double nearest_observation(const ObservationSeries& series, Date date, int max_days = 6) {
  std::optional<std::size_t> best;
  std::int64_t best_gap = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto gap = std::abs(series.dates[i] - date);
    if (gap <= max_days && (!best || gap < best_gap)) {
      best = i;
      best_gap = gap;
    }
  }
  if (!best) {
    throw Error(ErrorCode::NoNearbyObservation, "no observation within " + std::to_string(max_days) +
                                                    " days of " + date.iso());
  }
  return series.values[*best];
}

/// NDVI integral between two dates, both inclusive.
inline double crop_growth_proxy(const ObservationSeries& ndvi, Date sowing, Date harvest) {
  ObservationSeries window;
  for (std::size_t i = 0; i < ndvi.size(); ++i) {
    if (ndvi.dates[i] >= sowing && ndvi.dates[i] <= harvest) {
      window.dates.push_back(ndvi.dates[i]);
      window.values.push_back(ndvi.values[i]);
    }
  }
  return trapezoid_integral(window);
}

struct LoadOptions {
  /// Directory holding `<field_id>.csv` NDVI series used when cg_proxy is
  /// absent. Defaults to `ndvi/` next to the field file.
  std::optional<std::filesystem::path> ndvi_dir;
};

/// Loads a field file against `schema`. Optional columns missing from the
/// header are simply absent from the dataset, except `CG` which is then
/// derived from NDVI series when the schema carries sowing/harvest dates.
inline FieldDataset load_fields_csv(const std::string& path, const FieldSchema& schema = farm_field_schema(),
                                    const LoadOptions& options = {}) {
  const auto table = csv::read(path);
  if (table.rows.empty()) throw Error(ErrorCode::EmptyFile, "'" + path + "' has no data rows");
  const auto id_col = table.column(schema.id_header);
  if (id_col < 0) throw Error(ErrorCode::MissingColumn, "'" + schema.id_header + "'", {schema.id_header});

  std::vector<std::pair<const ColumnSpec*, std::ptrdiff_t>> present;
  for (const auto& spec : schema.columns) {
    const auto idx = table.column(spec.header);
    if (idx < 0) {
      if (spec.required) throw Error(ErrorCode::MissingColumn, "'" + spec.header + "'", {spec.header});
      continue;
    }
    present.emplace_back(&spec, idx);
  }

  std::vector<std::string> ids;
  std::vector<Column> columns;
  for (const auto& [spec, idx] : present) columns.push_back({spec->name, spec->type, {}, {}});

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t row_no = r + 1;
    if (static_cast<std::size_t>(id_col) >= row.size() || row[id_col].empty()) {
      throw TypeViolation(row_no, schema.id_header, "");
    }
    ids.push_back(row[id_col]);
    for (std::size_t c = 0; c < present.size(); ++c) {
      const auto& [spec, idx] = present[c];
      const std::string cell = static_cast<std::size_t>(idx) < row.size() ? row[idx] : std::string();
      auto& col = columns[c];
      switch (spec->type) {
        case ColumnType::categorical:
          if (cell.empty()) throw TypeViolation(row_no, spec->header, cell);
          col.labels.push_back(cell);
          break;
        case ColumnType::date: {
          Date d;
          if (!Date::try_parse(cell, d)) throw TypeViolation(row_no, spec->header, cell);
          col.values.push_back(static_cast<double>(d.days()));
          break;
        }
        case ColumnType::binary: {
          double v = 0;
          if (!csv::parse_double(cell, v) || (v != 0.0 && v != 1.0)) throw TypeViolation(row_no, spec->header, cell);
          col.values.push_back(v);
          break;
        }
        case ColumnType::real: {
          double v = 0;
          if (!csv::parse_double(cell, v)) throw TypeViolation(row_no, spec->header, cell);
          col.values.push_back(v);
          break;
        }
      }
    }
  }

  {
    std::set<std::string> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size()) throw Error(ErrorCode::InvalidArgument, "duplicate field_id in '" + path + "'");
  }

  FieldDataset ds(ids, std::move(columns), schema.treatment, schema.outcome);
  if (ds.has(schema.outcome)) {
    std::string header = schema.outcome;
    for (const auto& spec : schema.columns) {
      if (spec.name == schema.outcome) header = spec.header;
    }
    const auto y = ds.outcome();
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!(y[i] > 0.0) || !std::isfinite(y[i])) throw TypeViolation(i + 1, header, csv::format_double(y[i]));
    }
  }

  const bool derive_cg = !ds.has("CG") && ds.has("sowing_date") && ds.has("harvest_date") &&
                         std::any_of(schema.columns.begin(), schema.columns.end(),
                                     [](const ColumnSpec& s) { return s.name == "CG"; });
  if (derive_cg) {
    const auto dir = options.ndvi_dir.value_or(std::filesystem::path(path).parent_path() / "ndvi");
    std::vector<double> cg(ds.rows());
    const auto sow = ds.numeric("sowing_date");
    const auto harvest = ds.numeric("harvest_date");
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      const auto series = load_series_csv((dir / (ids[i] + ".csv")).string());
      cg[i] = crop_growth_proxy(series, Date(static_cast<std::int64_t>(sow[i])),
                                Date(static_cast<std::int64_t>(harvest[i])));
    }
    ds = ds.with_column(Column::real("CG", std::move(cg)));
  }
  return ds;
}

/// Writes the dataset back using the schema's header names; columns not in
/// the schema are written under their own names.
inline void write_fields_csv(const std::string& path, const FieldDataset& ds,
                             const FieldSchema& schema = farm_field_schema()) {
  csv::Table table;
  table.header.push_back(schema.id_header);
  std::vector<const Column*> cols;
  for (const auto& c : ds.columns()) {
    std::string header = c.name;
    for (const auto& spec : schema.columns) {
      if (spec.name == c.name) header = spec.header;
    }
    table.header.push_back(header);
    cols.push_back(&c);
  }
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    csv::Row row{ds.ids()[i]};
    for (const auto* c : cols) {
      switch (c->type) {
        case ColumnType::categorical: row.push_back(c->labels[i]); break;
        case ColumnType::date: row.push_back(Date(static_cast<std::int64_t>(c->values[i])).iso()); break;
        default: row.push_back(csv::format_double(c->values[i])); break;
      }
    }
    table.rows.push_back(std::move(row));
  }
  csv::write(path, table);
}

/// Schema inferred from a CSV header. Headers of the farm layout map to their
/// node names and types (so `write_fields_csv` output reads back); any other
/// column keeps its header as its name, with the type taken from the content:
/// the treatment is binary, all-ISO-date columns are dates, all-numeric columns
/// are real, the rest categorical.
inline FieldSchema infer_schema(const std::string& path, const std::string& treatment = "T",
                                const std::string& outcome = "Y", const std::string& id_header = "field_id") {
  const auto table = csv::read(path);
  const auto farm = farm_field_schema();
  FieldSchema s;
  s.id_header = id_header;
  s.treatment = treatment;
  s.outcome = outcome;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& h = table.header[c];
    if (h == id_header) continue;
    bool all_num = true, all_date = !table.rows.empty();
    for (const auto& row : table.rows) {
      double v;
      Date d;
      const std::string cell = c < row.size() ? row[c] : std::string();
      all_num = all_num && csv::parse_double(cell, v);
      all_date = all_date && Date::try_parse(cell, d);
    }
    ColumnType type = all_num ? ColumnType::real : all_date ? ColumnType::date : ColumnType::categorical;
    std::string name = h;
    for (const auto& known : farm.columns) {
      if (known.header == h) {
        name = known.name;
        type = known.type;
      }
    }
    if (name == treatment) type = ColumnType::binary;
    if (name == outcome) type = ColumnType::real;
    s.columns.push_back({h, name, type, true});
  }
  return s;
}

// --- feature engineering ------------------------------------------------------

/// Replaces a categorical column with one binary column per observed level
/// (levels sorted), named `<column>_<level>`, at the same position.
inline FieldDataset one_hot(const FieldDataset& ds, const std::string& column,
                            std::vector<std::string>* levels_out = nullptr) {
  const auto& src = ds.column(column);
  if (src.type != ColumnType::categorical) {
    throw Error(ErrorCode::InvalidArgument, "column '" + column + "' is not categorical", {column});
  }
  std::set<std::string> level_set(src.labels.begin(), src.labels.end());
  std::vector<std::string> levels(level_set.begin(), level_set.end());
  std::vector<Column> cols;
  for (const auto& c : ds.columns()) {
    if (c.name != column) {
      cols.push_back(c);
      continue;
    }
    for (const auto& level : levels) {
      std::vector<double> v(ds.rows());
      for (std::size_t i = 0; i < ds.rows(); ++i) v[i] = src.labels[i] == level ? 1.0 : 0.0;
      cols.push_back(Column::binary(column + "_" + level, std::move(v)));
    }
  }
  if (levels_out) *levels_out = levels;
  return FieldDataset(ds.ids(), std::move(cols), ds.treatment_name(), ds.outcome_name());
}

struct ColumnScaling {
  double mean = 0.0;
  double sd = 1.0;
  bool constant = false;
};

using Scaling = std::map<std::string, ColumnScaling>;

/// z-scores with the population standard deviation. Constant columns map to
/// zero and are flagged in the returned scaling.
inline std::pair<FieldDataset, Scaling> standardize(const FieldDataset& ds, std::span<const std::string> columns) {
  FieldDataset out = ds;
  Scaling scaling;
  for (const auto& name : columns) {
    const auto v = ds.numeric(name);
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / n);
    ColumnScaling s{mean, sd, !(sd > 0.0)};
    std::vector<double> z(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) z[i] = s.constant ? 0.0 : (v[i] - mean) / sd;
    out = out.with_values(name, std::move(z));
    scaling[name] = s;
  }
  return {std::move(out), std::move(scaling)};
}

/// Inverse of standardize. Constant columns are restored to their mean.
inline FieldDataset unstandardize(const FieldDataset& ds, const Scaling& scaling) {
  FieldDataset out = ds;
  for (const auto& [name, s] : scaling) {
    const auto z = ds.numeric(name);
    std::vector<double> v(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) v[i] = s.constant ? s.mean : z[i] * s.sd + s.mean;
    out = out.with_values(name, std::move(v));
  }
  return out;
}

}  // namespace agrocausal
