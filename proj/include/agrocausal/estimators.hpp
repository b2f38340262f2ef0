#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "agrocausal/dataset.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/forest.hpp"
#include "agrocausal/random.hpp"

namespace agrocausal {

enum class Method { linear, matching, ips, t_learner, x_learner };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::linear: return "linear";
    case Method::matching: return "matching";
    case Method::ips: return "ips";
    case Method::t_learner: return "t_learner";
    case Method::x_learner: return "x_learner";
  }
  return "linear";
}

inline Method parse_method(const std::string& s) {
  if (s == "linear") return Method::linear;
  if (s == "matching") return Method::matching;
  if (s == "ips") return Method::ips;
  if (s == "t_learner") return Method::t_learner;
  if (s == "x_learner") return Method::x_learner;
  throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + s + "'");
}

inline constexpr Method kAllMethods[] = {Method::linear, Method::matching, Method::ips, Method::t_learner,
                                         Method::x_learner};

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Two-sided normal tail probability of a z statistic.
inline double two_sided_p(double z) {
  if (std::isnan(z)) return 1.0;
  return std::clamp(2.0 * (1.0 - normal_cdf(std::abs(z))), 0.0, 1.0);
}

inline constexpr double kZ975 = 1.959963984540054;

struct EffectEstimate {
  Method method = Method::linear;
  double ate = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> p_value;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  std::vector<std::string> adjustment_columns;
};

inline nlohmann::json to_json(const EffectEstimate& e) {
  nlohmann::json j;
  j["method"] = to_string(e.method);
  j["ate"] = e.ate;
  j["ci"] = e.ci_low && e.ci_high ? nlohmann::json::array({*e.ci_low, *e.ci_high}) : nlohmann::json(nullptr);
  j["p_value"] = e.p_value ? nlohmann::json(*e.p_value) : nlohmann::json(nullptr);
  j["n_treated"] = e.n_treated;
  j["n_control"] = e.n_control;
  return j;
}

// --- helpers -----------------------------------------------------------------

inline Eigen::MatrixXd design_matrix(const FieldDataset& ds, std::span<const std::string> columns) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.rows()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto v = ds.numeric(columns[c]);
    for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = v[i];
  }
  return x;
}

/// Columns of `z` whose values vary; constant columns carry no adjustment
/// information and make the regression design singular.
inline std::vector<std::string> drop_constant_columns(const FieldDataset& ds, std::span<const std::string> z) {
  std::vector<std::string> out;
  for (const auto& name : z) {
    const auto v = ds.numeric(name);
    if (std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); })) out.push_back(name);
  }
  return out;
}

namespace detail {

struct Groups {
  std::vector<std::size_t> treated;
  std::vector<std::size_t> control;
};

inline Groups split_groups(const FieldDataset& ds) {
  Groups g;
  const auto t = ds.treatment();
  for (std::size_t i = 0; i < t.size(); ++i) (t[i] == 1.0 ? g.treated : g.control).push_back(i);
  return g;
}

inline void require_both_groups(const Groups& g) {
  if (g.treated.empty() || g.control.empty()) {
    throw Error(ErrorCode::EmptyGroup, std::to_string(g.treated.size()) + " treated, " +
                                           std::to_string(g.control.size()) + " control rows");
  }
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

inline Eigen::VectorXd entries_of(std::span<const double> v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v[idx[k]];
  return out;
}

}  // namespace detail

// --- propensity ----------------------------------------------------------------

struct PropensityOptions {
  double ridge = 1e-6;
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;
};

/// Logistic model of treatment on standardized covariates. coefficients(0)
/// is the intercept; the rest apply to the standardized columns.
struct PropensityModel {
  std::vector<std::string> columns;
  std::vector<ColumnScaling> scaling;
  Eigen::VectorXd coefficients;
  bool converged = false;
  std::size_t iterations = 0;

  std::vector<double> scores(const FieldDataset& ds) const {
    std::vector<double> out(ds.rows());
    std::vector<std::span<const double>> cols;
    for (const auto& c : columns) cols.push_back(ds.numeric(c));
    for (std::size_t i = 0; i < ds.rows(); ++i) {
      double eta = coefficients(0);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto& s = scaling[j];
        const double zv = s.constant ? 0.0 : (cols[j][i] - s.mean) / s.sd;
        eta += coefficients(static_cast<Eigen::Index>(j + 1)) * zv;
      }
      out[i] = 1.0 / (1.0 + std::exp(-eta));
    }
    return out;
  }

  /// Coefficients on the original column scale, intercept first.
  Eigen::VectorXd raw_coefficients() const {
    Eigen::VectorXd raw = coefficients;
    for (std::size_t j = 0; j < scaling.size(); ++j) {
      const auto k = static_cast<Eigen::Index>(j + 1);
      const auto& s = scaling[j];
      raw(k) = s.constant ? 0.0 : coefficients(k) / s.sd;
      raw(0) -= raw(k) * s.mean;
    }
    return raw;
  }
};

/// Logistic regression by iteratively reweighted least squares with a small
/// ridge penalty on the slopes. A fit that has not converged within the
/// iteration budget is returned with `converged == false`.
inline PropensityModel fit_propensity(const FieldDataset& ds, std::span<const std::string> z,
                                      const PropensityOptions& opt = {}) {
  const auto groups = detail::split_groups(ds);
  if (groups.treated.empty() || groups.control.empty()) {
    throw Error(ErrorCode::SingleClass, "propensity model needs both treated and control rows");
  }
  PropensityModel model;
  model.columns.assign(z.begin(), z.end());
  const auto n = static_cast<Eigen::Index>(ds.rows());
  const auto p = static_cast<Eigen::Index>(z.size()) + 1;
  Eigen::MatrixXd x(n, p);
  x.col(0).setOnes();
  for (std::size_t j = 0; j < z.size(); ++j) {
    const auto v = ds.numeric(z[j]);
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double a : v) ss += (a - mean) * (a - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size()));
    ColumnScaling s{mean, sd, !(sd > 0.0)};
    model.scaling.push_back(s);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, static_cast<Eigen::Index>(j + 1)) = s.constant ? 0.0 : (v[static_cast<std::size_t>(i)] - mean) / sd;
    }
  }
  const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(ds.treatment().data(), n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(p, p) * opt.ridge;
  penalty(0, 0) = 0.0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
    }
    // Newton step: (X'WX + P) beta_new = X'W eta + X'(t - mu)
    const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x + penalty;
    const Eigen::VectorXd rhs = x.transpose() * (w.asDiagonal() * eta + (t - mu));
    const Eigen::VectorXd next = xtwx.ldlt().solve(rhs);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    model.iterations = it;
    if (change < opt.tolerance) {
      model.converged = true;
      break;
    }
  }
  model.coefficients = beta;
  return model;
}

struct ClassifierMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;
};

/// Accuracy and F1 at `threshold` (score >= threshold predicts treated) and
/// ROC-AUC from the rank-sum statistic with tied scores given average ranks.
inline ClassifierMetrics classifier_metrics(std::span<const double> scores, std::span<const double> labels,
                                            double threshold = 0.5) {
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool actual = labels[i] == 1.0;
    const bool predicted = scores[i] >= threshold;
    pos += actual;
    tp += actual && predicted;
    fp += !actual && predicted;
    fn += actual && !predicted;
    correct += actual == predicted;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCode::SingleClass, "metrics need both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) rank_sum += avg_rank;
    }
    i = j;
  }
  ClassifierMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.f1 = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  m.roc_auc = (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  return m;
}

inline ClassifierMetrics propensity_diagnostics(const PropensityModel& model, const FieldDataset& ds,
                                                double threshold = 0.5) {
  const auto s = model.scores(ds);
  return classifier_metrics(s, ds.treatment(), threshold);
}

struct TrimResult {
  FieldDataset data;
  std::vector<std::size_t> kept;  // row indices into the input
  std::vector<double> scores;     // scores of the kept rows
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
};

/// Keeps rows with low <= score <= high.
inline TrimResult trim_overlap(const FieldDataset& ds, std::span<const double> scores, double low = 0.2,
                               double high = 0.8) {
  if (scores.size() != ds.rows()) throw Error(ErrorCode::InvalidArgument, "one score per row required");
  TrimResult r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= low && scores[i] <= high) {
      r.kept.push_back(i);
      r.scores.push_back(scores[i]);
    }
  }
  if (r.kept.empty()) throw Error(ErrorCode::EmptyAfterTrim, "no propensity score inside the overlap window");
  r.data = ds.select_rows(r.kept);
  r.n_treated = r.data.count_treated();
  r.n_control = r.kept.size() - r.n_treated;
  return r;
}

// --- estimators -----------------------------------------------------------------

/// OLS of Y on [1, T, z]; the T coefficient with a normal-approximation CI.
inline EffectEstimate ate_linear(const FieldDataset& ds, std::span<const std::string> z) {
  const auto groups = detail::split_groups(ds);
  const auto n = static_cast<Eigen::Index>(ds.rows());
  const auto p = static_cast<Eigen::Index>(z.size()) + 2;
  std::vector<std::string> names{"intercept", ds.treatment_name()};
  names.insert(names.end(), z.begin(), z.end());
  Eigen::MatrixXd x(n, p);
  x.col(0).setOnes();
  x.col(1) = Eigen::Map<const Eigen::VectorXd>(ds.treatment().data(), n);
  if (!z.empty()) x.rightCols(p - 2) = design_matrix(ds, z);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ds.outcome().data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p) {
    std::vector<std::string> collinear;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < p; ++k) collinear.push_back(names[static_cast<std::size_t>(perm(k))]);
    std::string text;
    for (const auto& c : collinear) text += (text.empty() ? "" : ", ") + c;
    throw Error(ErrorCode::RankDeficient, "design matrix is collinear in: " + text, collinear);
  }
  if (n <= p) throw Error(ErrorCode::TooFewRows, "no residual degrees of freedom");
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd resid = y - x * beta;
  const double sigma2 = resid.squaredNorm() / static_cast<double>(n - p);
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const double se = std::sqrt(std::max(sigma2 * xtx_inv(1, 1), 0.0));

  EffectEstimate e;
  e.method = Method::linear;
  e.ate = beta(1);
  e.ci_low = e.ate - kZ975 * se;
  e.ci_high = e.ate + kZ975 * se;
  e.p_value = se > 0.0 ? two_sided_p(e.ate / se) : (e.ate == 0.0 ? 1.0 : 0.0);
  e.n_treated = groups.treated.size();
  e.n_control = groups.control.size();
  e.adjustment_columns.assign(z.begin(), z.end());
  return e;
}

namespace detail {

// Exact 1-nearest-neighbour search (squared Euclidean) with lowest-index
// tie-breaking. Distances are screened in blocks with one matrix product;
// every candidate within rounding distance of the screened minimum is then
// re-measured exactly, so the result equals a plain exhaustive scan.
class NearestNeighbour {
 public:
  NearestNeighbour(const Eigen::MatrixXd& points, std::vector<std::size_t> candidates)
      : points_(points), ids_(std::move(candidates)) {
    if (ids_.empty()) throw Error(ErrorCode::EmptyGroup, "no candidates to match against");
    cand_.resize(static_cast<Eigen::Index>(ids_.size()), points.cols());
    for (std::size_t k = 0; k < ids_.size(); ++k) {
      cand_.row(static_cast<Eigen::Index>(k)) = points.row(static_cast<Eigen::Index>(ids_[k]));
    }
    norms_ = cand_.rowwise().squaredNorm();
    max_norm_ = norms_.size() ? norms_.maxCoeff() : 0.0;
  }

  /// Nearest candidate for each of the given rows of the construction matrix.
  std::vector<std::size_t> match(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> out(rows.size());
    const auto m = static_cast<Eigen::Index>(ids_.size());
    for (std::size_t b = 0; b < rows.size(); b += kBlock) {
      const std::size_t count = std::min(kBlock, rows.size() - b);
      Eigen::MatrixXd q(static_cast<Eigen::Index>(count), points_.cols());
      for (std::size_t r = 0; r < count; ++r) q.row(static_cast<Eigen::Index>(r)) = points_.row(static_cast<Eigen::Index>(rows[b + r]));
      // screened distance minus the query norm, one column per query: |c|^2 - 2 c.q
      Eigen::MatrixXd screen = -2.0 * (cand_ * q.transpose());
      screen.colwise() += norms_;
      for (std::size_t r = 0; r < count; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        const double qn = q.row(ri).squaredNorm();
        const double* col = screen.col(ri).data();
        const double lo = *std::min_element(col, col + m);
        const double cut = lo + 1e-9 * (qn + max_norm_);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_id = std::numeric_limits<std::size_t>::max();
        for (Eigen::Index k = 0; k < m; ++k) {
          if (col[k] > cut) continue;
          const double d = (q.row(ri) - cand_.row(k)).squaredNorm();
          const auto id = ids_[static_cast<std::size_t>(k)];
          if (d < best || (d == best && id < best_id)) {
            best = d;
            best_id = id;
          }
        }
        out[b + r] = best_id;
      }
    }
    return out;
  }

  std::size_t query(std::size_t row) const { return match(std::span<const std::size_t>(&row, 1)).front(); }

 private:
  static constexpr std::size_t kBlock = 256;

  const Eigen::MatrixXd& points_;
  std::vector<std::size_t> ids_;
  Eigen::MatrixXd cand_;
  Eigen::VectorXd norms_;
  double max_norm_ = 0.0;
};

}  // namespace detail

/// 1-nearest-neighbour matching with replacement on standardized covariates
/// (Euclidean), in both directions, averaging the matched differences over
/// all units.
inline EffectEstimate ate_matching(const FieldDataset& ds, std::span<const std::string> z) {
  const auto groups = detail::split_groups(ds);
  detail::require_both_groups(groups);
  const std::vector<std::string> cols(z.begin(), z.end());
  const auto scaled = standardize(ds, cols).first;
  const Eigen::MatrixXd x = design_matrix(scaled, cols);
  const detail::NearestNeighbour to_control(x, groups.control);
  const detail::NearestNeighbour to_treated(x, groups.treated);
  const auto matched_control = to_control.match(groups.treated);
  const auto matched_treated = to_treated.match(groups.control);
  const auto y = ds.outcome();
  double total = 0.0;
  for (std::size_t k = 0; k < groups.treated.size(); ++k) total += y[groups.treated[k]] - y[matched_control[k]];
  for (std::size_t k = 0; k < groups.control.size(); ++k) total += y[matched_treated[k]] - y[groups.control[k]];

  EffectEstimate e;
  e.method = Method::matching;
  e.ate = total / static_cast<double>(ds.rows());
  e.n_treated = groups.treated.size();
  e.n_control = groups.control.size();
  e.adjustment_columns = cols;
  return e;
}

/// Self-normalized inverse-propensity weighting with the given scores.
inline double ips_contrast(std::span<const double> t, std::span<const double> y, std::span<const double> e) {
  double s1 = 0.0, w1 = 0.0, s0 = 0.0, w0 = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0) {
      s1 += y[i] / e[i];
      w1 += 1.0 / e[i];
    } else {
      s0 += y[i] / (1.0 - e[i]);
      w0 += 1.0 / (1.0 - e[i]);
    }
  }
  if (w1 == 0.0 || w0 == 0.0) throw Error(ErrorCode::EmptyGroup, "weighting needs both groups");
  return s1 / w1 - s0 / w0;
}

struct IpsOptions {
  bool trim = true;
  double trim_low = 0.2;
  double trim_high = 0.8;
  PropensityOptions propensity;
};

/// Fits the propensity model, trims to the overlap window and applies
/// self-normalized weighting to the retained rows.
inline EffectEstimate ate_ips(const FieldDataset& ds, std::span<const std::string> z, const IpsOptions& opt = {}) {
  detail::require_both_groups(detail::split_groups(ds));
  const auto model = fit_propensity(ds, z, opt.propensity);
  auto scores = model.scores(ds);
  FieldDataset used = ds;
  if (opt.trim) {
    auto trimmed = trim_overlap(ds, scores, opt.trim_low, opt.trim_high);
    used = std::move(trimmed.data);
    scores = std::move(trimmed.scores);
  }
  const auto groups = detail::split_groups(used);
  detail::require_both_groups(groups);
  EffectEstimate e;
  e.method = Method::ips;
  e.ate = ips_contrast(used.treatment(), used.outcome(), scores);
  e.n_treated = groups.treated.size();
  e.n_control = groups.control.size();
  e.adjustment_columns.assign(z.begin(), z.end());
  return e;
}

namespace detail {

struct StageOne {
  Groups groups;
  Eigen::MatrixXd x;
  Eigen::VectorXd mu0;  // control-outcome model on every row
  Eigen::VectorXd mu1;  // treated-outcome model on every row
};

inline ForestParams child_params(const ForestParams& p, std::uint64_t role) {
  ForestParams c = p;
  c.seed = derive_seed(p.seed, role);
  return c;
}

inline StageOne fit_stage_one(const FieldDataset& ds, std::span<const std::string> z, const ForestParams& params) {
  StageOne s;
  s.groups = split_groups(ds);
  for (const auto* g : {&s.groups.treated, &s.groups.control}) {
    if (g->size() < params.min_leaf || g->empty()) {
      throw Error(ErrorCode::TooFewRows, "each group needs at least min_leaf rows");
    }
  }
  s.x = design_matrix(ds, z);
  const auto y = ds.outcome();
  const auto f0 = fit_forest(rows_of(s.x, s.groups.control), entries_of(y, s.groups.control), child_params(params, 0));
  const auto f1 = fit_forest(rows_of(s.x, s.groups.treated), entries_of(y, s.groups.treated), child_params(params, 1));
  s.mu0 = f0.predict(s.x);
  s.mu1 = f1.predict(s.x);
  return s;
}

}  // namespace detail

/// Separate outcome forests per arm; the ATE is the mean predicted contrast
/// over all rows.
inline EffectEstimate ate_t_learner(const FieldDataset& ds, std::span<const std::string> z,
                                    const ForestParams& params = {}) {
  const auto s = detail::fit_stage_one(ds, z, params);
  EffectEstimate e;
  e.method = Method::t_learner;
  e.ate = (s.mu1 - s.mu0).mean();
  e.n_treated = s.groups.treated.size();
  e.n_control = s.groups.control.size();
  e.adjustment_columns.assign(z.begin(), z.end());
  return e;
}

/// X-learner with caller-supplied propensity scores (one per row).
inline EffectEstimate ate_x_learner_with_scores(const FieldDataset& ds, std::span<const std::string> z,
                                                const ForestParams& params, std::span<const double> scores) {
  if (scores.size() != ds.rows()) throw Error(ErrorCode::InvalidArgument, "one score per row required");
  const auto s = detail::fit_stage_one(ds, z, params);
  const auto y = ds.outcome();
  Eigen::VectorXd d1(static_cast<Eigen::Index>(s.groups.treated.size()));
  for (std::size_t k = 0; k < s.groups.treated.size(); ++k) {
    const auto i = s.groups.treated[k];
    d1(static_cast<Eigen::Index>(k)) = y[i] - s.mu0(static_cast<Eigen::Index>(i));
  }
  Eigen::VectorXd d0(static_cast<Eigen::Index>(s.groups.control.size()));
  for (std::size_t k = 0; k < s.groups.control.size(); ++k) {
    const auto i = s.groups.control[k];
    d0(static_cast<Eigen::Index>(k)) = s.mu1(static_cast<Eigen::Index>(i)) - y[i];
  }
  const auto tau1 = fit_forest(detail::rows_of(s.x, s.groups.treated), d1, detail::child_params(params, 2));
  const auto tau0 = fit_forest(detail::rows_of(s.x, s.groups.control), d0, detail::child_params(params, 3));
  const Eigen::VectorXd t1 = tau1.predict(s.x);
  const Eigen::VectorXd t0 = tau0.predict(s.x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.x.rows(); ++i) {
    const double e = scores[static_cast<std::size_t>(i)];
    total += e * t0(i) + (1.0 - e) * t1(i);
  }
  EffectEstimate est;
  est.method = Method::x_learner;
  est.ate = total / static_cast<double>(s.x.rows());
  est.n_treated = s.groups.treated.size();
  est.n_control = s.groups.control.size();
  est.adjustment_columns.assign(z.begin(), z.end());
  return est;
}

inline EffectEstimate ate_x_learner(const FieldDataset& ds, std::span<const std::string> z,
                                    const ForestParams& params = {}, const PropensityOptions& popt = {}) {
  const auto scores = fit_propensity(ds, z, popt).scores(ds);
  return ate_x_learner_with_scores(ds, z, params, scores);
}

// --- dispatch -------------------------------------------------------------------

struct EstimatorSpec {
  Method method = Method::linear;
  ForestParams forest;
  IpsOptions ips;
};

inline EffectEstimate estimate_effect(const EstimatorSpec& spec, const FieldDataset& ds,
                                      std::span<const std::string> z) {
  switch (spec.method) {
    case Method::linear: return ate_linear(ds, z);
    case Method::matching: return ate_matching(ds, z);
    case Method::ips: return ate_ips(ds, z, spec.ips);
    case Method::t_learner: return ate_t_learner(ds, z, spec.forest);
    case Method::x_learner: return ate_x_learner(ds, z, spec.forest, spec.ips.propensity);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method");
}

/// Point-estimate callable used by the bootstrap and the refuters.
using EffectFn = std::function<double(const FieldDataset&, std::span<const std::string>)>;

inline EffectFn effect_fn(const EstimatorSpec& spec) {
  return [spec](const FieldDataset& ds, std::span<const std::string> z) { return estimate_effect(spec, ds, z).ate; };
}

}  // namespace agrocausal
