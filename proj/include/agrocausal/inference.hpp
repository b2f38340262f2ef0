#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrocausal/csv.hpp"
#include "agrocausal/dataset.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/estimators.hpp"
#include "agrocausal/random.hpp"

namespace agrocausal {

/// Linear-interpolation quantile (type 7) of an ascending-sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline std::pair<double, double> mean_and_sd(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  if (v.empty()) return {0.0, 0.0};
  // shifted by the first value so identical inputs give an exact mean
  const double shift = v.front();
  double d = 0.0;
  for (double x : v) d += x - shift;
  const double m = shift + d / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

/// Failed replicates are dropped; more than this share failing is an error.
inline constexpr double kMaxFailureShare = 0.10;

namespace detail {

// Runs `count` replicates, catching library errors per replicate. Returns
// the successful estimates in replicate order.
template <typename Replicate>
std::vector<double> run_replicates(std::size_t count, Replicate&& replicate, std::size_t* failures_out) {
  std::vector<std::optional<double>> slots(count);
  parallel_for(count, [&](std::size_t r) {
    try {
      slots[r] = replicate(r);
    } catch (const Error&) {
      slots[r].reset();
    }
  });
  std::vector<double> out;
  std::size_t failures = 0;
  std::optional<std::size_t> first_failure;
  for (std::size_t r = 0; r < count; ++r) {
    if (slots[r]) {
      out.push_back(*slots[r]);
    } else {
      ++failures;
      if (!first_failure) first_failure = r;
    }
  }
  if (static_cast<double>(failures) > kMaxFailureShare * static_cast<double>(count)) {
    throw Error(ErrorCode::EstimatorFailure, std::to_string(failures) + " of " + std::to_string(count) +
                                                 " replicates failed (first at replicate " +
                                                 std::to_string(*first_failure) + ")");
  }
  if (failures_out) *failures_out = failures;
  return out;
}

}  // namespace detail

struct BootstrapResult {
  std::vector<double> replicate_ates;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  std::size_t failed = 0;
};

/// Percentile bootstrap over row resamples of the same size. The p-value is
/// 2 * min(share <= 0, share >= 0), clipped to [1/B, 1].
inline BootstrapResult bootstrap_effect(const EffectFn& estimator, const FieldDataset& ds,
                                        std::span<const std::string> z, std::size_t replicates = 1000,
                                        std::uint64_t seed = 0) {
  if (replicates == 0) throw Error(ErrorCode::InsufficientReplicates, "bootstrap needs at least one replicate");
  const std::size_t n = ds.rows();
  BootstrapResult res;
  res.replicate_ates = detail::run_replicates(
      replicates,
      [&](std::size_t r) {
        Rng rng = make_rng(seed, r);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = uniform_index(rng, n);
        return estimator(ds.select_rows(idx), z);
      },
      &res.failed);
  auto sorted = res.replicate_ates;
  std::sort(sorted.begin(), sorted.end());
  res.ci_low = sorted_quantile(sorted, 0.025);
  res.ci_high = sorted_quantile(sorted, 0.975);
  const double b = static_cast<double>(sorted.size());
  const double le = static_cast<double>(std::count_if(sorted.begin(), sorted.end(), [](double v) { return v <= 0.0; }));
  const double ge = static_cast<double>(std::count_if(sorted.begin(), sorted.end(), [](double v) { return v >= 0.0; }));
  res.p_value = std::clamp(2.0 * std::min(le, ge) / b, 1.0 / b, 1.0);
  return res;
}

/// Point estimate with bootstrap CI and p-value attached.
inline EffectEstimate with_bootstrap(EffectEstimate e, const BootstrapResult& b) {
  e.ci_low = b.ci_low;
  e.ci_high = b.ci_high;
  e.p_value = b.p_value;
  return e;
}

// --- refutations ---------------------------------------------------------------------

enum class Refuter { placebo, rcc, rsr, ucc };

inline const char* to_string(Refuter r) {
  switch (r) {
    case Refuter::placebo: return "placebo";
    case Refuter::rcc: return "rcc";
    case Refuter::rsr: return "rsr";
    case Refuter::ucc: return "ucc";
  }
  return "placebo";
}

inline Refuter parse_refuter(const std::string& s) {
  if (s == "placebo") return Refuter::placebo;
  if (s == "rcc") return Refuter::rcc;
  if (s == "rsr") return Refuter::rsr;
  if (s == "ucc") return Refuter::ucc;
  throw Error(ErrorCode::InvalidArgument, "unknown refuter '" + s + "'");
}

inline constexpr double kRefutationAlpha = 0.05;

struct RefutationReport {
  Refuter test = Refuter::placebo;
  double original_effect = 0.0;
  double new_effect = 0.0;  // mean over replicates
  double replicate_sd = 0.0;
  double p_value = 1.0;
  bool passed = true;  // p_value >= 0.05
  std::size_t replicates = 0;
  std::size_t failed = 0;
};

inline nlohmann::json to_json(const RefutationReport& r) {
  return {{"test", to_string(r.test)},       {"original_effect", r.original_effect},
          {"new_effect", r.new_effect},      {"replicate_sd", r.replicate_sd},
          {"p_value", r.p_value},            {"passed", r.passed},
          {"replicates", r.replicates},      {"failed", r.failed}};
}

namespace detail {

// Two-sided tail probability of `target` under a normal fitted to the
// replicates. A degenerate (zero-spread) distribution gives 1 when the
// target coincides with it and 0 otherwise.
inline double normal_tail_p(double target, double mean, double sd) {
  if (!(sd > 0.0)) {
    const double scale = std::max({std::abs(target), std::abs(mean), 1.0});
    return std::abs(target - mean) <= 1e-9 * scale ? 1.0 : 0.0;
  }
  return two_sided_p((target - mean) / sd);
}

inline RefutationReport summarize(Refuter test, double original, double target, std::vector<double> reps,
                                  std::size_t failed) {
  RefutationReport r;
  r.test = test;
  r.original_effect = original;
  r.replicates = reps.size();
  r.failed = failed;
  const auto [m, sd] = mean_and_sd(reps);
  r.new_effect = m;
  r.replicate_sd = sd;
  r.p_value = normal_tail_p(target, m, sd);
  r.passed = r.p_value >= kRefutationAlpha;
  return r;
}

inline void require_replicates(std::size_t k) {
  if (k < 2) throw Error(ErrorCode::InsufficientReplicates, "need at least two replicates for a spread");
}

}  // namespace detail

/// Permutes the treatment column in each replicate; passes when the placebo
/// estimates are consistent with zero.
inline RefutationReport refute_placebo(const EffectFn& estimator, const FieldDataset& ds,
                                       std::span<const std::string> z, std::size_t replicates = 100,
                                       std::uint64_t seed = 0) {
  detail::require_replicates(replicates);
  const double original = estimator(ds, z);
  const auto t = ds.treatment();
  std::size_t failed = 0;
  auto reps = detail::run_replicates(
      replicates,
      [&](std::size_t r) {
        Rng rng = make_rng(seed, r);
        std::vector<double> permuted(t.begin(), t.end());
        shuffle_in_place(permuted, rng);
        return estimator(ds.with_values(ds.treatment_name(), std::move(permuted)), z);
      },
      &failed);
  return detail::summarize(Refuter::placebo, original, 0.0, std::move(reps), failed);
}

inline constexpr const char* kRandomCommonCause = "random_common_cause";

/// Adds an independent standard-normal covariate to the adjustment set in
/// each replicate; passes when the original estimate is consistent with the
/// replicate distribution.
inline RefutationReport refute_rcc(const EffectFn& estimator, const FieldDataset& ds, std::span<const std::string> z,
                                   std::size_t replicates = 100, std::uint64_t seed = 0) {
  detail::require_replicates(replicates);
  const double original = estimator(ds, z);
  std::vector<std::string> z_plus(z.begin(), z.end());
  z_plus.emplace_back(kRandomCommonCause);
  std::size_t failed = 0;
  auto reps = detail::run_replicates(
      replicates,
      [&](std::size_t r) {
        Rng rng = make_rng(seed, r);
        std::vector<double> noise(ds.rows());
        for (auto& v : noise) v = standard_normal(rng);
        return estimator(ds.with_column(Column::real(kRandomCommonCause, std::move(noise))), z_plus);
      },
      &failed);
  return detail::summarize(Refuter::rcc, original, original, std::move(reps), failed);
}

/// Re-estimates on uniform subsamples of floor(keep_fraction * n) rows drawn
/// without replacement (row order preserved).
inline RefutationReport refute_rsr(const EffectFn& estimator, const FieldDataset& ds, std::span<const std::string> z,
                                   double keep_fraction = 0.8, std::size_t replicates = 100, std::uint64_t seed = 0) {
  detail::require_replicates(replicates);
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "keep_fraction must lie in (0, 1]");
  }
  const std::size_t n = ds.rows();
  const auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(n)));
  if (keep < 10) throw Error(ErrorCode::TooFewRows, "subsample of " + std::to_string(keep) + " rows (< 10)");
  const double original = estimator(ds, z);
  std::size_t failed = 0;
  auto reps = detail::run_replicates(
      replicates,
      [&](std::size_t r) {
        Rng rng = make_rng(seed, r);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        // partial Fisher-Yates selects `keep` rows uniformly
        for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
        idx.resize(keep);
        std::sort(idx.begin(), idx.end());
        return estimator(ds.select_rows(idx), z);
      },
      &failed);
  return detail::summarize(Refuter::rsr, original, original, std::move(reps), failed);
}

struct UccGrid {
  std::vector<double> alpha_t{0.0, 0.125, 0.25, 0.375, 0.5};  // treatment flip probability
  std::vector<double> alpha_y{0.0, 0.25, 0.5, 0.75, 1.0};     // outcome shift, in outcome sd
};

struct UccHeatmap {
  std::vector<double> alpha_t;
  std::vector<double> alpha_y;
  std::vector<std::vector<double>> ate;  // [alpha_t index][alpha_y index]
  double original_effect = 0.0;
  double mean_ate = 0.0;
  std::size_t failed = 0;
};

inline nlohmann::json to_json(const UccHeatmap& h) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& row : h.ate) {
    nlohmann::json r = nlohmann::json::array();
    for (double v : row) r.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    grid.push_back(r);
  }
  return {{"test", "ucc"},        {"alpha_t", h.alpha_t},   {"alpha_y", h.alpha_y},
          {"ate_grid", grid},     {"mean_ate", h.mean_ate}, {"original_effect", h.original_effect},
          {"failed_cells", h.failed}};
}

/// CSV matrix: rows are alpha_t, columns alpha_y.
inline void write_heatmap_csv(const std::string& path, const UccHeatmap& h) {
  csv::Table t;
  t.header.push_back("alpha_t\\alpha_y");
  for (double a : h.alpha_y) t.header.push_back(csv::format_double(a));
  for (std::size_t i = 0; i < h.alpha_t.size(); ++i) {
    csv::Row row{csv::format_double(h.alpha_t[i])};
    for (double v : h.ate[i]) row.push_back(std::isnan(v) ? "" : csv::format_double(v));
    t.rows.push_back(std::move(row));
  }
  csv::write(path, t);
}

/// Injects a binary latent confounder U ~ Bernoulli(0.5) that, per cell,
/// overwrites the treatment with U with probability alpha_t and shifts the
/// outcome by alpha_y * sd(Y) * (2U - 1). U is never added to the adjustment
/// set. The same latent draw is shared by every cell.
inline UccHeatmap refute_ucc(const EffectFn& estimator, const FieldDataset& ds, std::span<const std::string> z,
                             const UccGrid& grid = {}, std::uint64_t seed = 0) {
  if (grid.alpha_t.empty() || grid.alpha_y.empty() || grid.alpha_t.front() != 0.0 || grid.alpha_y.front() != 0.0) {
    throw Error(ErrorCode::InvalidArgument, "the confounding grid must start at (0, 0)");
  }
  const std::size_t n = ds.rows();
  Rng rng = make_rng(seed, 0);
  std::vector<double> latent(n), flip(n);
  for (std::size_t i = 0; i < n; ++i) {
    latent[i] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    flip[i] = uniform01(rng);
  }
  const auto t = ds.treatment();
  const auto y = ds.outcome();
  const double y_sd = [&] {
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(n));
  }();

  UccHeatmap h;
  h.alpha_t = grid.alpha_t;
  h.alpha_y = grid.alpha_y;
  h.original_effect = estimator(ds, z);
  const std::size_t cols = grid.alpha_y.size();
  const std::size_t cells = grid.alpha_t.size() * cols;
  std::vector<std::optional<double>> out(cells);
  parallel_for(cells, [&](std::size_t c) {
    const double at = grid.alpha_t[c / cols];
    const double ay = grid.alpha_y[c % cols];
    if (at == 0.0 && ay == 0.0) {
      out[c] = h.original_effect;
      return;
    }
    std::vector<double> t_new(t.begin(), t.end());
    std::vector<double> y_new(y.begin(), y.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (flip[i] < at) t_new[i] = latent[i];
      y_new[i] += ay * y_sd * (2.0 * latent[i] - 1.0);
    }
    try {
      out[c] = estimator(ds.with_values(ds.treatment_name(), std::move(t_new)).with_values(ds.outcome_name(), std::move(y_new)), z);
    } catch (const Error&) {
      out[c].reset();
    }
  });
  h.ate.assign(grid.alpha_t.size(), std::vector<double>(cols, std::nan("")));
  double total = 0.0;
  std::size_t ok = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (!out[c]) {
      ++h.failed;
      continue;
    }
    h.ate[c / cols][c % cols] = *out[c];
    total += *out[c];
    ++ok;
  }
  if (static_cast<double>(h.failed) > kMaxFailureShare * static_cast<double>(cells)) {
    throw Error(ErrorCode::EstimatorFailure, std::to_string(h.failed) + " of " + std::to_string(cells) + " cells failed");
  }
  h.mean_ate = total / static_cast<double>(ok);
  return h;
}

}  // namespace agrocausal
