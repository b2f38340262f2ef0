#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "agrocausal/error.hpp"
#include "agrocausal/random.hpp"

namespace agrocausal {

struct ForestParams {
  std::size_t n_trees = 200;
  std::size_t min_leaf = 5;
  std::optional<std::size_t> max_depth;           // unlimited when empty
  std::optional<std::size_t> features_per_split;  // ceil(p / 3) when empty
  std::uint64_t seed = 0;
  bool bootstrap = true;
  // Candidate thresholds per feature. Features with at most this many
  // distinct values are split exactly between every pair of adjacent values.
  std::size_t max_bins = 64;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  std::size_t count = 0;  // training rows (with bootstrap multiplicity)
};

class RegressionTree {
 public:
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  template <typename Row>
  double predict(const Row& x) const {
    int i = 0;
    while (nodes_[i].feature >= 0) {
      i = x(nodes_[i].feature) <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
    }
    return nodes_[i].value;
  }

  double predict(const double* x) const {
    int i = 0;
    while (nodes_[i].feature >= 0) {
      i = x[nodes_[i].feature] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
    }
    return nodes_[i].value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }

 private:
  std::vector<TreeNode> nodes_;
};

/// Bagged CART regression trees. Immutable once fitted; prediction is the
/// mean of the tree predictions.
class ForestModel {
 public:
  ForestModel(std::vector<RegressionTree> trees, ForestParams params, std::size_t n_features)
      : trees_(std::move(trees)), params_(params), n_features_(n_features) {}

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.predict(x);
    return s / static_cast<double>(trees_.size());
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != n_features_) {
      throw Error(ErrorCode::InvalidArgument, "feature count differs from training data");
    }
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = x;
    const auto p = static_cast<std::size_t>(x.cols());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
    for (const auto& t : trees_) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) += t.predict(rows.data() + static_cast<std::size_t>(i) * p);
    }
    return out / static_cast<double>(trees_.size());
  }

  const std::vector<RegressionTree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }

 private:
  std::vector<RegressionTree> trees_;
  ForestParams params_;
  std::size_t n_features_;
};

namespace detail {

struct BinnedFeatures {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<std::vector<double>> cuts;  // per feature, ascending
  std::vector<std::uint8_t> codes;        // column-major n x p

  std::uint8_t code(std::size_t row, std::size_t f) const { return codes[f * n + row]; }
};

inline BinnedFeatures bin_features(const Eigen::MatrixXd& x, std::size_t max_bins) {
  BinnedFeatures b;
  b.n = static_cast<std::size_t>(x.rows());
  b.p = static_cast<std::size_t>(x.cols());
  b.cuts.resize(b.p);
  b.codes.resize(b.n * b.p);
  const std::size_t bins = std::clamp<std::size_t>(max_bins, 2, 256);
  std::vector<double> sorted(b.n);
  for (std::size_t f = 0; f < b.p; ++f) {
    for (std::size_t i = 0; i < b.n; ++i) sorted[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct;
    for (double v : sorted) {
      if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
    }
    auto& cuts = b.cuts[f];
    if (distinct.size() <= bins) {
      for (std::size_t k = 0; k + 1 < distinct.size(); ++k) cuts.push_back(0.5 * (distinct[k] + distinct[k + 1]));
    } else {
      // quantile positions, snapped to the midpoint of the gap above them
      for (std::size_t k = 1; k < bins; ++k) {
        const std::size_t pos = k * b.n / bins;
        const double v = sorted[pos - 1];
        const auto it = std::upper_bound(distinct.begin(), distinct.end(), v);
        if (it == distinct.end()) continue;
        const double cut = 0.5 * (v + *it);
        if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
      }
    }
    for (std::size_t i = 0; i < b.n; ++i) {
      const double v = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
      b.codes[f * b.n + i] =
          static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
    }
  }
  return b;
}

inline RegressionTree grow_tree(const BinnedFeatures& bins, const std::vector<double>& y, double offset,
                                const ForestParams& params, std::size_t mtry, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = bins.n;
  std::vector<std::size_t> rows(n);
  if (params.bootstrap) {
    for (auto& r : rows) r = uniform_index(rng, n);
    std::sort(rows.begin(), rows.end());
  } else {
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }

  std::vector<TreeNode> nodes;
  struct Pending {
    int node;
    std::size_t begin, end, depth;
  };
  std::vector<Pending> stack;
  auto make_node = [&](std::size_t begin, std::size_t end) {
    double s = 0.0;
    for (std::size_t k = begin; k < end; ++k) s += y[rows[k]];
    TreeNode node;
    node.count = end - begin;
    node.value = s / static_cast<double>(node.count) + offset;
    nodes.push_back(node);
    return static_cast<int>(nodes.size() - 1);
  };
  stack.push_back({make_node(0, n), 0, n, 0});

  std::vector<std::size_t> features(bins.p);
  std::iota(features.begin(), features.end(), std::size_t{0});
  std::vector<std::size_t> scratch(n);
  std::vector<double> hist_sum(256);
  std::vector<std::size_t> hist_count(256);

  while (!stack.empty()) {
    const Pending cur = stack.back();
    stack.pop_back();
    const std::size_t count = cur.end - cur.begin;
    if (count < 2 * params.min_leaf) continue;
    if (params.max_depth && cur.depth >= *params.max_depth) continue;

    double total = 0.0;
    double lo = y[rows[cur.begin]], hi = lo;
    for (std::size_t k = cur.begin; k < cur.end; ++k) {
      const double v = y[rows[k]];
      total += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (lo == hi) continue;
    const double parent_score = total * total / static_cast<double>(count);

    // partial Fisher-Yates: first mtry entries are this node's candidates
    for (std::size_t k = 0; k < mtry; ++k) std::swap(features[k], features[k + uniform_index(rng, bins.p - k)]);

    double best_gain = 0.0;
    int best_feature = -1;
    std::size_t best_bin = 0;
    for (std::size_t k = 0; k < mtry; ++k) {
      const std::size_t f = features[k];
      const std::size_t nbins = bins.cuts[f].size() + 1;
      if (nbins < 2) continue;
      std::fill_n(hist_sum.begin(), nbins, 0.0);
      std::fill_n(hist_count.begin(), nbins, 0);
      for (std::size_t r = cur.begin; r < cur.end; ++r) {
        const auto c = bins.code(rows[r], f);
        hist_sum[c] += y[rows[r]];
        ++hist_count[c];
      }
      double left_sum = 0.0;
      std::size_t left_count = 0;
      for (std::size_t b = 0; b + 1 < nbins; ++b) {
        left_sum += hist_sum[b];
        left_count += hist_count[b];
        if (hist_count[b] == 0) continue;
        const std::size_t right_count = count - left_count;
        if (left_count < params.min_leaf) continue;
        if (right_count < params.min_leaf) break;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(left_count) +
                            right_sum * right_sum / static_cast<double>(right_count) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_bin = b;
        }
      }
    }
    if (best_feature < 0 || !(best_gain > 1e-12 * (hi - lo) * (hi - lo))) continue;

    const auto f = static_cast<std::size_t>(best_feature);
    // stable partition through the scratch buffer
    std::size_t split = cur.begin, spill = 0;
    for (std::size_t k = cur.begin; k < cur.end; ++k) {
      if (bins.code(rows[k], f) <= best_bin) {
        rows[split++] = rows[k];
      } else {
        scratch[spill++] = rows[k];
      }
    }
    std::copy_n(scratch.begin(), spill, rows.begin() + static_cast<std::ptrdiff_t>(split));
    const int left = make_node(cur.begin, split);
    const int right = make_node(split, cur.end);
    auto& parent = nodes[static_cast<std::size_t>(cur.node)];
    parent.feature = best_feature;
    parent.threshold = bins.cuts[f][best_bin];
    parent.left = left;
    parent.right = right;
    stack.push_back({right, split, cur.end, cur.depth + 1});
    stack.push_back({left, cur.begin, split, cur.depth + 1});
  }
  return RegressionTree(std::move(nodes));
}

}  // namespace detail

/// Fits a random forest: `n_trees` CART trees, each on a bootstrap sample of
/// the rows, choosing the variance-reducing split among a random subset of
/// features at every node. Deterministic for fixed params; tree t uses the
/// seed derived from (params.seed, t).
inline ForestModel fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = static_cast<std::size_t>(x.cols());
  if (static_cast<std::size_t>(y.size()) != n) throw Error(ErrorCode::InvalidArgument, "x and y differ in rows");
  if (n == 0 || n < params.min_leaf) {
    throw Error(ErrorCode::TooFewRows, std::to_string(n) + " rows, min_leaf is " + std::to_string(params.min_leaf));
  }
  if (params.n_trees == 0 || params.min_leaf == 0) {
    throw Error(ErrorCode::InvalidArgument, "n_trees and min_leaf must be positive");
  }
  const double offset = y.mean();
  std::vector<double> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = y(static_cast<Eigen::Index>(i)) - offset;

  const std::size_t mtry =
      p == 0 ? 0 : std::clamp<std::size_t>(params.features_per_split.value_or((p + 2) / 3), 1, p);
  const auto bins = detail::bin_features(x, params.max_bins);

  std::vector<std::optional<RegressionTree>> grown(params.n_trees);
  parallel_for(params.n_trees, [&](std::size_t t) {
    grown[t] = detail::grow_tree(bins, centered, offset, params, mtry, derive_seed(params.seed, t));
  });
  std::vector<RegressionTree> trees;
  trees.reserve(params.n_trees);
  for (auto& t : grown) trees.push_back(std::move(*t));
  return ForestModel(std::move(trees), params, p);
}

}  // namespace agrocausal
