#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrocausal/causal_graph.hpp"
#include "agrocausal/dataset.hpp"
#include "agrocausal/error.hpp"
#include "agrocausal/random.hpp"

namespace agrocausal {

enum class Link { identity, bernoulli_sigmoid, categorical_softmax };

inline Link parse_link(const std::string& s) {
  if (s == "identity") return Link::identity;
  if (s == "bernoulli-sigmoid") return Link::bernoulli_sigmoid;
  if (s == "categorical-softmax") return Link::categorical_softmax;
  throw Error(ErrorCode::Parse, "unknown link '" + s + "'");
}

inline const char* to_string(Link l) {
  switch (l) {
    case Link::identity: return "identity";
    case Link::bernoulli_sigmoid: return "bernoulli-sigmoid";
    case Link::categorical_softmax: return "categorical-softmax";
  }
  return "identity";
}

/// Structural equation of one node.
///
/// Numeric children take a scalar coefficient per numeric parent and one
/// coefficient per level for a categorical parent. A categorical child with
/// K levels takes K logit slopes per numeric parent. Constant nodes have no
/// parents and always take the value `intercept`.
struct Equation {
  Link link = Link::identity;
  double intercept = 0.0;
  double noise_sd = 0.0;
  std::map<std::string, std::vector<double>> coefficients;
  std::size_t levels = 0;             // categorical only
  std::vector<double> level_logits;   // categorical only, size `levels`
  std::vector<std::string> level_names;
};

class ScmSpec {
 public:
  ScmSpec(CausalGraph graph, std::map<std::string, Equation> equations, std::size_t sample_size = 171,
          std::uint64_t seed = 0)
      : graph_(std::move(graph)), equations_(std::move(equations)), sample_size_(sample_size), seed_(seed) {
    check();
  }

  const CausalGraph& graph() const { return graph_; }
  const std::map<std::string, Equation>& equations() const { return equations_; }
  const Equation& equation(const std::string& node) const { return equations_.at(node); }
  std::size_t sample_size() const { return sample_size_; }
  std::uint64_t seed() const { return seed_; }

  /// Copy with one coefficient replaced.
  ScmSpec with_coefficient(const std::string& child, const std::string& parent, std::vector<double> value) const {
    auto eqs = equations_;
    eqs.at(child).coefficients.at(parent) = std::move(value);
    return ScmSpec(graph_, std::move(eqs), sample_size_, seed_);
  }

 private:
  void check() const {
    validate_dag(graph_);
    const auto t = graph_.treatment();
    const auto y = graph_.outcome();
    auto mismatch = [](const std::string& msg, std::vector<std::string> s = {}) {
      return Error(ErrorCode::SpecGraphMismatch, msg, std::move(s));
    };
    for (const auto& [name, eq] : equations_) {
      if (!graph_.contains(name)) throw mismatch("equation for undeclared node '" + name + "'", {name});
    }
    for (const auto& node : graph_.nodes()) {
      const auto it = equations_.find(node.name);
      const auto parents = graph_.parent_names(node.name);
      if (node.role == Role::constant) {
        if (!parents.empty()) throw mismatch("constant node '" + node.name + "' has parents", {node.name});
        if (it != equations_.end() && !it->second.coefficients.empty()) {
          throw mismatch("constant node '" + node.name + "' has coefficients", {node.name});
        }
        continue;
      }
      if (it == equations_.end()) throw mismatch("no equation for '" + node.name + "'", {node.name});
      const auto& eq = it->second;
      if (eq.coefficients.size() != parents.size()) {
        throw mismatch("parents of '" + node.name + "' differ from its equation", {node.name});
      }
      for (const auto& p : parents) {
        const auto c = eq.coefficients.find(p);
        if (c == eq.coefficients.end()) throw mismatch("'" + node.name + "' lacks a coefficient for parent '" + p + "'", {node.name, p});
        const std::size_t want = expected_width(eq, p);
        if (c->second.size() != want) {
          throw mismatch("coefficient " + p + " -> " + node.name + " needs " + std::to_string(want) + " values",
                         {node.name, p});
        }
      }
      if (eq.link == Link::categorical_softmax) {
        if (eq.levels < 1 || (!eq.level_logits.empty() && eq.level_logits.size() != eq.levels) ||
            (!eq.level_names.empty() && eq.level_names.size() != eq.levels)) {
          throw mismatch("categorical node '" + node.name + "' has inconsistent levels", {node.name});
        }
      }
      if (!(eq.noise_sd >= 0.0)) throw mismatch("negative noise sd for '" + node.name + "'", {node.name});
    }
    if (equations_.at(t).link != Link::bernoulli_sigmoid) throw mismatch("treatment must use bernoulli-sigmoid", {t});
    if (equations_.at(y).link != Link::identity) throw mismatch("outcome must use identity", {y});
  }

  std::size_t expected_width(const Equation& child, const std::string& parent) const {
    const auto pit = equations_.find(parent);
    const bool parent_categorical = pit != equations_.end() && pit->second.link == Link::categorical_softmax &&
                                    graph_.role(parent) != Role::constant;
    if (child.link == Link::categorical_softmax) {
      if (parent_categorical) {
        throw Error(ErrorCode::SpecGraphMismatch, "categorical parent of a categorical node is not supported", {parent});
      }
      return child.levels;
    }
    return parent_categorical ? pit->second.levels : 1;
  }

  CausalGraph graph_;
  std::map<std::string, Equation> equations_;
  std::size_t sample_size_;
  std::uint64_t seed_;
};

namespace detail {

// Compiled form: node-indexed equations with exogenous-draw slot offsets, so
// a row's noise can be drawn once and replayed under different interventions.
class CompiledScm {
 public:
  explicit CompiledScm(const ScmSpec& spec) : graph_(spec.graph()) {
    const std::size_t n = graph_.size();
    eqs_.resize(n);
    slot_.resize(n);
    categorical_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = graph_.node(i);
      const auto it = spec.equations().find(node.name);
      Compiled& c = eqs_[i];
      c.constant = node.role == Role::constant;
      if (it != spec.equations().end()) c.eq = it->second;
      if (c.constant) continue;
      categorical_[i] = c.eq.link == Link::categorical_softmax;
      for (auto p : graph_.parents(i)) c.parent_coefs.push_back({p, c.eq.coefficients.at(graph_.node(p).name)});
    }
    order_ = graph_.topological_order();
    for (auto i : order_) {
      slot_[i] = slots_;
      const auto& c = eqs_[i];
      if (c.constant) continue;
      slots_ += c.eq.link == Link::categorical_softmax ? c.eq.levels : 1;
    }
    treatment_ = graph_.index_of(graph_.treatment());
    outcome_ = graph_.index_of(graph_.outcome());
  }

  std::size_t slots() const { return slots_; }
  std::size_t treatment() const { return treatment_; }
  std::size_t outcome() const { return outcome_; }
  bool categorical(std::size_t i) const { return categorical_[i]; }
  const CausalGraph& graph() const { return graph_; }

  void draw_exogenous(Rng& rng, std::vector<double>& u) const {
    u.resize(slots_);
    for (auto i : order_) {
      const auto& c = eqs_[i];
      if (c.constant) continue;
      switch (c.eq.link) {
        case Link::identity: u[slot_[i]] = standard_normal(rng); break;
        case Link::bernoulli_sigmoid: u[slot_[i]] = uniform01(rng); break;
        case Link::categorical_softmax:
          for (std::size_t k = 0; k < c.eq.levels; ++k) {
            double v = uniform01(rng);
            while (v <= 0.0) v = uniform01(rng);
            u[slot_[i] + k] = -std::log(-std::log(v));  // Gumbel
          }
          break;
      }
    }
  }

  /// Evaluates every node for one row. Categorical values are level indices.
  void evaluate(const std::vector<double>& u, std::vector<double>& value, std::optional<double> forced_treatment) const {
    value.assign(graph_.size(), 0.0);
    for (auto i : order_) {
      const auto& c = eqs_[i];
      if (c.constant) {
        value[i] = c.eq.intercept;
        continue;
      }
      if (i == treatment_ && forced_treatment) {
        value[i] = *forced_treatment;
        continue;
      }
      if (c.eq.link == Link::categorical_softmax) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c.eq.levels; ++k) {
          double logit = c.eq.level_logits.empty() ? 0.0 : c.eq.level_logits[k];
          for (const auto& [p, coef] : c.parent_coefs) logit += coef[k] * value[p];
          const double score = logit + u[slot_[i] + k];
          if (score > best_score) {
            best_score = score;
            best = k;
          }
        }
        value[i] = static_cast<double>(best);
        continue;
      }
      double eta = c.eq.intercept;
      for (const auto& [p, coef] : c.parent_coefs) {
        eta += categorical_[p] ? coef[static_cast<std::size_t>(value[p])] : coef[0] * value[p];
      }
      if (c.eq.link == Link::identity) {
        value[i] = eta + c.eq.noise_sd * u[slot_[i]];
      } else {
        value[i] = u[slot_[i]] < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
      }
    }
  }

  std::vector<std::string> level_names(std::size_t i) const {
    const auto& eq = eqs_[i].eq;
    if (!eq.level_names.empty()) return eq.level_names;
    std::vector<std::string> names;
    const std::size_t width = std::to_string(eq.levels).size();
    for (std::size_t k = 1; k <= eq.levels; ++k) {
      auto s = std::to_string(k);
      names.push_back(std::string(width - s.size(), '0') + s);
    }
    return names;
  }

 private:
  struct Compiled {
    Equation eq;
    bool constant = false;
    std::vector<std::pair<std::size_t, std::vector<double>>> parent_coefs;
  };
  const CausalGraph& graph_;
  std::vector<Compiled> eqs_;
  std::vector<std::size_t> slot_;
  std::vector<char> categorical_;
  std::vector<std::size_t> order_;
  std::size_t slots_ = 0;
  std::size_t treatment_ = 0;
  std::size_t outcome_ = 0;
};

inline constexpr std::size_t kScmBlockRows = 1024;

}  // namespace detail

/// Draws `n` rows from the structural equations in topological order.
/// Unobserved nodes are not emitted; constants are emitted as fixed columns.
/// Rows are generated in blocks with block-derived seeds.
inline FieldDataset sample(const ScmSpec& spec, std::size_t n, std::uint64_t seed) {
  const detail::CompiledScm scm(spec);
  const auto& g = spec.graph();
  const std::size_t nodes = g.size();
  std::vector<double> values(n * nodes);
  const std::size_t blocks = (n + detail::kScmBlockRows - 1) / detail::kScmBlockRows;
  parallel_for(blocks, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::vector<double> u, v;
    const std::size_t end = std::min(n, (b + 1) * detail::kScmBlockRows);
    for (std::size_t r = b * detail::kScmBlockRows; r < end; ++r) {
      scm.draw_exogenous(rng, u);
      scm.evaluate(u, v, std::nullopt);
      std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(r * nodes));
    }
  });

  std::vector<Column> columns;
  for (std::size_t i = 0; i < nodes; ++i) {
    const auto& node = g.node(i);
    if (node.role == Role::unobserved) continue;
    Column col;
    col.name = node.name;
    if (scm.categorical(i)) {
      col.type = ColumnType::categorical;
      const auto names = scm.level_names(i);
      col.labels.reserve(n);
      for (std::size_t r = 0; r < n; ++r) col.labels.push_back(names[static_cast<std::size_t>(values[r * nodes + i])]);
    } else {
      col.type = i == scm.treatment() ? ColumnType::binary : ColumnType::real;
      col.values.reserve(n);
      for (std::size_t r = 0; r < n; ++r) col.values.push_back(values[r * nodes + i]);
    }
    columns.push_back(std::move(col));
  }
  std::vector<std::string> ids(n);
  for (std::size_t r = 0; r < n; ++r) ids[r] = "F" + std::to_string(r + 1);
  return FieldDataset(std::move(ids), std::move(columns), g.treatment(), g.outcome());
}

struct OracleAte {
  double ate = 0.0;
  double mc_se = 0.0;
  std::size_t n_mc = 0;
};

enum class Pairing { shared_noise, independent };

/// E[Y | do(T=1)] - E[Y | do(T=0)] by Monte Carlo. With shared noise each
/// simulated world is evaluated under both interventions.
inline OracleAte true_ate(const ScmSpec& spec, std::size_t n_mc = 100000, std::uint64_t seed = 0,
                          Pairing pairing = Pairing::shared_noise) {
  if (n_mc < 2) throw Error(ErrorCode::InvalidArgument, "need at least two Monte-Carlo draws");
  const detail::CompiledScm scm(spec);
  const auto y = scm.outcome();
  const std::size_t blocks = (n_mc + detail::kScmBlockRows - 1) / detail::kScmBlockRows;
  std::vector<double> y1(n_mc), y0(n_mc);
  parallel_for(blocks, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::vector<double> u, v;
    const std::size_t end = std::min(n_mc, (b + 1) * detail::kScmBlockRows);
    for (std::size_t r = b * detail::kScmBlockRows; r < end; ++r) {
      scm.draw_exogenous(rng, u);
      scm.evaluate(u, v, 1.0);
      y1[r] = v[y];
      if (pairing == Pairing::independent) scm.draw_exogenous(rng, u);
      scm.evaluate(u, v, 0.0);
      y0[r] = v[y];
    }
  });
  const double n = static_cast<double>(n_mc);
  auto mean_var = [n](const std::vector<double>& a) {
    double m = 0.0;
    for (double x : a) m += x;
    m /= n;
    double ss = 0.0;
    for (double x : a) ss += (x - m) * (x - m);
    return std::pair{m, ss / (n - 1.0)};
  };
  OracleAte out;
  out.n_mc = n_mc;
  if (pairing == Pairing::shared_noise) {
    std::vector<double> diff(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) diff[i] = y1[i] - y0[i];
    const auto [m, v] = mean_var(diff);
    out.ate = m;
    out.mc_se = std::sqrt(v / n);
  } else {
    const auto [m1, v1] = mean_var(y1);
    const auto [m0, v0] = mean_var(y0);
    out.ate = m1 - m0;
    out.mc_se = std::sqrt(v1 / n + v0 / n);
  }
  return out;
}

// --- JSON -------------------------------------------------------------------------

inline ScmSpec scm_from_json(const nlohmann::json& j) {
  auto graph = graph_from_json(j);
  try {
    std::map<std::string, Equation> eqs;
    for (const auto& [name, e] : j.at("equations").items()) {
      Equation eq;
      eq.link = parse_link(e.value("link", "identity"));
      eq.intercept = e.value("intercept", 0.0);
      eq.noise_sd = e.value("noise_sd", 0.0);
      eq.levels = e.value("levels", std::size_t{0});
      if (e.contains("level_logits")) eq.level_logits = e.at("level_logits").get<std::vector<double>>();
      if (e.contains("level_names")) eq.level_names = e.at("level_names").get<std::vector<std::string>>();
      if (e.contains("coefficients")) {
        for (const auto& [parent, c] : e.at("coefficients").items()) {
          eq.coefficients[parent] = c.is_array() ? c.get<std::vector<double>>() : std::vector<double>{c.get<double>()};
        }
      }
      eqs.emplace(name, std::move(eq));
    }
    return ScmSpec(std::move(graph), std::move(eqs), j.value("sample_size", std::size_t{171}),
                   j.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("SCM JSON: ") + e.what());
  }
}

inline nlohmann::json scm_to_json(const ScmSpec& spec) {
  auto j = graph_to_json(spec.graph());
  nlohmann::json eqs = nlohmann::json::object();
  for (const auto& [name, eq] : spec.equations()) {
    nlohmann::json e;
    e["link"] = to_string(eq.link);
    e["intercept"] = eq.intercept;
    e["noise_sd"] = eq.noise_sd;
    if (eq.link == Link::categorical_softmax) {
      e["levels"] = eq.levels;
      if (!eq.level_logits.empty()) e["level_logits"] = eq.level_logits;
      if (!eq.level_names.empty()) e["level_names"] = eq.level_names;
    }
    nlohmann::json coefs = nlohmann::json::object();
    for (const auto& [p, c] : eq.coefficients) coefs[p] = c.size() == 1 ? nlohmann::json(c[0]) : nlohmann::json(c);
    e["coefficients"] = coefs;
    eqs[name] = e;
  }
  j["equations"] = eqs;
  j["sample_size"] = spec.sample_size();
  j["seed"] = spec.seed();
  return j;
}

inline ScmSpec load_scm(const std::string& path) { return scm_from_json(read_json_file(path)); }

}  // namespace agrocausal
