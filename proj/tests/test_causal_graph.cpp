#include <gtest/gtest.h>

#include <random>

#include "agrocausal/causal_graph.hpp"
#include "support/oracles.hpp"

using namespace agrocausal;

namespace {

CausalGraph confounder_graph() {
  return CausalGraph({{"C", Role::observed}, {"T", Role::treatment}, {"Y", Role::outcome}},
                     {{"C", "T"}, {"C", "Y"}, {"T", "Y"}});
}

CausalGraph farm_graph() { return load_graph((oracle::source_dir() / "data/farm_graph.json").string()); }

const NodeSet kPaperSet{"WS_min", "WS_max", "SoC", "SM", "G_geom", "SP_silt", "SP_clay", "SP_sand", "AbS", "AdS", "SV"};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

std::vector<char> mask(std::size_t n, std::initializer_list<std::size_t> members) {
  std::vector<char> m(n, 0);
  for (auto i : members) m[i] = 1;
  return m;
}

NodeSet names_of(const std::vector<char>& m) {
  NodeSet s;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) s.insert(oracle::Dag::name(i));
  }
  return s;
}

// ---------------------------------------------------------------------------
// validate_dag

TEST(ValidateDag, TwoCycleIsRejectedAndNamed) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}}, {{"A", "B"}, {"B", "A"}});
  try {
    validate_dag(g);
    FAIL() << "cycle accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CycleDetected);
    const NodeSet members(e.subjects().begin(), e.subjects().end());
    EXPECT_TRUE(members.count("A"));
    EXPECT_TRUE(members.count("B"));
  }
}

TEST(ValidateDag, EmptyGraphIsValid) { EXPECT_NO_THROW(validate_dag(CausalGraph({}, {}))); }

TEST(ValidateDag, FarmGraphIsValidAndOrdered) {
  const auto g = farm_graph();
  ASSERT_NO_THROW(validate_dag(g));
  const auto& order = g.topological_order();
  ASSERT_EQ(order.size(), g.size());
  std::vector<std::size_t> position(g.size());
  for (std::size_t k = 0; k < order.size(); ++k) position[order[k]] = k;
  for (const auto& [a, b] : g.edges()) EXPECT_LT(position[g.index_of(a)], position[g.index_of(b)]) << a << "->" << b;
  EXPECT_EQ(g.treatment(), "T");
  EXPECT_EQ(g.outcome(), "Y");
}

TEST(ValidateDag, StructuralDefects) {
  EXPECT_EQ(code_of([] { validate_dag(CausalGraph({{"A", Role::observed}}, {{"A", "Z"}})); }),
            ErrorCode::DanglingEdge);
  EXPECT_EQ(code_of([] {
              validate_dag(CausalGraph({{"A", Role::observed}, {"B", Role::observed}}, {{"A", "B"}, {"A", "B"}}));
            }),
            ErrorCode::DuplicateEdge);
  EXPECT_EQ(code_of([] { validate_dag(CausalGraph({{"A", Role::observed}}, {{"A", "A"}})); }), ErrorCode::SelfLoop);
  EXPECT_EQ(code_of([] { validate_dag(CausalGraph({{"A", Role::observed}, {"A", Role::observed}}, {})); }),
            ErrorCode::InvalidArgument);
}

TEST(ValidateDag, LongerCycleIsFound) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}, {"C", Role::observed}, {"D", Role::observed}},
                      {{"D", "A"}, {"A", "B"}, {"B", "C"}, {"C", "A"}});
  try {
    validate_dag(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CycleDetected);
    const NodeSet members(e.subjects().begin(), e.subjects().end());
    EXPECT_EQ(members, (NodeSet{"A", "B", "C"}));
  }
}

// ---------------------------------------------------------------------------
// d_separated

TEST(DSeparated, ChainIsBlockedByMiddle) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}, {"C", Role::observed}}, {{"A", "B"}, {"B", "C"}});
  EXPECT_TRUE(d_separated(g, {"A"}, {"C"}, {"B"}));
  EXPECT_FALSE(d_separated(g, {"A"}, {"C"}, {}));
}

TEST(DSeparated, ConditioningOpensCollider) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}, {"C", Role::observed}}, {{"A", "B"}, {"C", "B"}});
  EXPECT_FALSE(d_separated(g, {"A"}, {"C"}, {"B"}));
  EXPECT_TRUE(d_separated(g, {"A"}, {"C"}, {}));
}

TEST(DSeparated, ConditioningOnColliderDescendantOpensIt) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}, {"C", Role::observed}, {"D", Role::observed}},
                      {{"A", "B"}, {"C", "B"}, {"B", "D"}});
  EXPECT_FALSE(d_separated(g, {"A"}, {"C"}, {"D"}));
}

TEST(DSeparated, ForkIsBlockedByRoot) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}, {"C", Role::observed}}, {{"B", "A"}, {"B", "C"}});
  EXPECT_TRUE(d_separated(g, {"A"}, {"C"}, {"B"}));
  EXPECT_FALSE(d_separated(g, {"A"}, {"C"}, {}));
}

TEST(DSeparated, Errors) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}}, {{"A", "B"}});
  EXPECT_EQ(code_of([&] { d_separated(g, {"A"}, {"Q"}, {}); }), ErrorCode::UnknownNode);
  EXPECT_EQ(code_of([&] { d_separated(g, {"A"}, {"A"}, {}); }), ErrorCode::InvalidArgument);
}

TEST(DSeparated, MatchesPathEnumerationOnRandomDags) {
  std::mt19937_64 rng(20240611);
  int agree = 0;
  for (int q = 0; q < 1000; ++q) {
    const std::size_t n = 3 + rng() % 6;
    const auto dag = oracle::random_dag(rng, n, 0.2 + 0.5 * std::uniform_real_distribution<>(0, 1)(rng));
    const auto g = dag.to_graph();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<char> x(n, 0), y(n, 0), z(n, 0);
    x[perm[0]] = 1;
    y[perm[1]] = 1;
    for (std::size_t k = 2; k < n; ++k) {
      const auto slot = rng() % 4;
      if (slot == 0) x[perm[k]] = 1;
      if (slot == 1) y[perm[k]] = 1;
      if (slot == 2) z[perm[k]] = 1;
    }
    const bool expected = oracle::d_separated(dag, x, y, z);
    agree += d_separated(g, names_of(x), names_of(y), names_of(z)) == expected;
  }
  EXPECT_EQ(agree, 1000);
}

TEST(DSeparated, IsSymmetric) {
  std::mt19937_64 rng(7);
  for (int q = 0; q < 300; ++q) {
    const std::size_t n = 4 + rng() % 5;
    const auto g = oracle::random_dag(rng, n, 0.4).to_graph();
    const NodeSet x{oracle::Dag::name(0)}, y{oracle::Dag::name(1)};
    NodeSet z;
    for (std::size_t k = 2; k < n; ++k) {
      if (rng() % 2) z.insert(oracle::Dag::name(k));
    }
    EXPECT_EQ(d_separated(g, x, y, z), d_separated(g, y, x, z));
  }
}

TEST(DSeparated, AddingEdgesNeverSeparates) {
  std::mt19937_64 rng(11);
  for (int q = 0; q < 200; ++q) {
    const std::size_t n = 4 + rng() % 5;
    auto dag = oracle::random_dag(rng, n, 0.3);
    const auto before = dag.to_graph();
    NodeSet z;
    for (std::size_t k = 2; k < n; ++k) {
      if (rng() % 3 == 0) z.insert(oracle::Dag::name(k));
    }
    const NodeSet x{oracle::Dag::name(0)}, y{oracle::Dag::name(1)};
    const bool sep_before = d_separated(before, x, y, z);
    // add one edge that respects the existing topological order
    const auto& order = before.topological_order();
    const auto i = rng() % n, j = rng() % n;
    if (i == j) continue;
    const auto a = order[std::min(i, j)], b = order[std::max(i, j)];
    if (dag.edge[a][b]) continue;
    dag.edge[a][b] = 1;
    const bool sep_after = d_separated(dag.to_graph(), x, y, z);
    EXPECT_FALSE(!sep_before && sep_after);
  }
}

// ---------------------------------------------------------------------------
// is_valid_backdoor

TEST(Backdoor, SingleConfounder) {
  const auto g = confounder_graph();
  EXPECT_TRUE(is_valid_backdoor(g, {"C"}));
  EXPECT_FALSE(is_valid_backdoor(g, {}));
}

TEST(Backdoor, FarmGraphAcceptsReportedSet) {
  const auto g = farm_graph();
  EXPECT_TRUE(is_valid_backdoor(g, kPaperSet));
  const auto d = oracle::from_graph(g);
  auto zm = std::vector<char>(g.size(), 0);
  for (const auto& n : kPaperSet) zm[g.index_of(n)] = 1;
  EXPECT_TRUE(oracle::backdoor(d, g.index_of("T"), g.index_of("Y"), zm));
}

TEST(Backdoor, DescendantOfTreatmentIsRejected) {
  const auto g = farm_graph();
  auto z = kPaperSet;
  z.insert("CG");
  EXPECT_FALSE(is_valid_backdoor(g, z));
}

TEST(Backdoor, RemovingASoilPartLeavesPathOpen) {
  auto z = kPaperSet;
  z.erase("SP_clay");
  EXPECT_FALSE(is_valid_backdoor(farm_graph(), z));
}

TEST(Backdoor, Errors) {
  const CausalGraph no_t({{"A", Role::observed}, {"Y", Role::outcome}}, {{"A", "Y"}});
  EXPECT_EQ(code_of([&] { is_valid_backdoor(no_t, {}); }), ErrorCode::MissingDesignation);
  EXPECT_EQ(code_of([&] { is_valid_backdoor(confounder_graph(), {"nope"}); }), ErrorCode::UnknownNode);
}

TEST(Backdoor, AgreesWithFirstPrinciplesOnRandomDags) {
  std::mt19937_64 rng(5);
  for (int q = 0; q < 300; ++q) {
    const std::size_t n = 4 + rng() % 4;
    auto dag = oracle::random_dag(rng, n, 0.45);
    auto plain = dag.to_graph();
    const auto& order = plain.topological_order();
    const auto t = order[0 + rng() % (n / 2)];
    const auto y = order[n - 1];
    auto nodes = plain.nodes();
    nodes[t].role = Role::treatment;
    nodes[y].role = Role::outcome;
    const CausalGraph g(nodes, plain.edges());
    std::vector<char> z(n, 0);
    for (std::size_t k = 0; k < n; ++k) z[k] = k != t && k != y && rng() % 2;
    EXPECT_EQ(is_valid_backdoor(g, names_of(z)), oracle::backdoor(dag, t, y, z));
  }
}

// ---------------------------------------------------------------------------
// enumerate_backdoor_sets

TEST(Enumerate, ConfounderGraph) {
  const auto sets = enumerate_backdoor_sets(confounder_graph());
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].members, NodeSet{"C"});
  EXPECT_TRUE(sets[0].minimal);
}

TEST(Enumerate, NoConfoundersGivesEmptySet) {
  const CausalGraph g({{"T", Role::treatment}, {"Y", Role::outcome}}, {{"T", "Y"}});
  const auto sets = enumerate_backdoor_sets(g);
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_TRUE(sets[0].members.empty());
}

TEST(Enumerate, UnobservedConfounderGivesNothing) {
  const CausalGraph g({{"U", Role::unobserved}, {"T", Role::treatment}, {"Y", Role::outcome}},
                      {{"U", "T"}, {"U", "Y"}, {"T", "Y"}});
  EXPECT_TRUE(enumerate_backdoor_sets(g).empty());
}

TEST(Enumerate, FarmGraphSetsPassBruteForce) {
  const auto g = farm_graph();
  const auto d = oracle::from_graph(g);
  const auto sets = enumerate_backdoor_sets(g, 10);
  ASSERT_FALSE(sets.empty());
  EXPECT_LE(sets.size(), 10u);
  const auto t = g.index_of("T"), y = g.index_of("Y");
  bool seen_non_minimal = false;
  for (const auto& s : sets) {
    EXPECT_TRUE(is_valid_backdoor(g, s.members));
    std::vector<char> zm(g.size(), 0);
    for (const auto& n : s.members) {
      zm[g.index_of(n)] = 1;
      const Role r = g.role(n);
      EXPECT_TRUE(r == Role::observed || r == Role::constant) << n;
    }
    EXPECT_TRUE(oracle::backdoor(d, t, y, zm));
    // minimal sets come first
    if (!s.minimal) seen_non_minimal = true;
    if (s.minimal) EXPECT_FALSE(seen_non_minimal);
    // exhaustive check over every proper subset
    const std::vector<std::string> members(s.members.begin(), s.members.end());
    bool has_valid_subset = false;
    for (std::uint64_t bits = 0; bits + 1 < (std::uint64_t{1} << members.size()); ++bits) {
      NodeSet sub;
      for (std::size_t k = 0; k < members.size(); ++k) {
        if (bits >> k & 1) sub.insert(members[k]);
      }
      if (is_valid_backdoor(g, sub)) {
        has_valid_subset = true;
        break;
      }
    }
    EXPECT_EQ(s.minimal, !has_valid_subset);
  }
}

TEST(Enumerate, RandomDagsMinimalityIsExhaustive) {
  std::mt19937_64 rng(99);
  for (int q = 0; q < 100; ++q) {
    const std::size_t n = 5 + rng() % 4;
    auto dag = oracle::random_dag(rng, n, 0.45);
    auto plain = dag.to_graph();
    const auto& order = plain.topological_order();
    auto nodes = plain.nodes();
    const auto t = order[1], y = order[n - 1];
    nodes[t].role = Role::treatment;
    nodes[y].role = Role::outcome;
    const CausalGraph g(nodes, plain.edges());
    const auto sets = enumerate_backdoor_sets(g, 50);
    // the full observed non-descendant pool identifies iff any set does
    const auto desc = dag.descendants(t);
    std::vector<char> pool(n, 0);
    for (std::size_t k = 0; k < n; ++k) pool[k] = !desc[k] && k != y;
    EXPECT_EQ(sets.empty(), !oracle::backdoor(dag, t, y, pool));
    for (const auto& s : sets) {
      std::vector<char> zm(n, 0);
      for (const auto& m : s.members) zm[g.index_of(m)] = 1;
      EXPECT_TRUE(oracle::backdoor(dag, t, y, zm));
      if (!s.minimal) continue;
      for (const auto& drop : s.members) {
        auto smaller = zm;
        smaller[g.index_of(drop)] = 0;
        EXPECT_FALSE(oracle::backdoor(dag, t, y, smaller));
      }
    }
  }
}

TEST(Enumerate, RespectsCap) {
  const auto g = farm_graph();
  EXPECT_EQ(enumerate_backdoor_sets(g, 1).size(), 1u);
  EXPECT_EQ(enumerate_backdoor_sets(g, 3).size(), 3u);
}

TEST(Enumerate, MissingDesignation) {
  const CausalGraph g({{"A", Role::observed}, {"B", Role::observed}}, {{"A", "B"}});
  EXPECT_EQ(code_of([&] { enumerate_backdoor_sets(g); }), ErrorCode::MissingDesignation);
}

// ---------------------------------------------------------------------------
// JSON

TEST(GraphJson, RoundTrip) {
  const auto g = farm_graph();
  const auto back = graph_from_json(graph_to_json(g));
  EXPECT_EQ(back.nodes().size(), g.nodes().size());
  EXPECT_EQ(back.edges(), g.edges());
  EXPECT_EQ(graph_to_json(back), graph_to_json(g));
}

TEST(GraphJson, MalformedEdge) {
  const auto j = nlohmann::json::parse(R"({"nodes":[{"name":"A"}],"edges":[["A"]]})");
  EXPECT_EQ(code_of([&] { graph_from_json(j); }), ErrorCode::Parse);
}

TEST(GraphJson, FarmGraphShape) {
  const auto g = farm_graph();
  EXPECT_FALSE(g.contains("AK"));
  EXPECT_EQ(g.role("AbS"), Role::constant);
  EXPECT_TRUE(g.has_edge("WS_min", "WF"));
  EXPECT_TRUE(g.has_edge("CG", "Y"));
  EXPECT_TRUE(g.has_edge("HD", "Y"));
  EXPECT_TRUE(g.has_edge("SV", "Y"));
}

}  // namespace
