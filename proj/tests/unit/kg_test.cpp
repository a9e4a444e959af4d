#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tscr/kg.hpp"

namespace tscr {
namespace {

namespace fs = std::filesystem;
using testing::bfs_distance;
using testing::entity_id;
using testing::item_id;
using testing::make_vocab;
using testing::random_graph;

using Path = std::vector<EntityId>;

class TripleFile : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = fs::temp_directory_path() /
            ("tscr_kg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".tsv");
  }
  void TearDown() override { fs::remove(path_); }
  TripleLoad load(const std::string& text) {
    std::ofstream(path_) << text;
    return load_triples(path_, vocab_);
  }
  Vocab vocab_ = make_vocab(2, 2);  // v0 v1 e0 e1
  fs::path path_;
};

TEST_F(TripleFile, EmptyFileHasNoTriples) {
  const auto g = load("").graph;
  EXPECT_EQ(g.triple_count(), 0u);
  EXPECT_EQ(g.node_count(), vocab_.size());
}

TEST_F(TripleFile, SingleTripleIsTraversableBothWays) {
  const auto g = load("v0\tdirected_by\te0\n").graph;
  const auto a = item_id(0), b = entity_id(vocab_, 0);
  EXPECT_EQ(g.neighbor_ids(a), Path{b});
  EXPECT_EQ(g.neighbor_ids(b), Path{a});
  EXPECT_EQ(g.relation_name(0), "directed_by");
  ASSERT_EQ(g.neighbors(a).size(), 1u);
  EXPECT_TRUE(g.neighbors(a)[0].outgoing);
  EXPECT_FALSE(g.neighbors(b)[0].outgoing);
}

TEST_F(TripleFile, DuplicateTripleStoredOnce) {
  const auto g = load("v0\tr\te0\nv0\tr\te0\n").graph;
  EXPECT_EQ(g.triple_count(), 1u);
  EXPECT_EQ(g.neighbors(item_id(0)).size(), 1u);
}

TEST_F(TripleFile, UnresolvedEndpointIsDroppedAndCounted) {
  const auto t = load("v0\tr\te0\nv0\tr\tghost\n");
  EXPECT_EQ(t.graph.triple_count(), 1u);
  EXPECT_EQ(t.dropped, 1u);
}

TEST_F(TripleFile, MalformedLineNamesTheLine) {
  try {
    load("v0\tr\te0\nv0 r e0\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(KnowledgeGraph, SelfLoopsAreNotNeighbors) {
  const auto v = make_vocab(2, 0);
  const KnowledgeGraph g(v.size(), {"r"}, {{item_id(0), 0, item_id(0)}, {item_id(0), 0, item_id(1)}});
  EXPECT_EQ(g.neighbor_ids(item_id(0)), Path{item_id(1)});
}

// A* ----------------------------------------------------------------------

// Nodes a=2, b=3, c=4, d=5, x=6 (isolated).
KnowledgeGraph graph_of(std::vector<std::pair<EntityId, EntityId>> edges) {
  std::vector<Triple> t;
  for (auto [h, tl] : edges) t.push_back({h, 0, tl});
  return KnowledgeGraph(7, {"r"}, t);
}

TEST(ShortestPath, SameEndpointIsSingleton) {
  const auto g = graph_of({{2, 3}});
  EXPECT_EQ(shortest_path_astar(g, 2, 2, 4), Path{2});
  EXPECT_EQ(shortest_path_astar(g, 2, 2, 0), Path{2});
}

TEST(ShortestPath, DirectEdgeBeatsTwoHops) {
  const auto g = graph_of({{2, 3}, {3, 4}, {2, 4}});
  EXPECT_EQ(shortest_path_astar(g, 2, 4, 4), (Path{2, 4}));
}

TEST(ShortestPath, TraversesAgainstTripleDirection) {
  const auto g = graph_of({{3, 2}, {4, 3}});
  EXPECT_EQ(shortest_path_astar(g, 2, 4, 4), (Path{2, 3, 4}));
}

TEST(ShortestPath, RespectsHopBudget) {
  const auto g = graph_of({{2, 3}, {3, 4}, {4, 5}});
  EXPECT_EQ(shortest_path_astar(g, 2, 5, 3), (Path{2, 3, 4, 5}));
  EXPECT_FALSE(shortest_path_astar(g, 2, 5, 2));
  EXPECT_FALSE(shortest_path_astar(g, 2, 3, 0));
}

TEST(ShortestPath, DisconnectedIsNone) {
  const auto g = graph_of({{2, 3}});
  EXPECT_FALSE(shortest_path_astar(g, 2, 6, 10));
}

TEST(ShortestPath, LexicographicallySmallestAmongTies) {
  // Two 2-hop routes a-c-d and a-b-d; b < c.
  const auto g = graph_of({{2, 4}, {4, 5}, {2, 3}, {3, 5}});
  EXPECT_EQ(shortest_path_astar(g, 2, 5, 4), (Path{2, 3, 5}));
  // Reverse direction: d-b-a beats d-c-a.
  EXPECT_EQ(shortest_path_astar(g, 5, 2, 4), (Path{5, 3, 2}));
}

TEST(ShortestPath, LexicographicOrderHoldsPastTheFirstHop) {
  // a-b-d-x and a-c-x': both 3-hop a->f; the smaller second node must win
  // even though its later nodes are larger.
  std::vector<Triple> t{{2, 0, 3}, {3, 0, 7}, {7, 0, 8}, {2, 0, 4}, {4, 0, 5}, {5, 0, 8}};
  const KnowledgeGraph g(9, {"r"}, t);
  EXPECT_EQ(shortest_path_astar(g, 2, 8, 4), (Path{2, 3, 7, 8}));
}

TEST(ShortestPath, UnknownEndpointThrows) {
  const auto g = graph_of({{2, 3}});
  EXPECT_THROW(shortest_path_astar(g, 2, 40, 4), std::out_of_range);
  EXPECT_THROW(shortest_path_astar(g, Vocab::kPad, 2, 4), std::out_of_range);
}

TEST(ShortestPath, IsDeterministic) {
  Rng rng(99);
  const auto g = random_graph(40, 0.1, 3, rng);
  for (EntityId dst = 3; dst < 42; ++dst) EXPECT_EQ(shortest_path_astar(g, 2, dst, 6), shortest_path_astar(g, 2, dst, 6));
}

TEST(ShortestPath, MatchesBreadthFirstDistances) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_graph(30, 0.1, 2, rng);
    for (EntityId s = 2; s < 32; ++s) {
      for (EntityId t = 2; t < 32; ++t) {
        const auto bfs = bfs_distance(g, s, t);
        const auto path = shortest_path_astar(g, s, t, 100);
        ASSERT_EQ(bfs.has_value(), path.has_value());
        if (bfs) EXPECT_EQ(static_cast<int>(path->size()) - 1, *bfs);
      }
    }
  }
}

// Augmentation ------------------------------------------------------------

UserSequence seq_of(Path ids, std::vector<std::size_t> gt = {}) {
  return UserSequence{"s", std::move(ids), std::move(gt), {}};
}

TEST(Augment, SplicesTheBridge) {
  const auto g = graph_of({{2, 3}, {3, 4}});
  const auto out = augment_sequence(g, seq_of({2, 4}, {1}), 4);
  EXPECT_EQ(out.elements, (Path{2, 3, 4}));
  EXPECT_EQ(out.inserted, (std::vector<bool>{false, true, false}));
  EXPECT_EQ(out.ground_truth, (std::vector<std::size_t>{2}));
}

TEST(Augment, DirectEdgeLeavesPairAlone) {
  const auto g = graph_of({{2, 3}, {3, 4}, {2, 4}});
  const auto out = augment_sequence(g, seq_of({2, 4}), 4);
  EXPECT_EQ(out.elements, (Path{2, 4}));
  EXPECT_FALSE(out.is_inserted(0));
  EXPECT_FALSE(out.is_inserted(1));
}

TEST(Augment, DisconnectedPairUnchanged) {
  const auto g = graph_of({{2, 3}, {3, 4}});
  const auto out = augment_sequence(g, seq_of({2, 6, 4}, {0, 2}), 4);
  EXPECT_EQ(out.elements, (Path{2, 6, 4}));
  EXPECT_EQ(out.ground_truth, (std::vector<std::size_t>{0, 2}));
}

TEST(Augment, ZeroBudgetIsIdentity) {
  const auto g = graph_of({{2, 3}, {3, 4}});
  const auto in = seq_of({2, 4, 2}, {1});
  EXPECT_EQ(augment_sequence(g, in, 0).elements, in.elements);
}

TEST(Augment, ShortSequencesPassThrough) {
  const auto g = graph_of({{2, 3}});
  EXPECT_EQ(augment_sequence(g, seq_of({2}), 4).elements, Path{2});
  EXPECT_TRUE(augment_sequence(g, seq_of({}), 4).elements.empty());
}

TEST(Augment, MultiplePairsRemapGroundTruth) {
  // a..c via b, c..a' via d: [a, c, a] -> [a, b, c, b, a]
  const auto g = graph_of({{2, 3}, {3, 4}});
  const auto out = augment_sequence(g, seq_of({2, 4, 2}, {1, 2}), 4);
  EXPECT_EQ(out.elements, (Path{2, 3, 4, 3, 2}));
  EXPECT_EQ(out.ground_truth, (std::vector<std::size_t>{2, 4}));
}

TEST(AugmentProperty, AdjacencyAndRecoverability) {
  Rng rng(21);
  std::uniform_int_distribution<EntityId> node(2, 41);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = random_graph(40, 0.06, 3, rng);
    for (int n = 0; n < 10; ++n) {
      UserSequence in;
      for (int k = 0; k < 8; ++k) {
        in.ground_truth.push_back(in.elements.size());
        in.elements.push_back(node(rng));
      }
      const int hops = 3;
      const auto out = augment_sequence(g, in, hops);
      // Deleting inserted elements recovers the original.
      Path kept;
      for (std::size_t i = 0; i < out.elements.size(); ++i)
        if (!out.is_inserted(i)) kept.push_back(out.elements[i]);
      ASSERT_EQ(kept, in.elements);
      for (std::size_t k = 0; k < in.ground_truth.size(); ++k)
        EXPECT_EQ(out.elements[out.ground_truth[k]], in.elements[in.ground_truth[k]]);
      // Each adjacent pair is a KG edge or an original pair with no short path.
      for (std::size_t i = 0; i + 1 < out.elements.size(); ++i) {
        const auto u = out.elements[i], v = out.elements[i + 1];
        const auto nb = g.neighbor_ids(u);
        const bool edge = std::binary_search(nb.begin(), nb.end(), v);
        if (edge) continue;
        EXPECT_FALSE(out.is_inserted(i) || out.is_inserted(i + 1));
        const auto d = bfs_distance(g, u, v);
        EXPECT_TRUE(u == v || !d || *d > hops);
      }
    }
  }
}

}  // namespace
}  // namespace tscr
