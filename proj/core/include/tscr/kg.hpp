#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tscr/corpus.hpp"

namespace tscr {

using RelationId = std::int32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Neighbor {
  EntityId id = 0;
  RelationId relation = 0;
  bool outgoing = true;  // head -> tail direction of the underlying triple
};

/// Relation-typed multigraph over vocabulary ids. Triples keep their
/// direction; adjacency lists expose both directions for path search.
/// Immutable after construction.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(std::size_t node_count, std::vector<std::string> relation_names,
                 std::vector<Triple> triples);

  std::size_t node_count() const { return adjacency_.size(); }
  std::size_t relation_count() const { return relation_names_.size(); }
  std::size_t triple_count() const { return triples_.size(); }
  const std::string& relation_name(RelationId r) const {
    return relation_names_.at(static_cast<std::size_t>(r));
  }
  const std::vector<std::string>& relation_names() const { return relation_names_; }
  /// Deduplicated, sorted triples.
  const std::vector<Triple>& triples() const { return triples_; }
  /// Sorted by neighbor id; self loops excluded.
  std::span<const Neighbor> neighbors(EntityId node) const;
  /// Distinct neighbor ids, ascending.
  std::vector<EntityId> neighbor_ids(EntityId node) const;

  /// Valid non-special node id.
  bool contains(EntityId node) const;

 private:
  std::vector<std::string> relation_names_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

struct TripleLoad {
  KnowledgeGraph graph;
  std::size_t dropped = 0;  // triples with an endpoint not in the vocabulary
};

/// Triple TSV: head_external_id, relation_name, tail_external_id.
TripleLoad load_triples(const std::filesystem::path& path, const Vocab& vocab);

inline constexpr int kDefaultMaxHops = 4;

/// Minimum-hop path from src to dst inclusive of both endpoints, found by A*
/// with unit edge costs and the zero heuristic. Among equal-length paths the
/// lexicographically smallest id sequence is returned. nullopt when no path
/// of at most `max_hops` edges exists. Throws std::out_of_range if either
/// endpoint is not a graph node.
std::optional<std::vector<EntityId>> shortest_path_astar(const KnowledgeGraph& graph, EntityId src,
                                                         EntityId dst, int max_hops);

/// Splices the interior of each neighbouring pair's shortest path between the
/// pair. Pairs without a path within `max_hops` stay adjacent. Spliced
/// elements are flagged in `inserted`; ground truth indices are remapped.
UserSequence augment_sequence(const KnowledgeGraph& graph, const UserSequence& seq, int max_hops);

}  // namespace tscr
