#include "tscr/kg.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <tuple>

namespace tscr {

KnowledgeGraph::KnowledgeGraph(std::size_t node_count, std::vector<std::string> relation_names,
                               std::vector<Triple> triples)
    : relation_names_(std::move(relation_names)), adjacency_(node_count) {
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  for (const auto& t : triples) {
    if (!contains(t.head) || !contains(t.tail))
      throw std::out_of_range("triple endpoint outside the graph");
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= relation_names_.size())
      throw std::out_of_range("triple relation outside the relation table");
    if (t.head == t.tail) continue;
    adjacency_[static_cast<std::size_t>(t.head)].push_back({t.tail, t.relation, true});
    adjacency_[static_cast<std::size_t>(t.tail)].push_back({t.head, t.relation, false});
  }
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end(), [](const Neighbor& a, const Neighbor& b) {
      return std::tie(a.id, a.relation, a.outgoing) < std::tie(b.id, b.relation, b.outgoing);
    });
  }
  triples_ = std::move(triples);
}

bool KnowledgeGraph::contains(EntityId node) const {
  return node >= Vocab::kFirstEntity && static_cast<std::size_t>(node) < adjacency_.size();
}

std::span<const Neighbor> KnowledgeGraph::neighbors(EntityId node) const {
  if (!contains(node)) throw std::out_of_range("node " + std::to_string(node) + " not in graph");
  return adjacency_[static_cast<std::size_t>(node)];
}

std::vector<EntityId> KnowledgeGraph::neighbor_ids(EntityId node) const {
  std::vector<EntityId> ids;
  for (const auto& n : neighbors(node))
    if (ids.empty() || ids.back() != n.id) ids.push_back(n.id);
  return ids;
}

TripleLoad load_triples(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file " + path.string());
  std::vector<std::string> relations;
  std::map<std::string, RelationId> relation_index;
  std::vector<Triple> triples;
  std::size_t dropped = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty() || cols[2].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected head<TAB>relation<TAB>tail");
    }
    const auto head = vocab.find(cols[0]);
    const auto tail = vocab.find(cols[2]);
    if (!head || !tail) {
      ++dropped;
      continue;
    }
    auto [it, fresh] = relation_index.emplace(cols[1], static_cast<RelationId>(relations.size()));
    if (fresh) relations.push_back(cols[1]);
    triples.push_back({*head, it->second, *tail});
  }
  return {KnowledgeGraph(vocab.size(), std::move(relations), std::move(triples)), dropped};
}

std::optional<std::vector<EntityId>> shortest_path_astar(const KnowledgeGraph& graph, EntityId src,
                                                         EntityId dst, int max_hops) {
  if (!graph.contains(src) || !graph.contains(dst))
    throw std::out_of_range("shortest_path_astar: endpoint not in graph");
  if (src == dst) return std::vector<EntityId>{src};
  if (max_hops <= 0) return std::nullopt;

  // h(x) = 0 is the only admissible heuristic available without landmarks,
  // so f = g. Frontier order on equal f is (pop rank of parent, id), which
  // makes the first path to reach dst the lexicographically smallest one.
  const auto heuristic = [](EntityId) { return 0; };
  using Entry = std::tuple<int, std::size_t, EntityId>;  // f, parent rank, node
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::vector<int> g(graph.node_count(), -1);
  std::vector<EntityId> parent(graph.node_count(), -1);
  std::vector<std::size_t> rank(graph.node_count(), 0);
  std::vector<std::uint8_t> closed(graph.node_count(), 0);

  g[static_cast<std::size_t>(src)] = 0;
  open.emplace(heuristic(src), 0, src);
  std::size_t pops = 0;
  while (!open.empty()) {
    const auto [f, parent_rank, node] = open.top();
    open.pop();
    const auto u = static_cast<std::size_t>(node);
    if (closed[u]) continue;
    closed[u] = 1;
    rank[u] = ++pops;
    if (node == dst) {
      std::vector<EntityId> path;
      for (EntityId at = dst; at != -1; at = parent[static_cast<std::size_t>(at)]) path.push_back(at);
      std::reverse(path.begin(), path.end());
      return path;
    }
    if (g[u] >= max_hops) continue;
    for (auto next : graph.neighbor_ids(node)) {
      const auto v = static_cast<std::size_t>(next);
      if (closed[v]) continue;
      const int tentative = g[u] + 1;
      if (g[v] != -1 && g[v] <= tentative) continue;
      g[v] = tentative;
      parent[v] = node;
      open.emplace(tentative + heuristic(next), rank[u], next);
    }
  }
  return std::nullopt;
}

UserSequence augment_sequence(const KnowledgeGraph& graph, const UserSequence& seq, int max_hops) {
  if (seq.elements.size() < 2) return seq;
  UserSequence out;
  out.dialog_id = seq.dialog_id;
  std::vector<bool> inserted;
  std::size_t gt_cursor = 0;
  bool any = false;
  for (std::size_t k = 0; k < seq.elements.size(); ++k) {
    if (gt_cursor < seq.ground_truth.size() && seq.ground_truth[gt_cursor] == k) {
      out.ground_truth.push_back(out.elements.size());
      ++gt_cursor;
    }
    out.elements.push_back(seq.elements[k]);
    inserted.push_back(seq.is_inserted(k));
    if (k + 1 == seq.elements.size()) break;
    const auto path = shortest_path_astar(graph, seq.elements[k], seq.elements[k + 1], max_hops);
    if (!path || path->size() <= 2) continue;
    for (std::size_t i = 1; i + 1 < path->size(); ++i) {
      out.elements.push_back((*path)[i]);
      inserted.push_back(true);
      any = true;
    }
  }
  if (any || !seq.inserted.empty()) out.inserted = std::move(inserted);
  return out;
}

}  // namespace tscr
