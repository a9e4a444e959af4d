#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace tscr::testing {

Vocab make_vocab(std::size_t items, std::size_t entities) {
  Vocab v;
  for (std::size_t i = 0; i < items; ++i) v.add("v" + std::to_string(i), "Item " + std::to_string(i), true);
  for (std::size_t j = 0; j < entities; ++j)
    v.add("e" + std::to_string(j), "Entity " + std::to_string(j), false);
  return v;
}

EntityId item_id(std::size_t i) { return static_cast<EntityId>(Vocab::kFirstEntity + i); }

EntityId entity_id(const Vocab& vocab, std::size_t j) { return *vocab.find("e" + std::to_string(j)); }

KnowledgeGraph random_graph(std::size_t nodes, double p, std::size_t relations, Rng& rng) {
  std::bernoulli_distribution edge(p), flip(0.5);
  std::uniform_int_distribution<std::size_t> rel(0, relations - 1);
  std::vector<Triple> triples;
  for (std::size_t u = 0; u < nodes; ++u) {
    for (std::size_t v = u + 1; v < nodes; ++v) {
      if (!edge(rng)) continue;
      auto a = static_cast<EntityId>(u + Vocab::kFirstEntity);
      auto b = static_cast<EntityId>(v + Vocab::kFirstEntity);
      if (flip(rng)) std::swap(a, b);
      triples.push_back({a, static_cast<RelationId>(rel(rng)), b});
    }
  }
  std::vector<std::string> names;
  for (std::size_t r = 0; r < relations; ++r) names.push_back("r" + std::to_string(r));
  return KnowledgeGraph(nodes + Vocab::kFirstEntity, names, triples);
}

std::optional<int> bfs_distance(const KnowledgeGraph& graph, EntityId src, EntityId dst) {
  std::vector<int> dist(graph.node_count(), -1);
  std::deque<EntityId> queue{src};
  dist[static_cast<std::size_t>(src)] = 0;
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    if (u == dst) return dist[static_cast<std::size_t>(u)];
    for (const auto& n : graph.neighbors(u)) {
      auto& d = dist[static_cast<std::size_t>(n.id)];
      if (d != -1) continue;
      d = dist[static_cast<std::size_t>(u)] + 1;
      queue.push_back(n.id);
    }
  }
  return std::nullopt;
}

std::vector<std::vector<double>> dense_rgcn_oracle(
    std::span<const Triple> triples, const std::vector<std::vector<double>>& x,
    const std::vector<std::vector<double>>& w,
    const std::vector<std::vector<std::vector<double>>>& wr) {
  const auto n = x.size(), d = w.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(d, 0.0));
  for (std::size_t e = 0; e < n; ++e)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out[e][i] += w[i][j] * x[e][j];
  for (const auto& t : triples) {
    const auto& m = wr[static_cast<std::size_t>(t.relation)];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[static_cast<std::size_t>(t.tail)][i] += m[i][j] * x[static_cast<std::size_t>(t.head)][j];
  }
  for (auto& row : out)
    for (auto& v : row) v = std::max(v, 0.0);
  return out;
}

namespace {

double mean_loss(const BasicParameterSet<double>& params, const TscrModel& model,
                 std::span<const ClozeSample> samples, BasicGradientMap<double>* grads) {
  double total = 0.0;
  for (const auto& s : samples) {
    BasicTape<double> tape;
    const Var loss = sample_loss(tape, params, model.config(),
                                 std::span<const std::uint8_t>(model.blocked()), s);
    total += tape.value(loss)[0];
    if (grads) {
      for (auto& [name, g] : backward(tape, loss)) {
        auto it = grads->find(name);
        if (it == grads->end()) {
          grads->emplace(name, std::move(g));
        } else {
          for (std::size_t i = 0; i < g.numel(); ++i) it->second.data()[i] += g.data()[i];
        }
      }
    }
  }
  const double n = static_cast<double>(samples.size());
  if (grads)
    for (auto& [name, g] : *grads)
      for (auto& v : g.data()) v /= n;
  return total / n;
}

}  // namespace

GradientReport check_model_gradients(const TscrModel& model, std::span<const ClozeSample> samples,
                                     double h) {
  auto params = model.params().cast<double>();
  BasicGradientMap<double> analytic;
  mean_loss(params, model, samples, &analytic);
  GradientReport report;
  for (auto& p : params.items()) {
    auto data = p.value.data();
    const auto& a = analytic.at(p.name);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = mean_loss(params, model, samples, nullptr);
      data[i] = keep - h;
      const double down = mean_loss(params, model, samples, nullptr);
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (a.data()[i] - numeric) * (a.data()[i] - numeric);
      a2 += a.data()[i] * a.data()[i];
      n2 += numeric * numeric;
      ++report.coordinates;
    }
    // Gradients that vanish identically (the key bias: softmax is invariant
    // to a per-row shift) leave only difference noise; the floor keeps that
    // from reading as a relative error of order one.
    const double denom = std::max(std::sqrt(std::max(a2, n2)), kGradientFloor);
    const double rel = std::sqrt(diff2) / denom;
    if (rel > report.worst_relative_error || report.worst_parameter.empty()) {
      report.worst_relative_error = rel;
      report.worst_parameter = p.name;
    }
  }
  return report;
}

SyntheticCorpus overfit_corpus(std::uint64_t seed, std::size_t sequences) {
  constexpr std::size_t kItems = 40, kEntities = 30;
  SyntheticCorpus c;
  c.vocab = make_vocab(kItems, kEntities);
  c.relations = {"has"};
  for (std::size_t i = 0; i < kItems; ++i) {
    c.triples.push_back({item_id(i), 0, entity_id(c.vocab, i % kEntities)});
    c.triples.push_back({item_id(i), 0, entity_id(c.vocab, (i + 1) % kEntities)});
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(3, 8);
  for (std::size_t n = 0; n < sequences; ++n) {
    const auto len = len_dist(rng);
    std::uniform_int_distribution<std::size_t> start_dist(0, kItems - len);
    const auto start = start_dist(rng);
    UserSequence seq;
    seq.dialog_id = "s" + std::to_string(n);
    for (std::size_t i = start; i < start + len; ++i) {
      if (i > start) seq.elements.push_back(entity_id(c.vocab, i % kEntities));
      seq.ground_truth.push_back(seq.elements.size());
      seq.elements.push_back(item_id(i));
    }
    c.train.push_back(std::move(seq));
  }
  return c;
}

SyntheticCorpus kg_benefit_corpus(std::uint64_t seed) {
  constexpr std::size_t kClusters = 40, kHubsPerCluster = 2, kChatter = 20;
  constexpr std::size_t kTrainClusters = 24, kValidClusters = 8;
  constexpr std::size_t kTrainSeqs = 480, kValidSeqs = 80, kTestSeqs = 160;
  SyntheticCorpus c;
  c.vocab = make_vocab(2 * kClusters, kClusters * kHubsPerCluster + kChatter);
  c.relations = {"hub_a", "hub_b"};
  auto a_of = [](std::size_t j) { return item_id(2 * j); };
  auto b_of = [](std::size_t j) { return item_id(2 * j + 1); };
  auto hub = [&](std::size_t j, std::size_t h) { return entity_id(c.vocab, j * kHubsPerCluster + h); };
  auto chatter = [&](std::size_t k) { return entity_id(c.vocab, kClusters * kHubsPerCluster + k); };
  for (std::size_t j = 0; j < kClusters; ++j) {
    for (std::size_t h = 0; h < kHubsPerCluster; ++h) {
      const auto r = static_cast<RelationId>(h);
      c.triples.push_back({a_of(j), r, hub(j, h)});
      c.triples.push_back({b_of(j), r, hub(j, h)});
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> clusters(kClusters);
  std::iota(clusters.begin(), clusters.end(), std::size_t{0});
  std::shuffle(clusters.begin(), clusters.end(), rng);
  const std::vector<std::size_t> train_c(clusters.begin(), clusters.begin() + kTrainClusters);
  const std::vector<std::size_t> valid_c(clusters.begin() + kTrainClusters,
                                         clusters.begin() + kTrainClusters + kValidClusters);
  const std::vector<std::size_t> test_c(clusters.begin() + kTrainClusters + kValidClusters,
                                        clusters.end());

  std::uniform_int_distribution<std::size_t> filler_len(1, 3), any_item(0, 2 * kClusters - 1),
      any_chatter(0, kChatter - 1);
  std::bernoulli_distribution filler_is_item(0.5);
  auto make = [&](const std::vector<std::size_t>& pool, std::size_t count, bool terminal_only,
                  const std::string& prefix, std::vector<UserSequence>& out) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t n = 0; n < count; ++n) {
      UserSequence seq;
      seq.dialog_id = prefix + std::to_string(n);
      const auto j = pool[pick(rng)];
      for (std::size_t f = filler_len(rng); f > 0; --f) {
        if (filler_is_item(rng)) {
          EntityId x = item_id(any_item(rng));
          if (x == a_of(j)) x = item_id(any_item(rng) | 1);  // keep a_j out of the filler
          if (!terminal_only) seq.ground_truth.push_back(seq.elements.size());
          seq.elements.push_back(x);
        } else {
          seq.elements.push_back(chatter(any_chatter(rng)));
        }
      }
      if (!terminal_only) seq.ground_truth.push_back(seq.elements.size());
      seq.elements.push_back(a_of(j));
      seq.ground_truth.push_back(seq.elements.size());
      seq.elements.push_back(b_of(j));
      out.push_back(std::move(seq));
    }
  };
  make(train_c, kTrainSeqs, false, "t", c.train);
  make(valid_c, kValidSeqs, true, "v", c.valid);
  make(test_c, kTestSeqs, true, "x", c.test);
  return c;
}

std::vector<ClozeSample> terminal_samples(const std::vector<UserSequence>& seqs,
                                          std::size_t max_len) {
  std::vector<ClozeSample> out;
  for (const auto& seq : seqs) {
    if (seq.ground_truth.empty()) continue;
    const auto pos = seq.ground_truth.back();
    ClozeSample s;
    s.input.assign(seq.elements.begin(), seq.elements.begin() + static_cast<std::ptrdiff_t>(pos));
    s.input.push_back(Vocab::kMask);
    s.valid.assign(s.input.size(), 1);
    s.targets.push_back({pos, seq.elements[pos]});
    s.ordinal = 1;
    out.push_back(pad_truncate(std::move(s), max_len));
  }
  return out;
}

}  // namespace tscr::testing
