#include <benchmark/benchmark.h>

#include <random>

#include "tscr/kg.hpp"
#include "tscr/model.hpp"
#include "tscr/rgcn.hpp"

namespace {

using namespace tscr;

constexpr std::size_t kItems = 2000, kEntities = 1000;

Vocab bench_vocab() {
  Vocab v;
  for (std::size_t i = 0; i < kItems; ++i) v.add("v" + std::to_string(i), "Item", true);
  for (std::size_t j = 0; j < kEntities; ++j) v.add("e" + std::to_string(j), "Entity", false);
  return v;
}

ModelConfig bench_config(std::size_t len) {
  ModelConfig c;
  c.dim = 64;
  c.layers = 2;
  c.heads = 2;
  c.max_len = len;
  return c;
}

// Full context ending in a single MASK.
ClozeSample full_sample(const Vocab& vocab, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<EntityId> pick(Vocab::kFirstEntity, static_cast<EntityId>(vocab.size() - 1));
  ClozeSample s;
  for (std::size_t i = 0; i + 1 < len; ++i) s.input.push_back(pick(rng));
  s.input.push_back(Vocab::kMask);
  s.valid.assign(len, 1);
  s.targets = {{len - 1, Vocab::kFirstEntity}};
  return s;
}

KnowledgeGraph bench_graph(std::size_t nodes, std::size_t edges_per_node, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<EntityId> pick(Vocab::kFirstEntity, static_cast<EntityId>(nodes + 1));
  std::uniform_int_distribution<RelationId> rel(0, 3);
  std::vector<Triple> t;
  for (std::size_t i = 0; i < nodes * edges_per_node; ++i) t.push_back({pick(rng), rel(rng), pick(rng)});
  return KnowledgeGraph(nodes + 2, {"r0", "r1", "r2", "r3"}, t);
}

void BM_PredictScores(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto vocab = bench_vocab();
  const TscrModel model(bench_config(len), vocab.non_item_mask(), 1);
  const auto sample = full_sample(vocab, len, 2);
  for (auto _ : state) benchmark::DoNotOptimize(predict_scores(model, sample));
}
BENCHMARK(BM_PredictScores)->Arg(10)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_LossAndBackward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto vocab = bench_vocab();
  const TscrModel model(bench_config(len), vocab.non_item_mask(), 1);
  const auto sample = full_sample(vocab, len, 2);
  const auto& blocked = model.blocked();
  for (auto _ : state) {
    Tape tape;
    const Var loss = sample_loss(tape, model.params(), model.config(),
                                 std::span<const std::uint8_t>(blocked), sample);
    benchmark::DoNotOptimize(backward(tape, loss));
  }
}
BENCHMARK(BM_LossAndBackward)->Arg(10)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_ShortestPath(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0));
  const auto g = bench_graph(nodes, 3, 7);
  Rng rng(9);
  std::uniform_int_distribution<EntityId> pick(Vocab::kFirstEntity, static_cast<EntityId>(nodes + 1));
  for (auto _ : state) benchmark::DoNotOptimize(shortest_path_astar(g, pick(rng), pick(rng), kDefaultMaxHops));
}
BENCHMARK(BM_ShortestPath)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_RgcnForward(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0));
  const auto g = bench_graph(nodes, 3, 7);
  RgcnConfig c;
  c.dim = 64;
  const auto layer = init_rgcn(g, c);
  for (auto _ : state) benchmark::DoNotOptimize(rgcn_embeddings(g, layer, c));
}
BENCHMARK(BM_RgcnForward)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
