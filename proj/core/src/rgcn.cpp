#include "tscr/rgcn.hpp"

#include <random>

#include "tscr/checkpoint.hpp"
#include "tscr/init.hpp"

namespace tscr {

template <class T>
Var rgcn_layer(BasicTape<T>& tape, std::span<const Triple> triples, std::size_t node_count,
               Var embeddings, Var self_weight, std::span<const Var> relation_weights) {
  Var total = matmul_nt(tape, embeddings, self_weight);
  std::vector<std::vector<std::int32_t>> src(relation_weights.size()), dst(relation_weights.size());
  for (const auto& t : triples) {
    const auto r = static_cast<std::size_t>(t.relation);
    if (r >= relation_weights.size()) throw std::out_of_range("rgcn_layer: relation without weight");
    src[r].push_back(t.head);
    dst[r].push_back(t.tail);
  }
  for (std::size_t r = 0; r < relation_weights.size(); ++r) {
    if (src[r].empty()) continue;
    Var messages = scatter_add_rows(tape, embeddings, std::span<const std::int32_t>(src[r]),
                                    std::span<const std::int32_t>(dst[r]), node_count);
    total = add(tape, total, matmul_nt(tape, messages, relation_weights[r]));
  }
  return relu(tape, total);
}

template Var rgcn_layer<float>(BasicTape<float>&, std::span<const Triple>, std::size_t, Var, Var,
                               std::span<const Var>);
template Var rgcn_layer<double>(BasicTape<double>&, std::span<const Triple>, std::size_t, Var, Var,
                                std::span<const Var>);

EntityEmbeddings rgcn_forward(const KnowledgeGraph& graph, const EntityEmbeddings& input,
                              const RgcnLayer& layer) {
  const auto d = input.dim();
  if (input.rows() != graph.node_count())
    throw std::invalid_argument("rgcn_forward: embedding rows != graph nodes");
  if (layer.self_weight.shape() != Shape{d, d})
    throw std::invalid_argument("rgcn_forward: self weight must be [d x d]");
  if (layer.relation_weights.size() < graph.relation_count())
    throw std::invalid_argument("rgcn_forward: missing relation weights");
  Tape tape;
  const Var x = tape.input(input.matrix);
  const Var w = tape.input(layer.self_weight);
  std::vector<Var> wr;
  for (const auto& m : layer.relation_weights) {
    if (m.shape() != Shape{d, d}) throw std::invalid_argument("rgcn_forward: W_r must be [d x d]");
    wr.push_back(tape.input(m));
  }
  const Var out = rgcn_layer(tape, std::span<const Triple>(graph.triples()), graph.node_count(), x,
                             w, std::span<const Var>(wr));
  return {tape.value(out)};
}

std::vector<Triple> layer_triples(const KnowledgeGraph& graph, bool inverse_relations) {
  std::vector<Triple> out = graph.triples();
  if (inverse_relations) {
    const auto offset = static_cast<RelationId>(graph.relation_count());
    for (const auto& t : graph.triples())
      out.push_back({t.tail, static_cast<RelationId>(t.relation + offset), t.head});
  }
  return out;
}

RgcnModel init_rgcn(const KnowledgeGraph& graph, const RgcnConfig& config) {
  if (config.dim == 0) throw std::invalid_argument("rgcn dim must be positive");
  Rng rng(config.seed);
  const auto d = config.dim;
  RgcnModel model;
  model.relation_count = graph.relation_count();
  model.layer_relation_count = graph.relation_count() * (config.inverse_relations ? 2 : 1);
  model.params.add("input_embeddings",
                   normal_tensor({graph.node_count(), d}, config.init_std, rng));
  const double wstd = 1.0 / std::sqrt(static_cast<double>(d));
  model.params.add("self_weight", normal_tensor({d, d}, wstd, rng));
  for (std::size_t r = 0; r < model.layer_relation_count; ++r)
    model.params.add("relation_weight." + std::to_string(r), normal_tensor({d, d}, wstd, rng));
  model.params.add("relation_diag", normal_tensor({std::max<std::size_t>(1, model.relation_count), d}, 1.0, rng));
  return model;
}

namespace {

struct RgcnGraph {
  Var top;
  Var diag;
};

RgcnGraph build_rgcn(Tape& tape, const KnowledgeGraph& graph, const RgcnModel& model,
                     std::span<const Triple> triples) {
  const Var x = tape.parameter(model.params.get("input_embeddings"), "input_embeddings");
  const Var w = tape.parameter(model.params.get("self_weight"), "self_weight");
  std::vector<Var> wr;
  for (std::size_t r = 0; r < model.layer_relation_count; ++r) {
    const auto name = "relation_weight." + std::to_string(r);
    wr.push_back(tape.parameter(model.params.get(name), name));
  }
  const Var diag = tape.parameter(model.params.get("relation_diag"), "relation_diag");
  const Var top = rgcn_layer(tape, triples, graph.node_count(), x, w, std::span<const Var>(wr));
  return {top, diag};
}

Var score_vars(Tape& tape, const RgcnGraph& g, std::span<const Triple> batch) {
  std::vector<std::int32_t> heads, rels, tails;
  for (const auto& t : batch) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  const Var h = gather_rows(tape, g.top, std::span<const std::int32_t>(heads));
  const Var r = gather_rows(tape, g.diag, std::span<const std::int32_t>(rels));
  const Var t = gather_rows(tape, g.top, std::span<const std::int32_t>(tails));
  return row_sum(tape, mul(tape, mul(tape, h, r), t));
}

}  // namespace

EntityEmbeddings rgcn_embeddings(const KnowledgeGraph& graph, const RgcnModel& model,
                                 const RgcnConfig& config) {
  Tape tape;
  const auto triples = layer_triples(graph, config.inverse_relations);
  const auto g = build_rgcn(tape, graph, model, triples);
  EntityEmbeddings out{tape.value(g.top)};
  std::vector<std::uint8_t> touched(graph.node_count(), 0);
  for (const auto& t : graph.triples()) {
    touched[static_cast<std::size_t>(t.head)] = 1;
    touched[static_cast<std::size_t>(t.tail)] = 1;
  }
  Rng rng(config.seed ^ 0x5eed5eedULL);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    if (touched[i] && i >= static_cast<std::size_t>(Vocab::kFirstEntity)) continue;
    for (auto& v : out.matrix.row(i)) v = static_cast<float>(normal(rng));
  }
  return out;
}

std::vector<double> score_triples(const KnowledgeGraph& graph, const RgcnModel& model,
                                  const RgcnConfig& config, std::span<const Triple> triples) {
  Tape tape;
  const auto all = layer_triples(graph, config.inverse_relations);
  const auto g = build_rgcn(tape, graph, model, all);
  const auto& s = tape.value(score_vars(tape, g, triples));
  return {s.data().begin(), s.data().end()};
}

PretrainResult pretrain_embeddings(const KnowledgeGraph& graph, const RgcnConfig& config) {
  if (graph.triple_count() == 0) throw std::invalid_argument("pretraining needs at least one triple");
  PretrainResult result;
  result.model = init_rgcn(graph, config);
  const auto all = layer_triples(graph, config.inverse_relations);

  std::vector<EntityId> nodes;
  for (std::size_t i = Vocab::kFirstEntity; i < graph.node_count(); ++i) {
    const auto id = static_cast<EntityId>(i);
    if (!graph.neighbors(id).empty()) nodes.push_back(id);
  }
  if (nodes.empty()) nodes.push_back(graph.triples().front().head);

  Rng rng(config.seed + 1);
  std::uniform_int_distribution<std::size_t> pick_node(0, nodes.size() - 1);
  std::bernoulli_distribution corrupt_head(0.5);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  AdamState state;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<Triple> batch = graph.triples();
    std::vector<float> labels(batch.size(), 1.0f);
    for (const auto& t : graph.triples()) {
      for (int k = 0; k < config.negatives; ++k) {
        Triple neg = t;
        if (corrupt_head(rng)) {
          neg.head = nodes[pick_node(rng)];
        } else {
          neg.tail = nodes[pick_node(rng)];
        }
        batch.push_back(neg);
        labels.push_back(0.0f);
      }
    }
    Tape tape;
    const auto g = build_rgcn(tape, graph, result.model, all);
    const Var scores = score_vars(tape, g, batch);
    const Var loss = bce_with_logits(tape, scores, std::span<const float>(labels));
    result.loss_history.push_back(tape.value(loss)[0]);
    auto grads = backward(tape, loss);
    adam_step(result.model.params, grads, state, adam);
  }
  result.embeddings = rgcn_embeddings(graph, result.model, config);
  return result;
}

void export_embeddings(const EntityEmbeddings& embeddings, const std::filesystem::path& path) {
  write_tensor_container(path, {{kEmbeddingTensorName, embeddings.matrix}});
}

EntityEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t rows,
                                 std::size_t dim) {
  auto tensors = read_tensor_container(path);
  for (auto& t : tensors) {
    if (t.name != kEmbeddingTensorName) continue;
    if (t.value.rank() != 2 || t.value.dim(1) != dim)
      throw FormatError(path.string() + ": embedding dimension " +
                        std::to_string(t.value.rank() == 2 ? t.value.dim(1) : 0) +
                        " does not match model dimension " + std::to_string(dim));
    if (t.value.dim(0) != rows)
      throw FormatError(path.string() + ": embedding rows " + std::to_string(t.value.dim(0)) +
                        " do not match vocabulary size " + std::to_string(rows));
    return {std::move(t.value)};
  }
  throw FormatError(path.string() + ": no tensor named " + kEmbeddingTensorName);
}

}  // namespace tscr
