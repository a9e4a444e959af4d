#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tscr/kg.hpp"
#include "tscr/optim.hpp"
#include "tscr/tensor.hpp"

namespace tscr {

/// One R-GCN layer: n'_e = ReLU( sum_r sum_{e' -r-> e} W_r n_e' + W n_e ),
/// with every normalization constant Z_{e,r} fixed at 1.
struct RgcnLayer {
  Tensor self_weight;                   // W   [d x d]
  std::vector<Tensor> relation_weights;  // W_r [d x d], one per relation
};

struct EntityEmbeddings {
  Tensor matrix;  // [vocab size x d]

  std::size_t rows() const { return matrix.rows(); }
  std::size_t dim() const { return matrix.cols(); }
};

/// Tape form of the layer. `relation_weights` holds one Var per relation id
/// used in `triples`.
template <class T>
Var rgcn_layer(BasicTape<T>& tape, std::span<const Triple> triples, std::size_t node_count,
               Var embeddings, Var self_weight, std::span<const Var> relation_weights);

EntityEmbeddings rgcn_forward(const KnowledgeGraph& graph, const EntityEmbeddings& input,
                              const RgcnLayer& layer);

struct RgcnConfig {
  std::size_t dim = 32;
  int epochs = 100;
  double learning_rate = 0.01;
  int negatives = 4;  // corruptions per positive triple
  bool inverse_relations = true;
  double init_std = 0.1;
  std::uint64_t seed = 42;
};

/// Trainable state of the pretraining model: free input embeddings, one
/// R-GCN layer, and a diagonal (DistMult-style) scoring vector per relation.
struct RgcnModel {
  ParameterSet params;
  std::size_t relation_count = 0;       // relations in the source graph
  std::size_t layer_relation_count = 0;  // including inverse copies
};

RgcnModel init_rgcn(const KnowledgeGraph& graph, const RgcnConfig& config);

/// Triples fed to the layer: the graph's triples, plus reversed copies under
/// relation ids offset by relation_count when inverse relations are on.
std::vector<Triple> layer_triples(const KnowledgeGraph& graph, bool inverse_relations);

/// Top-layer embeddings of `model`. Rows for PAD, MASK and nodes without any
/// triple are replaced by seeded N(0, 0.02) rows.
EntityEmbeddings rgcn_embeddings(const KnowledgeGraph& graph, const RgcnModel& model,
                                 const RgcnConfig& config);

/// Bilinear score sum_k h_k r_k t_k for each triple, on top-layer embeddings.
std::vector<double> score_triples(const KnowledgeGraph& graph, const RgcnModel& model,
                                  const RgcnConfig& config, std::span<const Triple> triples);

struct PretrainResult {
  EntityEmbeddings embeddings;
  RgcnModel model;
  std::vector<double> loss_history;
};

/// Link-prediction pretraining: positives are the graph's triples, each with
/// `negatives` uniformly corrupted heads or tails, scored bilinearly and
/// trained with binary cross-entropy under Adam. Throws on an empty graph.
PretrainResult pretrain_embeddings(const KnowledgeGraph& graph, const RgcnConfig& config);

inline constexpr const char* kEmbeddingTensorName = "entity_embeddings";

void export_embeddings(const EntityEmbeddings& embeddings, const std::filesystem::path& path);
/// Throws FormatError naming both dimensions when the file's shape does not
/// match [rows x dim].
EntityEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t rows,
                                 std::size_t dim);

}  // namespace tscr
