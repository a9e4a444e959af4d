#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tscr/checkpoint.hpp"
#include "tscr/corpus.hpp"
#include "tscr/optim.hpp"
#include "tscr/tensor.hpp"

namespace tscr {

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_len = 100;
  double dropout = 0.2;
  double mask_proportion = 0.5;
  std::size_t ffn_multiplier = 4;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
  std::size_t ffn_dim() const { return dim * ffn_multiplier; }
};

KeyValues model_config_to_kv(const ModelConfig& config);
/// Applies recognized keys onto `config`; unrecognized keys are ignored.
void apply_model_config(ModelConfig& config, const KeyValues& kv);

/// Names of the per-layer parameters.
namespace param_names {
inline constexpr const char* kEntity = "entity_embeddings";
inline constexpr const char* kPosition = "position_embeddings";
std::string layer(std::size_t n, const char* leaf);
inline constexpr const char* kHeadW1 = "head.w1";
inline constexpr const char* kHeadB1 = "head.b1";
inline constexpr const char* kHeadBias = "head.out_bias";
}  // namespace param_names

/// Bidirectional Transformer recommender. Parameters:
///   entity table [V x d] (also the tied output projection), position table
///   [K x d], per layer Q/K/V/O projections, two-layer GELU PFFN and two
///   layer-norm pairs, and a d->d GELU head with an output bias over V.
class TscrModel {
 public:
  TscrModel(ModelConfig config, std::vector<std::uint8_t> blocked, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return blocked_.size(); }
  /// 1 for every id that can never be recommended (specials, non-items).
  const std::vector<std::uint8_t>& blocked() const { return blocked_; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Overwrites the entity table (offline initialization).
  void set_entity_embeddings(const Tensor& table);

 private:
  ModelConfig config_;
  std::vector<std::uint8_t> blocked_;
  ParameterSet params_;
};

/// Parameters registered on a tape by name.
template <class T>
class ParamVars {
 public:
  ParamVars(BasicTape<T>& tape, const BasicParameterSet<T>& params);
  Var operator[](const std::string& name) const;

 private:
  std::map<std::string, Var> vars_;
};

/// h0_k = s_{id_k} + p_{first_position + k}; rows whose id is PAD are zeroed.
template <class T>
Var embed_inputs(BasicTape<T>& tape, const ParamVars<T>& vars, std::span<const EntityId> ids,
                 std::size_t first_position, std::size_t vocab_size);

/// Multi-head self-attention with invalid keys blocked. No causal mask.
template <class T>
Var multi_head_attention(BasicTape<T>& tape, const ParamVars<T>& vars, const ModelConfig& config,
                         std::size_t layer, Var x, std::span<const std::uint8_t> valid);

/// One encoder layer, applying the position-wise FFN sub-layer and then the
/// attention sub-layer, each wrapped as LayerNorm(H + Dropout(sublayer(H))).
template <class T>
Var encoder_layer(BasicTape<T>& tape, const ParamVars<T>& vars, const ModelConfig& config,
                  std::size_t layer, Var h, std::span<const std::uint8_t> valid,
                  double dropout_rate, Rng* dropout_rng);

/// Item distributions for the selected rows of the final hidden states:
/// softmax(GELU(h W1 + b1) E^T + b) with `blocked` ids at probability 0.
template <class T>
Var predict_probs(BasicTape<T>& tape, const ParamVars<T>& vars, Var hidden,
                  std::span<const std::size_t> rows, std::span<const std::uint8_t> blocked);

/// Mean negative log-likelihood of the targets under `probs`.
template <class T>
Var cloze_loss(BasicTape<T>& tape, Var probs, std::span<const EntityId> targets,
               std::size_t* clamped = nullptr);

struct ForwardOptions {
  double dropout_rate = 0.0;
  Rng* dropout_rng = nullptr;  // null: eval mode
  /// Skip the leading PAD run. Exact: PAD keys are masked out of attention
  /// and PAD rows never feed valid rows.
  bool trim_leading_pad = true;
};

template <class T>
struct ForwardResult {
  Var probs;                            // [targets x V]
  std::vector<std::size_t> positions;  // sample positions of the rows
};

/// Runs the full model on `sample` (length K) and returns distributions at
/// the given sample positions.
template <class T>
ForwardResult<T> forward(BasicTape<T>& tape, const BasicParameterSet<T>& params,
                         const ModelConfig& config, std::span<const std::uint8_t> blocked,
                         const ClozeSample& sample, std::span<const std::size_t> positions,
                         const ForwardOptions& options = {});

/// Cloze loss of one padded sample at its target positions.
template <class T>
Var sample_loss(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                std::span<const std::uint8_t> blocked, const ClozeSample& sample,
                const ForwardOptions& options = {}, std::size_t* clamped = nullptr);

/// Eval-mode distributions at every target position of `sample`.
Tensor predict_scores(const TscrModel& model, const ClozeSample& sample);

struct Recommendation {
  EntityId item = 0;
  float score = 0.0f;

  friend bool operator==(const Recommendation&, const Recommendation&) = default;
};

/// Ranks items after [context..., MASK]: probability descending, ties by the
/// smaller id. Returns min(k, item count) entries.
std::vector<Recommendation> recommend_topk(const TscrModel& model, std::span<const EntityId> context,
                                           std::size_t k);

/// 1-based rank of `target` among all unblocked ids of `probs` with the
/// same tie-break as recommend_topk.
std::size_t rank_of(std::span<const float> probs, std::span<const std::uint8_t> blocked,
                    EntityId target);

}  // namespace tscr
