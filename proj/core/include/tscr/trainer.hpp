#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tscr/corpus.hpp"
#include "tscr/eval.hpp"
#include "tscr/kg.hpp"
#include "tscr/model.hpp"
#include "tscr/optim.hpp"
#include "tscr/rgcn.hpp"

namespace tscr {

enum class Variant { kTscr, kTscrKg };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct Ablations {
  bool no_entity = false;
  bool no_item = false;
  bool no_offline = false;
  bool no_kgseq = false;

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 256;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double grad_clip = 5.0;
  int epochs = 50;
  std::uint64_t seed = 42;
  Variant variant = Variant::kTscrKg;
  Ablations ablations;
  int max_hops = kDefaultMaxHops;
  /// Validation cutoff used for model selection.
  std::size_t select_k = 10;
  // Offline R-GCN pretraining; dimension and seed come from the fields above.
  int kg_epochs = 100;
  double kg_learning_rate = 0.01;
  int kg_negatives = 4;
  bool kg_inverse_relations = true;

  void validate() const;
  /// Flags in force: the plain variant never touches the KG.
  Ablations effective() const;
  bool uses_offline() const { return !effective().no_offline; }
  bool uses_kgseq() const { return !effective().no_kgseq; }
  RgcnConfig rgcn() const;
};

KeyValues train_config_to_kv(const TrainConfig& config);
/// Unknown keys are an error so typos in config files surface.
TrainConfig train_config_from_kv(const KeyValues& kv, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path);

/// Sequences that feed sample generation, originals first. Applies
/// no_entity stripping. `augmented` must align with `originals` when the
/// config uses KG sequences.
std::vector<UserSequence> training_sequences(const TrainConfig& config, const Vocab& vocab,
                                             const std::vector<UserSequence>& originals,
                                             const std::vector<UserSequence>* augmented);

/// Augments every sequence; unchanged sequences are kept as copies.
std::vector<UserSequence> augment_all(const KnowledgeGraph& graph,
                                      const std::vector<UserSequence>& seqs, int max_hops);

/// Cloze samples (A and B per sequence), with no_item context removal,
/// padded to K. Consumes `rng` in sequence order.
std::vector<ClozeSample> build_training_set(const TrainConfig& config, const Vocab& vocab,
                                            const std::vector<UserSequence>& seqs, Rng& rng);

/// Terminal-mask evaluation samples with the config's input filters applied.
std::vector<ClozeSample> build_eval_set(const TrainConfig& config, const Vocab& vocab,
                                        const std::vector<UserSequence>& seqs);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_recall = 0.0;  // at select_k
  double valid_mrr = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainData {
  const Vocab* vocab = nullptr;
  std::vector<UserSequence> train;
  std::vector<UserSequence> valid;
  /// Aligned with `train`; required when the config uses KG sequences.
  std::optional<std::vector<UserSequence>> augmented;
  /// Required when the config uses offline initialization.
  std::optional<EntityEmbeddings> offline;
};

struct TrainResult {
  TscrModel model;  // best validation epoch (or the initialization for 0 epochs)
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  std::size_t clamped_targets = 0;
  std::size_t training_samples = 0;  // per epoch
};

/// Builds the initial model: seeded init, then the offline entity table when
/// the config asks for it.
TscrModel initial_model(const TrainConfig& config, const Vocab& vocab,
                        const std::optional<EntityEmbeddings>& offline);

/// Runs the epoch loop. Throws NumericError naming the epoch and batch when
/// the loss or a gradient becomes non-finite. `log` receives one line per
/// epoch when non-null.
TrainResult train(const TrainConfig& config, const TrainData& data, std::ostream* log = nullptr);

struct Checkpoint {
  TscrModel model;
  TrainConfig config;
  int epoch = 0;
  std::vector<EpochRecord> history;
};

/// Writes the parameter container at `path` and the key=value metadata at
/// `path` + ".meta".
void save_checkpoint(const std::filesystem::path& path, const TscrModel& model,
                     const TrainConfig& config, int epoch, const std::vector<EpochRecord>& history);
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab);
std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path);

}  // namespace tscr
