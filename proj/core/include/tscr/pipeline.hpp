#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "tscr/corpus.hpp"
#include "tscr/eval.hpp"
#include "tscr/kg.hpp"
#include "tscr/trainer.hpp"

// File-level steps behind the command line. A prepared data directory holds
//   entities.tsv                   the dictionary, in id order
//   train.jsonl valid.jsonl test.jsonl   sequence dumps per split
//   prepare.json                   counts

namespace tscr {

struct PrepareSummary {
  std::size_t dialogs = 0;
  std::size_t empty_dialogs = 0;
  std::size_t dropped_mentions = 0;
  std::size_t train = 0, valid = 0, test = 0;  // sequences per split
};

PrepareSummary prepare_corpus(const std::filesystem::path& dialogs,
                              const std::filesystem::path& dictionary,
                              const std::filesystem::path& out_dir, std::uint64_t seed);

struct PreparedData {
  Vocab vocab;
  std::vector<UserSequence> train, valid, test;
};

PreparedData load_prepared(const std::filesystem::path& dir);

/// Pretrains on the graph and writes the embedding file. Returns the loss
/// curve.
std::vector<double> pretrain_kg_file(const std::filesystem::path& data_dir,
                                     const std::filesystem::path& triples,
                                     const TrainConfig& config,
                                     const std::filesystem::path& out_embeddings);

/// Augments a sequence dump. Returns the number of sequences that changed.
std::size_t augment_file(const std::filesystem::path& data_dir,
                         const std::filesystem::path& triples,
                         const std::filesystem::path& in_sequences,
                         const std::filesystem::path& out_sequences, int max_hops);

struct TrainInputs {
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> embeddings;  // offline entity table
  std::optional<std::filesystem::path> augmented;   // augmented train.jsonl
};

/// Loads what the config needs and trains. A missing embedding file is an
/// error unless the config skips offline initialization.
TrainResult train_from_files(const TrainConfig& config, const TrainInputs& inputs,
                             std::ostream* log = nullptr);

EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_dir, const std::string& split);

/// Trains and evaluates the five TSCRKG rows: full, no_entity, no_item,
/// no_offline, no_kgseq.
AblationReport run_ablations(const TrainConfig& base, const TrainInputs& inputs,
                             std::ostream* log = nullptr);

}  // namespace tscr
