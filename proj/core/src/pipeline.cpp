#include "tscr/pipeline.hpp"

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "tscr/checkpoint.hpp"
#include "tscr/rgcn.hpp"

namespace tscr {

namespace fs = std::filesystem;

namespace {

std::vector<UserSequence> sequences_of(const std::vector<Dialog>& dialogs, const Vocab& vocab,
                                       std::size_t* empty) {
  std::vector<UserSequence> out;
  for (const auto& d : dialogs) {
    if (auto seq = extract_sequence(d, vocab)) {
      out.push_back(std::move(*seq));
    } else {
      ++*empty;
    }
  }
  return out;
}

KnowledgeGraph graph_for(const fs::path& triples, const Vocab& vocab) {
  return load_triples(triples, vocab).graph;
}

}  // namespace

PrepareSummary prepare_corpus(const fs::path& dialogs, const fs::path& dictionary,
                              const fs::path& out_dir, std::uint64_t seed) {
  auto corpus = load_dialogs(dialogs, dictionary);
  const auto split = split_dataset(corpus.dialogs, seed);
  PrepareSummary summary;
  summary.dialogs = corpus.dialogs.size();
  summary.dropped_mentions = corpus.dropped_mentions;
  const auto train = sequences_of(split.train, corpus.vocab, &summary.empty_dialogs);
  const auto valid = sequences_of(split.valid, corpus.vocab, &summary.empty_dialogs);
  const auto test = sequences_of(split.test, corpus.vocab, &summary.empty_dialogs);
  summary.train = train.size();
  summary.valid = valid.size();
  summary.test = test.size();

  fs::create_directories(out_dir);
  write_entity_dictionary(out_dir / "entities.tsv", corpus.vocab);
  write_sequences(out_dir / "train.jsonl", train, corpus.vocab, false);
  write_sequences(out_dir / "valid.jsonl", valid, corpus.vocab, false);
  write_sequences(out_dir / "test.jsonl", test, corpus.vocab, false);
  nlohmann::ordered_json report = {{"dialogs", summary.dialogs},
                                   {"empty_dialogs", summary.empty_dialogs},
                                   {"dropped_mentions", summary.dropped_mentions},
                                   {"train", summary.train},
                                   {"valid", summary.valid},
                                   {"test", summary.test}};
  std::ofstream(out_dir / "prepare.json") << report.dump(2) << '\n';
  return summary;
}

PreparedData load_prepared(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
  PreparedData data;
  data.vocab = load_entity_dictionary(dir / "entities.tsv");
  data.train = read_sequences(dir / "train.jsonl", data.vocab);
  data.valid = read_sequences(dir / "valid.jsonl", data.vocab);
  data.test = read_sequences(dir / "test.jsonl", data.vocab);
  return data;
}

std::vector<double> pretrain_kg_file(const fs::path& data_dir, const fs::path& triples,
                                     const TrainConfig& config, const fs::path& out_embeddings) {
  const auto vocab = load_entity_dictionary(data_dir / "entities.tsv");
  const auto graph = graph_for(triples, vocab);
  auto result = pretrain_embeddings(graph, config.rgcn());
  export_embeddings(result.embeddings, out_embeddings);
  return result.loss_history;
}

std::size_t augment_file(const fs::path& data_dir, const fs::path& triples,
                         const fs::path& in_sequences, const fs::path& out_sequences,
                         int max_hops) {
  const auto vocab = load_entity_dictionary(data_dir / "entities.tsv");
  const auto graph = graph_for(triples, vocab);
  const auto seqs = read_sequences(in_sequences, vocab);
  const auto augmented = augment_all(graph, seqs, max_hops);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    changed += augmented[i].elements != seqs[i].elements ? 1 : 0;
  write_sequences(out_sequences, augmented, vocab, true);
  return changed;
}

namespace {

TrainData load_train_data(const TrainConfig& config, const TrainInputs& inputs,
                          const PreparedData& prepared) {
  TrainData data;
  data.vocab = &prepared.vocab;
  data.train = prepared.train;
  data.valid = prepared.valid;
  if (config.uses_kgseq()) {
    if (!inputs.augmented)
      throw std::invalid_argument("this configuration trains on augmented sequences; pass them");
    data.augmented = read_sequences(*inputs.augmented, prepared.vocab);
  }
  if (config.uses_offline()) {
    if (!inputs.embeddings)
      throw std::invalid_argument("this configuration needs offline embeddings; pass them");
    data.offline = load_embeddings(*inputs.embeddings, prepared.vocab.size(), config.model.dim);
  }
  return data;
}

}  // namespace

TrainResult train_from_files(const TrainConfig& config, const TrainInputs& inputs,
                             std::ostream* log) {
  const auto prepared = load_prepared(inputs.data_dir);
  return train(config, load_train_data(config, inputs, prepared), log);
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_dir,
                               const std::string& split) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  const auto prepared = load_prepared(data_dir);
  const auto ckpt = load_checkpoint(checkpoint, prepared.vocab);
  const std::vector<UserSequence>* seqs = nullptr;
  if (split == "test") seqs = &prepared.test;
  else if (split == "valid") seqs = &prepared.valid;
  else if (split == "train") seqs = &prepared.train;
  else throw std::invalid_argument("unknown split: " + split);
  const auto samples = build_eval_set(ckpt.config, prepared.vocab, *seqs);
  return evaluate(ckpt.model, samples);
}

AblationReport run_ablations(const TrainConfig& base, const TrainInputs& inputs,
                             std::ostream* log) {
  const auto prepared = load_prepared(inputs.data_dir);
  TrainConfig full = base;
  full.variant = Variant::kTscrKg;
  full.ablations = {};
  const std::vector<std::pair<std::string, Ablations>> rows = {
      {"full", {}},
      {"no_entity", {true, false, false, false}},
      {"no_item", {false, true, false, false}},
      {"no_offline", {false, false, true, false}},
      {"no_kgseq", {false, false, false, true}},
  };
  AblationReport report;
  for (const auto& [name, flags] : rows) {
    TrainConfig config = full;
    config.ablations = flags;
    if (log) *log << "== " << name << '\n';
    const auto result = train(config, load_train_data(config, inputs, prepared), log);
    const auto samples = build_eval_set(config, prepared.vocab, prepared.test);
    report.emplace_back(name, evaluate(result.model, samples));
  }
  return report;
}

}  // namespace tscr
