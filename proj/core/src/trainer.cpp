#include "tscr/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tscr/checkpoint.hpp"
#include "tscr/init.hpp"

namespace tscr {

namespace {

// derive_seed tags; one stream per consumer.
constexpr std::uint64_t kSeedInit = 1;
constexpr std::uint64_t kSeedMask = 2;
constexpr std::uint64_t kSeedOrder = 3;
constexpr std::uint64_t kSeedDropout = 4;
constexpr std::uint64_t kSeedKg = 5;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("bad boolean for " + key + ": " + v);
}

template <class Fn>
auto parse_number(const std::string& key, const std::string& v, Fn fn) {
  try {
    std::size_t used = 0;
    auto out = fn(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw std::invalid_argument("bad value for " + key + ": " + v);
  }
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::kTscr ? "tscr" : "tscrkg"; }

Variant parse_variant(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "tscr") return Variant::kTscr;
  if (t == "tscrkg") return Variant::kTscrKg;
  throw std::invalid_argument("unknown variant: " + text);
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
  if (select_k == 0) throw std::invalid_argument("select_k must be positive");
  if (kg_epochs < 0 || kg_negatives < 1 || !(kg_learning_rate > 0.0))
    throw std::invalid_argument("kg_epochs >= 0, kg_negatives >= 1 and kg_learning_rate > 0 required");
  const auto eff = effective();
  if (eff.no_entity && eff.no_item)
    throw std::invalid_argument("no_entity together with no_item leaves no context to learn from");
}

Ablations TrainConfig::effective() const {
  Ablations a = ablations;
  if (variant == Variant::kTscr) {
    a.no_offline = true;
    a.no_kgseq = true;
  }
  return a;
}

RgcnConfig TrainConfig::rgcn() const {
  RgcnConfig r;
  r.dim = model.dim;
  r.epochs = kg_epochs;
  r.learning_rate = kg_learning_rate;
  r.negatives = kg_negatives;
  r.inverse_relations = kg_inverse_relations;
  r.seed = derive_seed(seed, kSeedKg);
  return r;
}

KeyValues train_config_to_kv(const TrainConfig& c) {
  KeyValues kv = model_config_to_kv(c.model);
  const KeyValues rest = {{"batch_size", std::to_string(c.batch_size)},
                          {"learning_rate", fmt(c.learning_rate)},
                          {"weight_decay", fmt(c.weight_decay)},
                          {"grad_clip", fmt(c.grad_clip)},
                          {"epochs", std::to_string(c.epochs)},
                          {"seed", std::to_string(c.seed)},
                          {"variant", to_string(c.variant)},
                          {"no_entity", c.ablations.no_entity ? "1" : "0"},
                          {"no_item", c.ablations.no_item ? "1" : "0"},
                          {"no_offline", c.ablations.no_offline ? "1" : "0"},
                          {"no_kgseq", c.ablations.no_kgseq ? "1" : "0"},
                          {"max_hops", std::to_string(c.max_hops)},
                          {"select_k", std::to_string(c.select_k)},
                          {"kg_epochs", std::to_string(c.kg_epochs)},
                          {"kg_learning_rate", fmt(c.kg_learning_rate)},
                          {"kg_negatives", std::to_string(c.kg_negatives)},
                          {"kg_inverse_relations", c.kg_inverse_relations ? "1" : "0"}};
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

TrainConfig train_config_from_kv(const KeyValues& kv, TrainConfig c) {
  const auto model_keys = model_config_to_kv(ModelConfig{});
  auto stoul = [](const std::string& s, std::size_t* i) { return std::stoul(s, i); };
  auto stoull = [](const std::string& s, std::size_t* i) { return std::stoull(s, i); };
  auto stoi = [](const std::string& s, std::size_t* i) { return std::stoi(s, i); };
  auto stod = [](const std::string& s, std::size_t* i) { return std::stod(s, i); };
  for (const auto& [k, v] : kv) {
    const bool is_model = std::any_of(model_keys.begin(), model_keys.end(),
                                      [&](const auto& p) { return p.first == k; });
    if (is_model) {
      apply_model_config(c.model, {{k, v}});
    } else if (k == "batch_size") {
      c.batch_size = parse_number(k, v, stoul);
    } else if (k == "learning_rate") {
      c.learning_rate = parse_number(k, v, stod);
    } else if (k == "weight_decay") {
      c.weight_decay = parse_number(k, v, stod);
    } else if (k == "grad_clip") {
      c.grad_clip = parse_number(k, v, stod);
    } else if (k == "epochs") {
      c.epochs = parse_number(k, v, stoi);
    } else if (k == "seed") {
      c.seed = parse_number(k, v, stoull);
    } else if (k == "variant") {
      c.variant = parse_variant(v);
    } else if (k == "no_entity") {
      c.ablations.no_entity = parse_bool(k, v);
    } else if (k == "no_item") {
      c.ablations.no_item = parse_bool(k, v);
    } else if (k == "no_offline") {
      c.ablations.no_offline = parse_bool(k, v);
    } else if (k == "no_kgseq") {
      c.ablations.no_kgseq = parse_bool(k, v);
    } else if (k == "max_hops") {
      c.max_hops = parse_number(k, v, stoi);
    } else if (k == "select_k") {
      c.select_k = parse_number(k, v, stoul);
    } else if (k == "kg_epochs") {
      c.kg_epochs = parse_number(k, v, stoi);
    } else if (k == "kg_learning_rate") {
      c.kg_learning_rate = parse_number(k, v, stod);
    } else if (k == "kg_negatives") {
      c.kg_negatives = parse_number(k, v, stoi);
    } else if (k == "kg_inverse_relations") {
      c.kg_inverse_relations = parse_bool(k, v);
    } else {
      throw std::invalid_argument("unknown config key: " + k);
    }
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_kv(read_key_values(path));
}

// ---------------------------------------------------------------------------

std::vector<UserSequence> augment_all(const KnowledgeGraph& graph,
                                      const std::vector<UserSequence>& seqs, int max_hops) {
  std::vector<UserSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(augment_sequence(graph, s, max_hops));
  return out;
}

std::vector<UserSequence> training_sequences(const TrainConfig& config, const Vocab& vocab,
                                             const std::vector<UserSequence>& originals,
                                             const std::vector<UserSequence>* augmented) {
  const auto eff = config.effective();
  if (eff.no_entity && eff.no_item)
    throw std::invalid_argument("no_entity together with no_item leaves no context to learn from");
  auto prepare = [&](const UserSequence& s) { return eff.no_entity ? strip_non_items(s, vocab) : s; };
  std::vector<UserSequence> out;
  for (const auto& s : originals) out.push_back(prepare(s));
  if (!eff.no_kgseq) {
    if (!augmented) throw std::invalid_argument("KG sequences requested but none supplied");
    if (augmented->size() != originals.size())
      throw std::invalid_argument("augmented sequences do not align with the originals");
    for (const auto& s : *augmented) out.push_back(prepare(s));
  }
  return out;
}

std::vector<ClozeSample> build_training_set(const TrainConfig& config, const Vocab& vocab,
                                            const std::vector<UserSequence>& seqs, Rng& rng) {
  const auto eff = config.effective();
  std::vector<ClozeSample> out;
  for (const auto& seq : seqs) {
    for (auto& raw : make_training_samples(seq, config.model.mask_proportion, vocab, rng)) {
      ClozeSample s = eff.no_item ? drop_context_items(raw, vocab) : std::move(raw);
      s = pad_truncate(std::move(s), config.model.max_len);
      if (!s.targets.empty()) out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<ClozeSample> build_eval_set(const TrainConfig& config, const Vocab& vocab,
                                        const std::vector<UserSequence>& seqs) {
  const auto eff = config.effective();
  std::vector<ClozeSample> out;
  for (const auto& original : seqs) {
    const UserSequence seq = eff.no_entity ? strip_non_items(original, vocab) : original;
    for (auto& raw : make_test_samples(seq)) {
      ClozeSample s = eff.no_item ? drop_context_items(raw, vocab) : std::move(raw);
      out.push_back(pad_truncate(std::move(s), config.model.max_len));
    }
  }
  return out;
}

TscrModel initial_model(const TrainConfig& config, const Vocab& vocab,
                        const std::optional<EntityEmbeddings>& offline) {
  TscrModel model(config.model, vocab.non_item_mask(), derive_seed(config.seed, kSeedInit));
  if (config.uses_offline()) {
    if (!offline) throw std::invalid_argument("offline initialization requested but no embeddings given");
    model.set_entity_embeddings(offline->matrix);
  }
  return model;
}

TrainResult train(const TrainConfig& config, const TrainData& data, std::ostream* log) {
  config.validate();
  if (!data.vocab) throw std::invalid_argument("train: vocabulary missing");
  const Vocab& vocab = *data.vocab;
  const auto seqs = training_sequences(config, vocab, data.train,
                                       data.augmented ? &*data.augmented : nullptr);
  const auto valid = build_eval_set(config, vocab, data.valid);

  TrainResult result{initial_model(config, vocab, data.offline), 0, {}, 0, 0};
  TscrModel model = result.model;
  const auto& blocked = model.blocked();

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;
  AdamState state;

  Rng mask_rng(derive_seed(config.seed, kSeedMask));
  Rng order_rng(derive_seed(config.seed, kSeedOrder));
  Rng dropout_rng(derive_seed(config.seed, kSeedDropout));
  double best = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto samples = build_training_set(config, vocab, seqs, mask_rng);
    if (samples.empty()) throw DataError("training set is empty after filtering");
    result.training_samples = samples.size();
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      try {
        GradientMap acc;
        for (std::size_t i = start; i < stop; ++i) {
          Tape tape;
          ForwardOptions options;
          options.dropout_rate = config.model.dropout;
          options.dropout_rng = &dropout_rng;
          const Var loss = sample_loss(tape, model.params(), model.config(),
                                       std::span<const std::uint8_t>(blocked), samples[order[i]],
                                       options, &result.clamped_targets);
          loss_sum += tape.value(loss)[0];
          accumulate_gradients(acc, backward(tape, loss));
        }
        scale_gradients(acc, 1.0f / static_cast<float>(stop - start));
        const double norm = global_norm(acc);
        if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
        acc = clip_global_norm(std::move(acc), config.grad_clip);
        adam_step(model.params(), acc, state, adam);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no) + ": " + e.what());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(samples.size());
    if (!valid.empty()) {
      const Scorer scorer = [&model](const ClozeSample& s) { return predict_scores(model, s); };
      const auto ranked = rank_targets(scorer, valid, blocked);
      std::vector<std::size_t> ranks;
      std::size_t hits = 0;
      for (const auto& r : ranked) {
        ranks.push_back(r.rank);
        hits += static_cast<std::size_t>(recall_at_k(r.rank, config.select_k));
      }
      rec.valid_recall = static_cast<double>(hits) / static_cast<double>(ranked.size());
      rec.valid_mrr = mrr(ranks);
    }
    result.history.push_back(rec);
    const bool improved = valid.empty() || rec.valid_recall > best;
    if (improved) {
      best = rec.valid_recall;
      result.best_epoch = epoch;
      result.model.params() = model.params();
    }
    if (log) {
      *log << "epoch " << epoch << " loss " << fmt(rec.train_loss) << " valid_recall@"
           << config.select_k << ' ' << fmt(rec.valid_recall) << " valid_mrr " << fmt(rec.valid_mrr)
           << (improved ? " *" : "") << '\n';
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta");
}

void save_checkpoint(const std::filesystem::path& path, const TscrModel& model,
                     const TrainConfig& config, int epoch, const std::vector<EpochRecord>& history) {
  save_parameters(model.params(), path);
  KeyValues kv = train_config_to_kv(config);
  kv.emplace_back("vocab_size", std::to_string(model.vocab_size()));
  kv.emplace_back("epoch", std::to_string(epoch));
  for (const auto& h : history) {
    kv.emplace_back("history." + std::to_string(h.epoch),
                    fmt(h.train_loss) + " " + fmt(h.valid_recall) + " " + fmt(h.valid_mrr));
  }
  write_key_values(checkpoint_meta_path(path), kv);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  const auto meta_path = checkpoint_meta_path(path);
  if (!std::filesystem::exists(meta_path))
    throw DataError("checkpoint metadata not found: " + meta_path.string());
  KeyValues config_kv;
  std::size_t vocab_size = 0;
  int epoch = 0;
  std::vector<EpochRecord> history;
  for (const auto& [k, v] : read_key_values(meta_path)) {
    try {
      if (k == "vocab_size") {
        vocab_size = std::stoul(v);
      } else if (k == "epoch") {
        epoch = std::stoi(v);
      } else if (k.rfind("history.", 0) == 0) {
        EpochRecord rec;
        rec.epoch = std::stoi(k.substr(8));
        std::istringstream is(v);
        if (!(is >> rec.train_loss >> rec.valid_recall >> rec.valid_mrr)) throw std::invalid_argument(v);
        history.push_back(rec);
      } else {
        config_kv.emplace_back(k, v);
      }
    } catch (const std::logic_error&) {
      throw FormatError(meta_path.string() + ": bad value for " + k);
    }
  }
  TrainConfig config;
  try {
    config = train_config_from_kv(config_kv);
  } catch (const std::invalid_argument& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  if (vocab_size != vocab.size())
    throw DataError(path.string() + ": checkpoint vocabulary size " + std::to_string(vocab_size) +
                    " does not match dictionary size " + std::to_string(vocab.size()));
  TscrModel model(config.model, vocab.non_item_mask(), 0);
  load_parameters_into(model.params(), path);
  return {std::move(model), config, epoch, std::move(history)};
}

}  // namespace tscr
