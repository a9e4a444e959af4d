#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tscr/pipeline.hpp"
#include "tscr/trainer.hpp"

namespace tscr {
namespace {

namespace fs = std::filesystem;
using testing::entity_id;
using testing::item_id;
using testing::make_vocab;
using testing::overfit_corpus;

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.dim = 8;
  c.model.layers = 1;
  c.model.heads = 2;
  c.model.max_len = 8;
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.epochs = 2;
  c.seed = 11;
  return c;
}

// Ten sequences alternating entity and item: [e_j, v_i, e_j+1, v_i+1].
struct Fixture {
  Vocab vocab = make_vocab(12, 6);
  std::vector<UserSequence> train;

  Fixture() {
    for (std::size_t s = 0; s < 10; ++s) {
      UserSequence u;
      u.dialog_id = "s" + std::to_string(s);
      u.elements = {entity_id(vocab, s % 6), item_id(s), entity_id(vocab, (s + 1) % 6), item_id(s + 1)};
      u.ground_truth = {3};
      train.push_back(u);
    }
  }

  TrainData data() const {
    TrainData d;
    d.vocab = &vocab;
    d.train = train;
    return d;
  }
};

TEST(TrainingSet, PlainVariantHasTwoSamplesPerSequence) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  const auto seqs = training_sequences(c, f.vocab, f.train, nullptr);
  Rng rng(1);
  EXPECT_EQ(build_training_set(c, f.vocab, seqs, rng).size(), 20u);
}

TEST(TrainingSet, KgVariantAddsAugmentedCopies) {
  Fixture f;
  auto c = tiny_config();
  c.ablations.no_offline = true;
  // Four of the ten gain an inserted element; all ten are duplicated.
  auto augmented = f.train;
  for (std::size_t s = 0; s < 4; ++s) {
    augmented[s].elements.insert(augmented[s].elements.begin() + 2, entity_id(f.vocab, 5));
    augmented[s].inserted = {false, false, true, false, false};
    augmented[s].ground_truth = {4};
  }
  const auto seqs = training_sequences(c, f.vocab, f.train, &augmented);
  ASSERT_EQ(seqs.size(), 20u);
  Rng rng(1);
  EXPECT_EQ(build_training_set(c, f.vocab, seqs, rng).size(), 40u);
  EXPECT_THROW(training_sequences(c, f.vocab, f.train, nullptr), std::invalid_argument);
  const std::vector<UserSequence> short_aug(augmented.begin(), augmented.begin() + 3);
  EXPECT_THROW(training_sequences(c, f.vocab, f.train, &short_aug), std::invalid_argument);
}

TEST(TrainingSet, NoEntityLeavesOnlyItems) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.ablations.no_entity = true;
  const auto seqs = training_sequences(c, f.vocab, f.train, nullptr);
  EXPECT_EQ(seqs[0].elements, (std::vector<EntityId>{item_id(0), item_id(1)}));
  Rng rng(3);
  for (const auto& s : build_training_set(c, f.vocab, seqs, rng))
    for (auto id : s.input) EXPECT_TRUE(id == Vocab::kPad || id == Vocab::kMask || f.vocab.is_item(id));
}

TEST(TrainingSet, NoItemDropsContextItemsButKeepsTargets) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.ablations.no_item = true;
  Rng rng(3);
  const auto samples = build_training_set(c, f.vocab, f.train, rng);
  ASSERT_FALSE(samples.empty());
  for (const auto& s : samples) {
    EXPECT_FALSE(s.targets.empty());
    for (auto id : s.input) EXPECT_FALSE(f.vocab.is_item(id));
    for (const auto& t : s.targets) EXPECT_EQ(s.input[t.position], Vocab::kMask);
  }
}

TEST(TrainConfig, NoEntityWithNoItemIsRejected) {
  auto c = tiny_config();
  c.ablations.no_entity = c.ablations.no_item = true;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Fixture f;
  EXPECT_THROW(train(c, f.data()), std::invalid_argument);
}

TEST(TrainConfig, PlainVariantForcesKgAblations) {
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  EXPECT_FALSE(c.uses_offline());
  EXPECT_FALSE(c.uses_kgseq());
  c.variant = Variant::kTscrKg;
  EXPECT_TRUE(c.uses_offline());
  EXPECT_TRUE(c.uses_kgseq());
}

TEST(TrainConfig, KeyValueRoundTrip) {
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.ablations.no_item = true;
  c.learning_rate = 3.3e-4;
  c.kg_inverse_relations = false;
  const auto back = train_config_from_kv(train_config_to_kv(c));
  EXPECT_EQ(train_config_to_kv(back), train_config_to_kv(c));
  EXPECT_EQ(back.ablations, c.ablations);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
}

TEST(TrainConfig, UnknownKeyAndBadValuesAreErrors) {
  EXPECT_THROW(train_config_from_kv({{"learnig_rate", "0.1"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_kv({{"epochs", "ten"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_kv({{"no_item", "yes"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_kv({{"variant", "bert"}}), std::invalid_argument);
  EXPECT_EQ(parse_variant("TSCRKG"), Variant::kTscrKg);
}

TEST(Train, ZeroEpochsReturnsTheInitialization) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.epochs = 0;
  const auto r = train(c, f.data());
  const auto init = initial_model(c, f.vocab, std::nullopt);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0);
  for (const auto& p : init.params().items()) EXPECT_EQ(r.model.params().get(p.name), p.value) << p.name;
}

TEST(Train, SameSeedGivesIdenticalHistory) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.model.dropout = 0.2;
  auto d = f.data();
  d.valid = {f.train[0], f.train[1]};
  std::ostringstream la, lb;
  const auto a = train(c, d, &la), b = train(c, d, &lb);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(la.str(), lb.str());
  for (const auto& p : a.model.params().items()) EXPECT_EQ(b.model.params().get(p.name), p.value);
  c.seed = 12;
  EXPECT_NE(train(c, d).history, a.history);
}

TEST(Train, LogHasOneLinePerEpoch) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.epochs = 3;
  std::ostringstream log;
  train(c, f.data(), &log);
  std::istringstream in(log.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(line.rfind("epoch " + std::to_string(n) + " loss ", 0), 0u) << line;
  }
  EXPECT_EQ(n, 3);
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  Fixture f;
  auto c = tiny_config();
  c.ablations.no_kgseq = true;  // offline table only
  auto plain = c;
  plain.ablations.no_offline = true;
  const auto init = initial_model(plain, f.vocab, std::nullopt);
  Tensor table = init.params().get(param_names::kEntity);
  table.at(entity_id(f.vocab, 0), 0) = std::numeric_limits<float>::quiet_NaN();
  auto d = f.data();
  d.offline = EntityEmbeddings{table};
  try {
    train(c, d);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1, batch "), std::string::npos) << msg;
  }
}

TEST(Train, OfflineTableReplacesOnlyTheEntityTable) {
  Fixture f;
  auto c = tiny_config();
  c.ablations.no_kgseq = true;
  auto without = c;
  without.ablations.no_offline = true;
  const auto base = initial_model(without, f.vocab, std::nullopt);
  Tensor table(base.params().get(param_names::kEntity).shape(), 0.125f);
  const auto with = initial_model(c, f.vocab, EntityEmbeddings{table});
  for (const auto& p : base.params().items()) {
    if (p.name == param_names::kEntity)
      EXPECT_EQ(with.params().get(p.name), table);
    else
      EXPECT_EQ(with.params().get(p.name), p.value) << p.name;
  }
  EXPECT_THROW(initial_model(c, f.vocab, std::nullopt), std::invalid_argument);
}

TEST(Train, BestEpochFollowsValidationRecall) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.epochs = 4;
  auto d = f.data();
  d.valid = {f.train[2], f.train[5]};
  const auto r = train(c, d);
  ASSERT_EQ(r.history.size(), 4u);
  double best = -1;
  int best_epoch = 0;
  for (const auto& h : r.history)
    if (h.valid_recall > best) best = h.valid_recall, best_epoch = h.epoch;
  EXPECT_EQ(r.best_epoch, best_epoch);
}

TEST(Train, MemorizesAFixedCorpus) {
  const auto corpus = overfit_corpus(5, 60);
  TrainConfig c;
  c.model.dim = 32;
  c.model.layers = 2;
  c.model.heads = 2;
  c.model.max_len = 20;
  c.model.dropout = 0.0;
  c.batch_size = 16;
  c.learning_rate = 5e-3;
  c.weight_decay = 0.0;
  c.epochs = 150;
  c.seed = 5;
  c.variant = Variant::kTscr;
  TrainData d;
  d.vocab = &corpus.vocab;
  d.train = corpus.train;
  const auto r = train(c, d);
  EXPECT_LT(r.history.back().train_loss, 0.05);
  // The next item of each training sequence is the top-1 recommendation.
  std::size_t hits = 0;
  for (const auto& s : corpus.train) {
    const std::vector<EntityId> context(s.elements.begin(), s.elements.end() - 1);
    const auto top = recommend_topk(r.model, context, 1);
    hits += static_cast<std::size_t>(!top.empty() && top[0].item == s.elements.back());
  }
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(corpus.train.size()), 0.95);
}

// Checkpoints ---------------------------------------------------------------

class CheckpointFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tscr_trainer_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointFiles, ReloadGivesIdenticalScores) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  const auto r = train(c, f.data());
  const auto path = dir_ / "m.ckpt";
  save_checkpoint(path, r.model, c, r.best_epoch, r.history);
  const auto back = load_checkpoint(path, f.vocab);
  EXPECT_EQ(back.epoch, r.best_epoch);
  EXPECT_EQ(back.history, r.history);
  EXPECT_EQ(train_config_to_kv(back.config), train_config_to_kv(c));
  ClozeSample s;
  s.input = {entity_id(f.vocab, 0), item_id(0), Vocab::kMask};
  s.valid = {1, 1, 1};
  s.targets = {{2, item_id(1)}};
  const auto padded = pad_truncate(s, c.model.max_len);
  EXPECT_EQ(predict_scores(back.model, padded), predict_scores(r.model, padded));
}

TEST_F(CheckpointFiles, MissingFilesAndVocabMismatch) {
  Fixture f;
  auto c = tiny_config();
  c.variant = Variant::kTscr;
  c.epochs = 0;
  const auto path = dir_ / "m.ckpt";
  EXPECT_THROW(load_checkpoint(path, f.vocab), DataError);
  save_checkpoint(path, train(c, f.data()).model, c, 0, {});
  EXPECT_THROW(load_checkpoint(path, make_vocab(3, 1)), DataError);
  fs::remove(checkpoint_meta_path(path));
  EXPECT_THROW(load_checkpoint(path, f.vocab), DataError);
}

TEST_F(CheckpointFiles, MissingEmbeddingsOnlyMatterWhenUsed) {
  const fs::path sample = TSCR_SAMPLE_DIR;
  prepare_corpus(sample / "dialogs.jsonl", sample / "entities.tsv", dir_, 42);
  auto c = tiny_config();
  c.model.max_len = 12;
  c.epochs = 1;
  c.ablations.no_kgseq = true;
  TrainInputs in{dir_, dir_ / "absent.emb", std::nullopt};
  EXPECT_ANY_THROW(train_from_files(c, in));
  c.ablations.no_offline = true;
  const auto r = train_from_files(c, in);
  EXPECT_EQ(r.history.size(), 1u);
}

}  // namespace
}  // namespace tscr
