#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tscr {

using EntityId = std::int32_t;
using Rng = std::mt19937_64;

/// Malformed input data; the message names the file and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Entity universe. Ids are dense: PAD = 0, MASK = 1, then dictionary rows in
/// file order. Items are the recommendable subset of entities.
class Vocab {
 public:
  static constexpr EntityId kPad = 0;
  static constexpr EntityId kMask = 1;
  static constexpr EntityId kFirstEntity = 2;

  Vocab();

  EntityId add(std::string external_id, std::string surface_form, bool is_item);

  std::optional<EntityId> find(std::string_view external_id) const;
  std::size_t size() const { return external_.size(); }
  std::size_t entity_count() const { return size() - kFirstEntity; }
  std::size_t item_count() const { return item_count_; }

  bool is_special(EntityId id) const { return id == kPad || id == kMask; }
  bool is_item(EntityId id) const { return is_item_.at(static_cast<std::size_t>(id)) != 0; }
  bool contains(EntityId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  const std::string& external_id(EntityId id) const { return external_.at(static_cast<std::size_t>(id)); }
  const std::string& surface_form(EntityId id) const { return surface_.at(static_cast<std::size_t>(id)); }

  /// 1 for every id that is NOT an item (specials included). This is the
  /// blocked set of the prediction softmax.
  std::vector<std::uint8_t> non_item_mask() const;
  std::vector<EntityId> items() const;

 private:
  std::vector<std::string> external_;
  std::vector<std::string> surface_;
  std::vector<std::uint8_t> is_item_;
  std::unordered_map<std::string, EntityId> index_;
  std::size_t item_count_ = 0;
};

/// Entity dictionary TSV: external_id, surface_form, is_item (0/1). A first
/// row whose first column is "external_id" is treated as a header.
Vocab load_entity_dictionary(const std::filesystem::path& path);
void write_entity_dictionary(const std::filesystem::path& path, const Vocab& vocab);

enum class Role { kSeeker, kRecommender };

struct Turn {
  Role role = Role::kSeeker;
  std::string text;
  std::vector<EntityId> mentions;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialog {
  std::string id;
  std::vector<Turn> turns;

  friend bool operator==(const Dialog&, const Dialog&) = default;
};

struct DialogCorpus {
  Vocab vocab;
  std::vector<Dialog> dialogs;
  std::size_t dropped_mentions = 0;
};

/// Reads the JSON-lines dialog file, resolving mentions through the entity
/// dictionary. Unknown mentions are dropped and counted.
DialogCorpus load_dialogs(const std::filesystem::path& dialogs_path,
                          const std::filesystem::path& dictionary_path);
std::vector<Dialog> parse_dialogs(std::istream& in, const Vocab& vocab,
                                  std::size_t* dropped_mentions, const std::string& source);
void write_dialogs(std::ostream& out, const std::vector<Dialog>& dialogs, const Vocab& vocab);

struct UserSequence {
  std::string dialog_id;
  std::vector<EntityId> elements;
  /// Indices of recommender-mentioned items; these are the evaluation targets.
  std::vector<std::size_t> ground_truth;
  /// Per element: true if spliced in by KG augmentation. Empty means none.
  std::vector<bool> inserted;

  bool is_inserted(std::size_t i) const { return !inserted.empty() && inserted[i]; }
  friend bool operator==(const UserSequence&, const UserSequence&) = default;
};

/// All mentions of both roles in dialog order. Returns nullopt when the
/// dialog has no mentions at all.
std::optional<UserSequence> extract_sequence(const Dialog& dialog, const Vocab& vocab);

struct DatasetSplit {
  std::vector<Dialog> train;
  std::vector<Dialog> valid;
  std::vector<Dialog> test;
};

/// 8:1:1 split at dialog granularity; partitions keep file order.
DatasetSplit split_dataset(const std::vector<Dialog>& dialogs, std::uint64_t seed);

struct ClozeTarget {
  std::size_t position = 0;
  EntityId item = 0;

  friend bool operator==(const ClozeTarget&, const ClozeTarget&) = default;
};

struct ClozeSample {
  std::vector<EntityId> input;
  std::vector<ClozeTarget> targets;  // sorted by position
  std::vector<std::uint8_t> valid;   // 0 on PAD
  /// 1-based ordinal of the ground-truth item for test samples, 0 otherwise.
  int ordinal = 0;

  friend bool operator==(const ClozeSample&, const ClozeSample&) = default;
};

/// Number of item positions masked in the random sample: max(1, round(p * n)).
std::size_t mask_count(std::size_t n_items, double proportion);

/// Positions of maskable elements: items that were not spliced in.
std::vector<std::size_t> maskable_positions(const UserSequence& seq, const Vocab& vocab);

/// Two samples per sequence: (A) a random proportion of item positions
/// masked, (B) only the final item position masked. No items, no samples.
std::vector<ClozeSample> make_training_samples(const UserSequence& seq, double proportion,
                                               const Vocab& vocab, Rng& rng);

/// One sample per ground-truth item: everything strictly before it, then MASK.
std::vector<ClozeSample> make_test_samples(const UserSequence& seq);

/// Keeps the most recent `max_len` tokens and left-pads with PAD. Targets
/// that fall off the left edge are dropped.
ClozeSample pad_truncate(ClozeSample sample, std::size_t max_len);

/// Removes every non-item element, remapping ground truth.
UserSequence strip_non_items(const UserSequence& seq, const Vocab& vocab);
/// Removes unmasked item tokens from a sample's input; targets survive.
ClozeSample drop_context_items(const ClozeSample& sample, const Vocab& vocab);
/// Removes non-item tokens from a sample's input.
ClozeSample drop_context_entities(const ClozeSample& sample, const Vocab& vocab);

// Sequence dump: one JSON object per line,
// {"id", "elements": [external ids], "ground_truth": [indices], "inserted"?: [bool]}.
void write_sequences(const std::filesystem::path& path, const std::vector<UserSequence>& seqs,
                     const Vocab& vocab, bool with_inserted);
std::vector<UserSequence> read_sequences(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace tscr
