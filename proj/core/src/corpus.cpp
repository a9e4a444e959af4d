#include "tscr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace tscr {
namespace {

using json = nlohmann::json;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!cols.empty() && !cols.back().empty() && cols.back().back() == '\r') cols.back().pop_back();
  return cols;
}

std::string where(const std::string& source, std::size_t line_no) {
  return source + ":" + std::to_string(line_no);
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  external_ = {"[PAD]", "[MASK]"};
  surface_ = {"[PAD]", "[MASK]"};
  is_item_ = {0, 0};
}

EntityId Vocab::add(std::string external_id, std::string surface_form, bool is_item) {
  if (index_.count(external_id)) throw DataError("duplicate entity id " + external_id);
  const auto id = static_cast<EntityId>(external_.size());
  index_.emplace(external_id, id);
  external_.push_back(std::move(external_id));
  surface_.push_back(std::move(surface_form));
  is_item_.push_back(is_item ? 1 : 0);
  if (is_item) ++item_count_;
  return id;
}

std::optional<EntityId> Vocab::find(std::string_view external_id) const {
  auto it = index_.find(std::string(external_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::uint8_t> Vocab::non_item_mask() const {
  std::vector<std::uint8_t> blocked(size());
  for (std::size_t i = 0; i < size(); ++i) blocked[i] = is_item_[i] ? 0 : 1;
  return blocked;
}

std::vector<EntityId> Vocab::items() const {
  std::vector<EntityId> out;
  out.reserve(item_count_);
  for (std::size_t i = 0; i < size(); ++i)
    if (is_item_[i]) out.push_back(static_cast<EntityId>(i));
  return out;
}

Vocab load_entity_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open entity dictionary " + path.string());
  Vocab vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cols = split_tabs(line);
    if (line_no == 1 && cols[0] == "external_id") continue;
    if (cols.size() != 3 || cols[0].empty() || (cols[2] != "0" && cols[2] != "1")) {
      throw DataError(where(path.string(), line_no) +
                      ": expected external_id<TAB>surface_form<TAB>is_item(0/1)");
    }
    try {
      vocab.add(cols[0], cols[1], cols[2] == "1");
    } catch (const DataError& e) {
      throw DataError(where(path.string(), line_no) + ": " + e.what());
    }
  }
  return vocab;
}

void write_entity_dictionary(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "external_id\tsurface_form\tis_item\n";
  for (std::size_t i = Vocab::kFirstEntity; i < vocab.size(); ++i) {
    const auto id = static_cast<EntityId>(i);
    out << vocab.external_id(id) << '\t' << vocab.surface_form(id) << '\t'
        << (vocab.is_item(id) ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dialogs

std::vector<Dialog> parse_dialogs(std::istream& in, const Vocab& vocab,
                                  std::size_t* dropped_mentions, const std::string& source) {
  std::vector<Dialog> dialogs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(line);
      Dialog d;
      d.id = rec.at("id").get<std::string>();
      for (const auto& t : rec.at("turns")) {
        Turn turn;
        const auto role = t.at("role").get<std::string>();
        if (role == "seeker") {
          turn.role = Role::kSeeker;
        } else if (role == "recommender") {
          turn.role = Role::kRecommender;
        } else {
          throw DataError("unknown role \"" + role + "\"");
        }
        turn.text = t.value("text", std::string{});
        for (const auto& m : t.at("mentions")) {
          const auto ext = m.get<std::string>();
          if (auto id = vocab.find(ext)) {
            turn.mentions.push_back(*id);
          } else if (dropped_mentions) {
            ++*dropped_mentions;
          }
        }
        d.turns.push_back(std::move(turn));
      }
      dialogs.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw DataError(where(source, line_no) + ": malformed dialog record: " + e.what());
    }
  }
  return dialogs;
}

DialogCorpus load_dialogs(const std::filesystem::path& dialogs_path,
                          const std::filesystem::path& dictionary_path) {
  DialogCorpus corpus;
  corpus.vocab = load_entity_dictionary(dictionary_path);
  std::ifstream in(dialogs_path);
  if (!in) throw DataError("cannot open dialog file " + dialogs_path.string());
  corpus.dialogs = parse_dialogs(in, corpus.vocab, &corpus.dropped_mentions, dialogs_path.string());
  return corpus;
}

void write_dialogs(std::ostream& out, const std::vector<Dialog>& dialogs, const Vocab& vocab) {
  for (const auto& d : dialogs) {
    json rec;
    rec["id"] = d.id;
    rec["turns"] = json::array();
    for (const auto& t : d.turns) {
      json turn;
      turn["role"] = t.role == Role::kSeeker ? "seeker" : "recommender";
      turn["text"] = t.text;
      turn["mentions"] = json::array();
      for (auto m : t.mentions) turn["mentions"].push_back(vocab.external_id(m));
      rec["turns"].push_back(std::move(turn));
    }
    out << rec.dump() << '\n';
  }
}

std::optional<UserSequence> extract_sequence(const Dialog& dialog, const Vocab& vocab) {
  UserSequence seq;
  seq.dialog_id = dialog.id;
  for (const auto& turn : dialog.turns) {
    for (auto m : turn.mentions) {
      if (turn.role == Role::kRecommender && vocab.is_item(m))
        seq.ground_truth.push_back(seq.elements.size());
      seq.elements.push_back(m);
    }
  }
  if (seq.elements.empty()) return std::nullopt;
  return seq;
}

DatasetSplit split_dataset(const std::vector<Dialog>& dialogs, std::uint64_t seed) {
  const auto n = dialogs.size();
  if (n < 10) throw std::invalid_argument("split_dataset needs at least 10 dialogs, got " +
                                          std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  auto take = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(idx.begin(), idx.end());
    std::vector<Dialog> part;
    part.reserve(idx.size());
    for (auto i : idx) part.push_back(dialogs[i]);
    return part;
  };
  DatasetSplit split;
  split.train = take(0, n_train);
  split.valid = take(n_train, n_train + n_valid);
  split.test = take(n_train + n_valid, n);
  return split;
}

// ---------------------------------------------------------------------------
// Cloze samples

std::size_t mask_count(std::size_t n_items, double proportion) {
  const auto rounded = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(n_items)));
  return std::min(n_items, std::max<std::size_t>(1, rounded));
}

std::vector<std::size_t> maskable_positions(const UserSequence& seq, const Vocab& vocab) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < seq.elements.size(); ++i)
    if (!seq.is_inserted(i) && vocab.is_item(seq.elements[i])) pos.push_back(i);
  return pos;
}

namespace {

ClozeSample masked_copy(const UserSequence& seq, std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  ClozeSample s;
  s.input = seq.elements;
  s.valid.assign(s.input.size(), 1);
  for (auto p : positions) {
    s.targets.push_back({p, seq.elements[p]});
    s.input[p] = Vocab::kMask;
  }
  return s;
}

}  // namespace

std::vector<ClozeSample> make_training_samples(const UserSequence& seq, double proportion,
                                               const Vocab& vocab, Rng& rng) {
  if (!(proportion > 0.0 && proportion < 1.0))
    throw std::invalid_argument("mask proportion must lie in (0, 1)");
  auto items = maskable_positions(seq, vocab);
  if (items.empty()) return {};
  const auto count = mask_count(items.size(), proportion);
  // Partial Fisher-Yates: the first `count` entries become the masked set.
  auto pool = items;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::vector<ClozeSample> out;
  out.push_back(masked_copy(seq, std::move(pool)));
  out.push_back(masked_copy(seq, {items.back()}));
  return out;
}

std::vector<ClozeSample> make_test_samples(const UserSequence& seq) {
  std::vector<ClozeSample> out;
  int ordinal = 0;
  for (auto gt : seq.ground_truth) {
    ClozeSample s;
    s.input.assign(seq.elements.begin(), seq.elements.begin() + static_cast<std::ptrdiff_t>(gt));
    s.input.push_back(Vocab::kMask);
    s.valid.assign(s.input.size(), 1);
    s.targets.push_back({s.input.size() - 1, seq.elements[gt]});
    s.ordinal = ++ordinal;
    out.push_back(std::move(s));
  }
  return out;
}

ClozeSample pad_truncate(ClozeSample sample, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("max sequence length must be >= 2");
  const auto len = sample.input.size();
  ClozeSample out;
  out.ordinal = sample.ordinal;
  out.input.assign(max_len, Vocab::kPad);
  out.valid.assign(max_len, 0);
  const auto keep = std::min(len, max_len);
  const auto drop = len - keep;
  const auto pad = max_len - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    out.input[pad + i] = sample.input[drop + i];
    out.valid[pad + i] = sample.valid.empty() ? 1 : sample.valid[drop + i];
  }
  for (const auto& t : sample.targets) {
    if (t.position < drop) continue;
    out.targets.push_back({t.position - drop + pad, t.item});
  }
  return out;
}

UserSequence strip_non_items(const UserSequence& seq, const Vocab& vocab) {
  UserSequence out;
  out.dialog_id = seq.dialog_id;
  std::size_t gt_cursor = 0;
  for (std::size_t i = 0; i < seq.elements.size(); ++i) {
    const bool is_gt = gt_cursor < seq.ground_truth.size() && seq.ground_truth[gt_cursor] == i;
    if (is_gt) ++gt_cursor;
    if (!vocab.is_item(seq.elements[i])) continue;
    if (is_gt) out.ground_truth.push_back(out.elements.size());
    out.elements.push_back(seq.elements[i]);
    if (!seq.inserted.empty()) out.inserted.push_back(seq.inserted[i]);
  }
  return out;
}

namespace {

template <class Keep>
ClozeSample filter_input(const ClozeSample& sample, Keep keep) {
  ClozeSample out;
  out.ordinal = sample.ordinal;
  std::size_t t = 0;
  for (std::size_t i = 0; i < sample.input.size(); ++i) {
    const bool is_target = t < sample.targets.size() && sample.targets[t].position == i;
    if (is_target || keep(sample.input[i])) {
      if (is_target) {
        out.targets.push_back({out.input.size(), sample.targets[t].item});
      }
      out.input.push_back(sample.input[i]);
      out.valid.push_back(sample.valid.empty() ? 1 : sample.valid[i]);
    }
    if (is_target) ++t;
  }
  return out;
}

}  // namespace

ClozeSample drop_context_items(const ClozeSample& sample, const Vocab& vocab) {
  return filter_input(sample, [&](EntityId id) { return !vocab.is_item(id); });
}

ClozeSample drop_context_entities(const ClozeSample& sample, const Vocab& vocab) {
  return filter_input(sample, [&](EntityId id) { return vocab.is_item(id) || vocab.is_special(id); });
}

// ---------------------------------------------------------------------------
// Sequence dumps

void write_sequences(const std::filesystem::path& path, const std::vector<UserSequence>& seqs,
                     const Vocab& vocab, bool with_inserted) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : seqs) {
    json rec;
    rec["id"] = s.dialog_id;
    rec["elements"] = json::array();
    for (auto e : s.elements) rec["elements"].push_back(vocab.external_id(e));
    rec["ground_truth"] = s.ground_truth;
    if (with_inserted) {
      rec["inserted"] = json::array();
      for (std::size_t i = 0; i < s.elements.size(); ++i) rec["inserted"].push_back(s.is_inserted(i));
    }
    out << rec.dump() << '\n';
  }
}

std::vector<UserSequence> read_sequences(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sequence file " + path.string());
  std::vector<UserSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = json::parse(line);
      UserSequence s;
      s.dialog_id = rec.at("id").get<std::string>();
      for (const auto& e : rec.at("elements")) {
        const auto ext = e.get<std::string>();
        auto id = vocab.find(ext);
        if (!id) throw DataError("unknown entity " + ext);
        s.elements.push_back(*id);
      }
      s.ground_truth = rec.at("ground_truth").get<std::vector<std::size_t>>();
      for (auto g : s.ground_truth)
        if (g >= s.elements.size()) throw DataError("ground truth index out of range");
      if (rec.contains("inserted")) {
        for (const auto& b : rec.at("inserted")) s.inserted.push_back(b.get<bool>());
        if (s.inserted.size() != s.elements.size()) throw DataError("inserted length mismatch");
        if (std::none_of(s.inserted.begin(), s.inserted.end(), [](bool b) { return b; }))
          s.inserted.clear();
      }
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw DataError(where(path.string(), line_no) + ": malformed sequence record: " + e.what());
    }
  }
  return out;
}

}  // namespace tscr
