#include "tscr/eval.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace tscr {

int recall_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0) throw std::invalid_argument("ranks are 1-based");
  return rank <= k ? 1 : 0;
}

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr of an empty rank list");
  double total = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw std::invalid_argument("ranks are 1-based");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

namespace {

struct Accumulator {
  std::size_t count = 0;
  std::size_t hits_1 = 0, hits_10 = 0, hits_50 = 0;
  double reciprocal = 0.0;

  void add(std::size_t rank) {
    ++count;
    hits_1 += recall_at_k(rank, 1);
    hits_10 += recall_at_k(rank, 10);
    hits_50 += recall_at_k(rank, 50);
    reciprocal += 1.0 / static_cast<double>(rank);
  }

  MetricSet finish() const {
    MetricSet m;
    m.count = count;
    if (count == 0) return m;
    const double n = static_cast<double>(count);
    m.recall_1 = static_cast<double>(hits_1) / n;
    m.recall_10 = static_cast<double>(hits_10) / n;
    m.recall_50 = static_cast<double>(hits_50) / n;
    m.mrr = reciprocal / n;
    return m;
  }
};

}  // namespace

EvalResult summarize(std::span<const RankedTarget> ranked) {
  Accumulator overall;
  std::map<int, Accumulator> buckets;
  for (const auto& r : ranked) {
    overall.add(r.rank);
    if (r.ordinal > 0) buckets[std::min(r.ordinal, kOrdinalCap)].add(r.rank);
  }
  EvalResult result;
  result.overall = overall.finish();
  for (const auto& [ord, acc] : buckets) result.per_ordinal[ord] = acc.finish();
  return result;
}

std::vector<RankedTarget> rank_targets(const Scorer& scorer, std::span<const ClozeSample> samples,
                                       std::span<const std::uint8_t> blocked) {
  std::vector<RankedTarget> out;
  for (const auto& sample : samples) {
    if (sample.targets.empty()) continue;
    const Tensor probs = scorer(sample);
    if (probs.rank() != 2 || probs.rows() != sample.targets.size() || probs.cols() != blocked.size())
      throw std::invalid_argument("scorer returned shape " + shape_string(probs.shape()));
    for (std::size_t i = 0; i < sample.targets.size(); ++i) {
      const auto row = probs.row(i);
      out.push_back({rank_of(std::span<const float>(row.data(), row.size()), blocked,
                             sample.targets[i].item),
                     sample.ordinal});
    }
  }
  return out;
}

EvalResult evaluate(const TscrModel& model, std::span<const ClozeSample> samples) {
  const Scorer scorer = [&model](const ClozeSample& s) { return predict_scores(model, s); };
  const auto ranked = rank_targets(scorer, samples, model.blocked());
  return summarize(ranked);
}

nlohmann::ordered_json to_json(const MetricSet& m) {
  return {{"count", m.count},         {"recall@1", m.recall_1}, {"recall@10", m.recall_10},
          {"recall@50", m.recall_50}, {"mrr", m.mrr}};
}

nlohmann::ordered_json to_json(const EvalResult& result) {
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [ord, m] : result.per_ordinal)
    per[ord >= kOrdinalCap ? std::to_string(kOrdinalCap) + "+" : std::to_string(ord)] = to_json(m);
  return {{"samples", result.sample_count()}, {"overall", to_json(result.overall)},
          {"per_ordinal", per}};
}

nlohmann::ordered_json to_json(const AblationReport& report) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [name, result] : report) {
    auto row = to_json(result);
    row["run"] = name;
    rows.push_back(row);
  }
  return {{"ablations", rows}};
}

namespace {

std::string row_line(const std::string& label, const MetricSet& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %8zu %10.4f %10.4f %10.4f %10.4f\n", label.c_str(),
                m.count, m.recall_1, m.recall_10, m.recall_50, m.mrr);
  return buf;
}

std::string header_line(const char* first) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %8s %10s %10s %10s %10s\n", first, "count", "R@1", "R@10",
                "R@50", "MRR");
  return buf;
}

}  // namespace

std::string format_table(const EvalResult& result) {
  std::string out = header_line("ordinal");
  out += row_line("all", result.overall);
  for (const auto& [ord, m] : result.per_ordinal)
    out += row_line(ord >= kOrdinalCap ? std::to_string(kOrdinalCap) + "+" : std::to_string(ord), m);
  return out;
}

std::string format_table(const AblationReport& report) {
  std::string out = header_line("run");
  for (const auto& [name, result] : report) out += row_line(name, result.overall);
  return out;
}

}  // namespace tscr
