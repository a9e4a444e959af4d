#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tscr/model.hpp"

namespace tscr {

/// 1 iff rank <= k. Ranks are 1-based; rank 0 is rejected.
int recall_at_k(std::size_t rank, std::size_t k);

/// Mean reciprocal rank. Throws on an empty list or a zero rank.
double mrr(std::span<const std::size_t> ranks);

inline constexpr std::size_t kReportedCutoffs[] = {1, 10, 50};
/// Ordinals at or above this value share one bucket ("5+").
inline constexpr int kOrdinalCap = 5;

struct MetricSet {
  std::size_t count = 0;
  double recall_1 = 0.0;
  double recall_10 = 0.0;
  double recall_50 = 0.0;
  double mrr = 0.0;

  friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

struct EvalResult {
  MetricSet overall;
  /// Bucketed by ordinal: 1, 2, 3, 4 and 5 (meaning 5 and later).
  std::map<int, MetricSet> per_ordinal;

  std::size_t sample_count() const { return overall.count; }
  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct RankedTarget {
  std::size_t rank = 1;
  int ordinal = 0;
};

EvalResult summarize(std::span<const RankedTarget> ranked);

/// Distribution rows for each target of a sample, in target order.
using Scorer = std::function<Tensor(const ClozeSample&)>;

/// Ranks every target among all unblocked ids (ties to the smaller id).
std::vector<RankedTarget> rank_targets(const Scorer& scorer, std::span<const ClozeSample> samples,
                                       std::span<const std::uint8_t> blocked);

EvalResult evaluate(const TscrModel& model, std::span<const ClozeSample> samples);

nlohmann::ordered_json to_json(const MetricSet& m);
nlohmann::ordered_json to_json(const EvalResult& result);
std::string format_table(const EvalResult& result);

/// Named rows, in insertion order.
using AblationReport = std::vector<std::pair<std::string, EvalResult>>;
nlohmann::ordered_json to_json(const AblationReport& report);
std::string format_table(const AblationReport& report);

}  // namespace tscr
