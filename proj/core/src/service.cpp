#include "tscr/service.hpp"

#include <algorithm>
#include <cctype>

namespace tscr {

using nlohmann::json;

namespace {

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool starts_with_folded(std::string_view text, std::size_t at, std::string_view prefix) {
  if (text.size() - at < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i)
    if (fold(text[at + i]) != fold(prefix[i])) return false;
  return true;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || (c & 0x80); }

}  // namespace

std::vector<EntityMatch> search_entities(const Vocab& vocab, std::string_view query,
                                         std::size_t limit) {
  std::vector<EntityMatch> out;
  if (query.empty() || limit == 0) return out;
  for (auto id = Vocab::kFirstEntity; static_cast<std::size_t>(id) < vocab.size(); ++id) {
    const auto& name = vocab.surface_form(id);
    for (std::size_t at = 0; at < name.size(); ++at) {
      const bool word_start = at == 0 || !is_word_char(name[at - 1]);
      if (word_start && starts_with_folded(name, at, query)) {
        out.push_back({id, name, vocab.is_item(id), at});
        break;
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const EntityMatch& a, const EntityMatch& b) {
    return a.match_position < b.match_position || (a.match_position == b.match_position && a.id < b.id);
  });
  if (out.size() > limit) out.resize(limit);
  return out;
}

json serve_recommend(const ServedModel& served, const json& request) {
  if (!request.is_object()) throw ServiceError(400, "request body must be a JSON object");
  const auto& vocab = *served.vocab;
  long long k = 10;
  if (request.contains("k")) {
    if (!request["k"].is_number_integer()) throw ServiceError(400, "k must be an integer");
    k = request["k"].get<long long>();
  }
  if (k <= 0) throw ServiceError(400, "k must be positive");
  std::vector<EntityId> context;
  json unknown = json::array();
  if (request.contains("context")) {
    if (!request["context"].is_array()) throw ServiceError(400, "context must be an array");
    for (const auto& entry : request["context"]) {
      if (!entry.is_string()) throw ServiceError(400, "context entries must be strings");
      const auto ext = entry.get<std::string>();
      if (auto id = vocab.find(ext)) {
        context.push_back(*id);
      } else {
        unknown.push_back(ext);
      }
    }
  }
  const auto ranked = recommend_topk(*served.model, context, static_cast<std::size_t>(k));
  json items = json::array();
  for (const auto& r : ranked) {
    items.push_back({{"id", vocab.external_id(r.item)},
                     {"surface_form", vocab.surface_form(r.item)},
                     {"score", r.score}});
  }
  return {{"items", items},
          {"model_version", served.version},
          {"diagnostics", {{"unknown_ids", unknown}}}};
}

json serve_entity_search(const ServedModel& served, std::string_view query, std::size_t limit) {
  json out = json::array();
  for (const auto& m : search_entities(*served.vocab, query, limit)) {
    out.push_back({{"id", served.vocab->external_id(m.id)},
                   {"surface_form", m.surface_form},
                   {"is_item", m.is_item}});
  }
  return out;
}

}  // namespace tscr
