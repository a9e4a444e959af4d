#pragma once

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tscr/corpus.hpp"
#include "tscr/model.hpp"

namespace tscr {

/// A request that cannot be served; `status` is the HTTP status to return.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message)
      : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Immutable model snapshot plus the vocabulary it was trained on.
struct ServedModel {
  std::shared_ptr<const TscrModel> model;
  std::shared_ptr<const Vocab> vocab;
  std::string version;
};

struct EntityMatch {
  EntityId id = 0;
  std::string surface_form;
  bool is_item = false;
  std::size_t match_position = 0;
};

/// Case-insensitive prefix matches against the start of any word of the
/// surface form. Ordered by match position, then id; at most `limit`.
std::vector<EntityMatch> search_entities(const Vocab& vocab, std::string_view query,
                                         std::size_t limit);

/// {"context": [external ids], "k": n} -> {"items": [...], "model_version",
/// "diagnostics": {"unknown_ids": [...]}}.
nlohmann::json serve_recommend(const ServedModel& served, const nlohmann::json& request);
nlohmann::json serve_entity_search(const ServedModel& served, std::string_view query,
                                   std::size_t limit);

/// Holds the current snapshot; replacing it is atomic for readers.
class ModelHolder {
 public:
  explicit ModelHolder(ServedModel initial) : current_(std::make_shared<ServedModel>(std::move(initial))) {}

  std::shared_ptr<const ServedModel> get() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void replace(ServedModel next) {
    auto fresh = std::make_shared<ServedModel>(std::move(next));
    std::lock_guard lock(mu_);
    current_ = std::move(fresh);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ServedModel> current_;
};

}  // namespace tscr
