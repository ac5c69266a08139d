#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpm/error.hpp"
#include "dpm/util.hpp"

namespace dpm {

struct Cohort {
  std::string cohort_id;
  std::string name;
  std::string query_text;
  std::set<std::string> member_ids;
  std::string created_from_model;

  bool operator==(const Cohort&) const = default;
};

inline nlohmann::ordered_json to_json(const Cohort& c) {
  nlohmann::ordered_json j;
  j["cohort_id"] = c.cohort_id;
  j["name"] = c.name;
  j["query_text"] = c.query_text;
  j["member_ids"] = c.member_ids;
  j["created_from_model"] = c.created_from_model;
  return j;
}

inline Cohort cohort_from_json(const nlohmann::json& j) {
  try {
    return {j.at("cohort_id").get<std::string>(), j.at("name").get<std::string>(),
            j.at("query_text").get<std::string>(),
            j.at("member_ids").get<std::set<std::string>>(),
            j.at("created_from_model").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("bad cohort document: ") + e.what());
  }
}

// Cohorts persisted one document per file under <data_dir>/cohorts/.
// Writers are serialized; readers run concurrently and always see a
// complete state.
class CohortStore {
 public:
  explicit CohortStore(std::filesystem::path data_dir)
      : dir_(std::move(data_dir) / "cohorts"), rng_(std::random_device{}()) {
    std::filesystem::create_directories(dir_);
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      if (entry.path().extension() != ".json") continue;
      auto c = cohort_from_json(nlohmann::json::parse(util::read_file(entry.path())));
      cohorts_.emplace(c.cohort_id, std::move(c));
    }
  }

  Cohort save(std::string name, std::string query_text, std::set<std::string> member_ids,
              std::string model_id) {
    std::unique_lock lock(mutex_);
    Cohort c{fresh_id(), std::move(name), std::move(query_text), std::move(member_ids),
             std::move(model_id)};
    util::write_file_atomic(path_of(c.cohort_id), to_json(c).dump(2) + "\n");
    cohorts_.emplace(c.cohort_id, c);
    return c;
  }

  std::vector<Cohort> list() const {
    std::shared_lock lock(mutex_);
    std::vector<Cohort> out;
    for (const auto& [_, c] : cohorts_) out.push_back(c);
    return out;
  }

  std::optional<Cohort> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = cohorts_.find(id);
    if (it == cohorts_.end()) return std::nullopt;
    return it->second;
  }

  // False when no such cohort exists.
  bool remove(const std::string& id) {
    std::unique_lock lock(mutex_);
    auto it = cohorts_.find(id);
    if (it == cohorts_.end()) return false;
    std::filesystem::remove(path_of(id));
    cohorts_.erase(it);
    return true;
  }

  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Cohort> cohorts_;
  std::mt19937_64 rng_;

  std::filesystem::path path_of(const std::string& id) const { return dir_ / (id + ".json"); }

  std::string fresh_id() {
    for (;;) {
      std::string id = "c-" + util::hex64(rng_());
      if (!cohorts_.count(id) && !std::filesystem::exists(path_of(id))) return id;
    }
  }
};

}  // namespace dpm
