#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dpm/cohort_store.hpp"
#include "dpm/error.hpp"
#include "dpm/hmm.hpp"
#include "dpm/ingest.hpp"
#include "dpm/query.hpp"
#include "dpm/summarize.hpp"
#include "dpm/util.hpp"

namespace dpm {

struct HttpError {
  int status = 500;
  nlohmann::ordered_json body;
};

// Maps library errors onto the service's error vocabulary. The original
// library error kind is kept in detail.kind.
inline HttpError to_http_error(const Error& e) {
  std::string code;
  int status = 400;
  switch (e.code()) {
    case ErrorCode::NotFound:
      code = "NotFound";
      status = 404;
      break;
    case ErrorCode::TrainingBusy:
      code = "TrainingBusy";
      status = 503;
      break;
    case ErrorCode::SyntaxError:
    case ErrorCode::DuplicateAttr:
    case ErrorCode::BadAttrValue:
      code = "QueryParseError";
      break;
    case ErrorCode::Io:
      code = "InternalError";
      status = 500;
      break;
    default:
      code = "ValidationError";
  }
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
  detail["kind"] = to_string(e.code());
  for (const auto& [k, v] : e.detail().items()) detail[k] = v;
  nlohmann::ordered_json body;
  body["code"] = code;
  body["message"] = e.what();
  body["detail"] = std::move(detail);
  return {status, std::move(body)};
}

// File-backed store of datasets, models, decodings and cohorts.
//
//   <data_dir>/datasets/<dataset_id>.json
//   <data_dir>/models/<model_id>.json
//   <data_dir>/models/<model_id>.decoding.json   (cache, written on first use)
//   <data_dir>/cohorts/<cohort_id>.json
class Workspace {
 public:
  explicit Workspace(std::filesystem::path data_dir)
      : data_dir_(std::move(data_dir)), cohorts_(data_dir_) {
    namespace fs = std::filesystem;
    fs::create_directories(data_dir_ / "datasets");
    fs::create_directories(data_dir_ / "models");
    for (const auto& entry : fs::directory_iterator(data_dir_ / "datasets")) {
      if (entry.path().extension() != ".json") continue;
      auto d = dataset_from_json(nlohmann::json::parse(util::read_file(entry.path())));
      datasets_.emplace(entry.path().stem().string(), std::make_shared<const Dataset>(std::move(d)));
    }
    for (const auto& entry : fs::directory_iterator(data_dir_ / "models")) {
      const auto name = entry.path().filename().string();
      if (entry.path().extension() != ".json" || name.ends_with(".decoding.json")) continue;
      auto m = model_from_json(nlohmann::ordered_json::parse(util::read_file(entry.path())));
      ModelEntry e;
      e.model = std::make_shared<const HmmModel>(std::move(m));
      models_.emplace(entry.path().stem().string(), std::move(e));
    }
  }

  const std::filesystem::path& data_dir() const { return data_dir_; }
  CohortStore& cohorts() { return cohorts_; }

  std::pair<std::string, std::shared_ptr<const Dataset>> add_dataset(Dataset d) {
    auto id = dataset_id(d);
    std::lock_guard gate(write_gate_);
    {
      std::shared_lock lock(state_);
      auto it = datasets_.find(id);
      if (it != datasets_.end()) return {id, it->second};
    }
    util::write_file_atomic(data_dir_ / "datasets" / (id + ".json"), dump(to_json(d)));
    auto ptr = std::make_shared<const Dataset>(std::move(d));
    std::unique_lock lock(state_);
    datasets_.emplace(id, ptr);
    return {id, ptr};
  }

  std::string add_model(HmmModel m) {
    auto id = model_id(m);
    std::lock_guard gate(write_gate_);
    std::unique_lock lock(state_);
    if (models_.count(id)) return id;
    util::write_file_atomic(data_dir_ / "models" / (id + ".json"), dump(to_json(m)));
    ModelEntry e;
    e.model = std::make_shared<const HmmModel>(std::move(m));
    models_.emplace(id, std::move(e));
    return id;
  }

  std::shared_ptr<const Dataset> dataset(const std::string& id) const {
    std::shared_lock lock(state_);
    auto it = datasets_.find(id);
    if (it == datasets_.end()) {
      throw Error(ErrorCode::NotFound, "no dataset '" + id + "'", {{"dataset_id", id}});
    }
    return it->second;
  }

  std::shared_ptr<const HmmModel> model(const std::string& id) const {
    std::shared_lock lock(state_);
    return find_model(id).model;
  }

  // Decoding of a model on the dataset it was trained on; computed and
  // persisted on first request.
  std::shared_ptr<const DecodingSet> decoding(const std::string& id) {
    std::shared_ptr<const HmmModel> m;
    {
      std::shared_lock lock(state_);
      const auto& e = find_model(id);
      if (e.decoding) return e.decoding;
      m = e.model;
    }
    const auto path = data_dir_ / "models" / (id + ".decoding.json");
    std::shared_ptr<const DecodingSet> dec;
    if (std::filesystem::exists(path)) {
      dec = std::make_shared<const DecodingSet>(
          decoding_from_json(nlohmann::ordered_json::parse(util::read_file(path))));
    } else {
      auto d = dataset(m->trained_on);
      dec = std::make_shared<const DecodingSet>(decode(*m, *d));
      std::lock_guard gate(write_gate_);
      if (!std::filesystem::exists(path)) util::write_file_atomic(path, dump(to_json(*dec)));
    }
    std::unique_lock lock(state_);
    auto& e = models_.at(id);
    if (!e.decoding) e.decoding = dec;
    return e.decoding;
  }

  std::vector<std::string> dataset_ids() const {
    std::shared_lock lock(state_);
    std::vector<std::string> out;
    for (const auto& [id, _] : datasets_) out.push_back(id);
    return out;
  }

  std::vector<std::string> model_ids() const {
    std::shared_lock lock(state_);
    std::vector<std::string> out;
    for (const auto& [id, _] : models_) out.push_back(id);
    return out;
  }

  Cohort save_cohort(std::string name, std::string query, std::set<std::string> members,
                     std::string model) {
    std::lock_guard gate(write_gate_);
    return cohorts_.save(std::move(name), std::move(query), std::move(members), std::move(model));
  }

  bool delete_cohort(const std::string& id) {
    std::lock_guard gate(write_gate_);
    return cohorts_.remove(id);
  }

 private:
  struct ModelEntry {
    std::shared_ptr<const HmmModel> model;
    std::shared_ptr<const DecodingSet> decoding;
  };

  std::filesystem::path data_dir_;
  CohortStore cohorts_;
  mutable std::shared_mutex state_;
  std::mutex write_gate_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, ModelEntry> models_;

  const ModelEntry& find_model(const std::string& id) const {
    auto it = models_.find(id);
    if (it == models_.end()) {
      throw Error(ErrorCode::NotFound, "no model '" + id + "'", {{"model_id", id}});
    }
    return it->second;
  }
};

// Endpoint logic, independent of the HTTP transport. Every method returns the
// JSON payload of the matching endpoint or throws dpm::Error.
class Service {
 public:
  explicit Service(std::filesystem::path data_dir) : ws_(std::move(data_dir)) {}

  Workspace& workspace() { return ws_; }
  bool training_in_progress() const { return training_.load(); }

  // POST /api/datasets
  nlohmann::ordered_json create_dataset(std::string_view csv_text,
                                        const nlohmann::json& config) {
    auto cfg = ingest_config_from_json(config);
    auto [id, d] = ws_.add_dataset(parse_dataset(csv_text, cfg));
    nlohmann::ordered_json j;
    j["dataset_id"] = id;
    j["n_subjects"] = d->subjects.size();
    j["n_visits"] = d->n_visits();
    return j;
  }

  // POST /api/models
  nlohmann::ordered_json create_model(const nlohmann::json& body) {
    TrainConfig cfg;
    std::string dataset;
    try {
      dataset = body.at("dataset_id").get<std::string>();
      cfg.n_states = body.at("n_states").get<int>();
      cfg.seed = body.at("seed").get<std::uint64_t>();
      cfg.max_iter = body.value("max_iter", cfg.max_iter);
      cfg.n_restarts = body.value("n_restarts", cfg.n_restarts);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ValidationError, std::string("bad training request: ") + e.what());
    }
    validate(cfg);
    auto d = ws_.dataset(dataset);
    if (training_.exchange(true)) {
      throw Error(ErrorCode::TrainingBusy, "a training job is already running");
    }
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag = false; }
    } release{training_};
    auto m = train(*d, cfg);
    nlohmann::ordered_json j;
    j["log_likelihood"] = m.log_likelihood;
    j["n_iterations_run"] = m.n_iterations_run;
    auto id = ws_.add_model(std::move(m));
    nlohmann::ordered_json out;
    out["model_id"] = id;
    out.update(j);
    return out;
  }

  nlohmann::ordered_json list_datasets() const { return ws_.dataset_ids(); }
  nlohmann::ordered_json list_models() const { return ws_.model_ids(); }

  // GET /api/models/{id}
  nlohmann::ordered_json get_model(const std::string& id) const {
    return to_json(*ws_.model(id));
  }

  // GET /api/models/{id}/feature-matrix?vars=
  nlohmann::ordered_json feature_matrix(const std::string& id,
                                        std::optional<std::vector<std::string>> vars) {
    auto m = ws_.model(id);
    auto d = ws_.dataset(m->trained_on);
    auto dec = ws_.decoding(id);
    if (!vars) {
      vars = m->variables;
      vars->insert(vars->end(), d->extra_variables.begin(), d->extra_variables.end());
    }
    return to_json(dpm::feature_matrix(*m, *dec, *d, *vars));
  }

  // GET /api/models/{id}/waterfall?cohort_id=
  nlohmann::ordered_json waterfall(const std::string& id, const std::optional<std::string>& cohort) {
    auto m = ws_.model(id);
    auto d = ws_.dataset(m->trained_on);
    return to_json(waterfall_points(*ws_.decoding(id), *d, members(cohort)));
  }

  // GET /api/models/{id}/transitions?cohort_id=
  nlohmann::ordered_json transitions(const std::string& id,
                                     const std::optional<std::string>& cohort) {
    auto m = ws_.model(id);
    auto d = ws_.dataset(m->trained_on);
    return to_json(transition_summary(*ws_.decoding(id), *d, members(cohort)));
  }

  // GET /api/models/{id}/density?outcome=&cohort_id=
  nlohmann::ordered_json density(const std::string& id, const std::string& outcome,
                                 const std::optional<std::string>& cohort,
                                 int grid_points = kDefaultGridPoints) {
    auto m = ws_.model(id);
    auto d = ws_.dataset(m->trained_on);
    auto est = kde(outcome_ages(*d, outcome, members(cohort)), grid_points);
    est.outcome = outcome;
    return to_json(est);
  }

  // GET /api/models/{id}/subjects/{sid}
  nlohmann::ordered_json subject(const std::string& id, const std::string& sid) {
    auto m = ws_.model(id);
    auto d = ws_.dataset(m->trained_on);
    auto s = d->subjects.find(sid);
    if (s == d->subjects.end()) {
      throw Error(ErrorCode::NotFound, "no subject '" + sid + "'", {{"subject_id", sid}});
    }
    auto dec = ws_.decoding(id);
    const auto& sd = dec->subjects.at(sid);
    auto visits = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < s->second.visits.size(); ++t) {
      const auto& v = s->second.visits[t];
      nlohmann::ordered_json vj;
      vj["age_months"] = v.age_months;
      auto obs = nlohmann::ordered_json::object();
      for (const auto& name : d->model_variables) obs[name] = obs_to_json(v.observations.at(name));
      for (const auto& name : d->extra_variables) obs[name] = obs_to_json(v.observations.at(name));
      vj["observations"] = std::move(obs);
      vj["state"] = sd.states[t];
      vj["posterior"] = sd.posteriors[t];
      visits.push_back(std::move(vj));
    }
    nlohmann::ordered_json j;
    j["subject_id"] = sid;
    j["visits"] = std::move(visits);
    j["viterbi_path"] = sd.viterbi_path;
    return j;
  }

  // POST /api/cohorts
  nlohmann::ordered_json create_cohort(const nlohmann::json& body) {
    std::string model, name, query_text;
    try {
      model = body.at("model_id").get<std::string>();
      name = body.at("name").get<std::string>();
      query_text = body.at("query").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ValidationError, std::string("bad cohort request: ") + e.what());
    }
    auto q = parse_query(query_text);
    auto members = evaluate(q, *ws_.decoding(model));
    return to_json(ws_.save_cohort(std::move(name), std::move(query_text), std::move(members),
                                   std::move(model)));
  }

  // GET /api/cohorts
  nlohmann::ordered_json list_cohorts() {
    auto j = nlohmann::ordered_json::array();
    for (const auto& c : ws_.cohorts().list()) j.push_back(to_json(c));
    return j;
  }

  // DELETE /api/cohorts/{id}
  nlohmann::ordered_json delete_cohort(const std::string& id) {
    if (!ws_.delete_cohort(id)) {
      throw Error(ErrorCode::NotFound, "no cohort '" + id + "'", {{"cohort_id", id}});
    }
    return {{"deleted", id}};
  }

 private:
  Workspace ws_;
  std::atomic<bool> training_{false};

  SubjectFilter members(const std::optional<std::string>& cohort_id) {
    if (!cohort_id || cohort_id->empty()) return std::nullopt;
    auto c = ws_.cohorts().get(*cohort_id);
    if (!c) {
      throw Error(ErrorCode::NotFound, "no cohort '" + *cohort_id + "'",
                  {{"cohort_id", *cohort_id}});
    }
    return c->member_ids;
  }
};

namespace detail {

inline std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

inline std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename Fn>
httplib::Server::Handler json_handler(Fn fn, int ok_status = 200) {
  return [fn, ok_status](const httplib::Request& req, httplib::Response& res) {
    try {
      auto body = fn(req);
      res.status = ok_status;
      res.set_content(body.dump(), "application/json");
    } catch (const Error& e) {
      auto err = to_http_error(e);
      res.status = err.status;
      res.set_content(err.body.dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      auto err = to_http_error(Error(ErrorCode::ValidationError, e.what()));
      res.status = err.status;
      res.set_content(err.body.dump(), "application/json");
    } catch (const std::exception& e) {
      auto err = to_http_error(Error(ErrorCode::Io, e.what()));
      res.status = err.status;
      res.set_content(err.body.dump(), "application/json");
    }
  };
}

}  // namespace detail

// Dataset upload accepts either multipart form data with "csv" and "config"
// parts, or a JSON body {"csv": "...", "config": {...}}.
inline void install_routes(httplib::Server& server, Service& svc) {
  using detail::json_handler;
  using detail::param;
  using Req = httplib::Request;

  server.Post("/api/datasets", json_handler(
                                   [&svc](const Req& req) {
                                     if (req.is_multipart_form_data()) {
                                       if (!req.has_file("csv") || !req.has_file("config")) {
                                         throw Error(ErrorCode::ValidationError,
                                                     "multipart upload needs 'csv' and "
                                                     "'config' parts");
                                       }
                                       return svc.create_dataset(
                                           req.get_file_value("csv").content,
                                           nlohmann::json::parse(
                                               req.get_file_value("config").content));
                                     }
                                     auto body = nlohmann::json::parse(req.body);
                                     return svc.create_dataset(
                                         body.at("csv").get<std::string>(), body.at("config"));
                                   },
                                   201));
  server.Get("/api/datasets", json_handler([&svc](const Req&) { return svc.list_datasets(); }));
  server.Post("/api/models", json_handler(
                                 [&svc](const Req& req) {
                                   return svc.create_model(nlohmann::json::parse(req.body));
                                 },
                                 201));
  server.Get("/api/models", json_handler([&svc](const Req&) { return svc.list_models(); }));
  server.Get(R"(/api/models/([^/]+))", json_handler([&svc](const Req& req) {
               return svc.get_model(req.matches[1]);
             }));
  server.Get(R"(/api/models/([^/]+)/feature-matrix)", json_handler([&svc](const Req& req) {
               std::optional<std::vector<std::string>> vars;
               if (auto v = param(req, "vars")) vars = detail::split_csv_list(*v);
               return svc.feature_matrix(req.matches[1], vars);
             }));
  server.Get(R"(/api/models/([^/]+)/waterfall)", json_handler([&svc](const Req& req) {
               return svc.waterfall(req.matches[1], param(req, "cohort_id"));
             }));
  server.Get(R"(/api/models/([^/]+)/transitions)", json_handler([&svc](const Req& req) {
               return svc.transitions(req.matches[1], param(req, "cohort_id"));
             }));
  server.Get(R"(/api/models/([^/]+)/density)", json_handler([&svc](const Req& req) {
               auto outcome = param(req, "outcome");
               if (!outcome) throw Error(ErrorCode::ValidationError, "missing 'outcome' parameter");
               int grid = kDefaultGridPoints;
               if (auto g = param(req, "grid_points")) {
                 try {
                   grid = std::stoi(*g);
                 } catch (const std::exception&) {
                   throw Error(ErrorCode::ValidationError, "bad 'grid_points' parameter");
                 }
               }
               return svc.density(req.matches[1], *outcome, param(req, "cohort_id"), grid);
             }));
  server.Get(R"(/api/models/([^/]+)/subjects/([^/]+))", json_handler([&svc](const Req& req) {
               return svc.subject(req.matches[1], req.matches[2]);
             }));
  server.Post("/api/cohorts", json_handler(
                                  [&svc](const Req& req) {
                                    return svc.create_cohort(nlohmann::json::parse(req.body));
                                  },
                                  201));
  server.Get("/api/cohorts", json_handler([&svc](const Req&) { return svc.list_cohorts(); }));
  server.Delete(R"(/api/cohorts/([^/]+))", json_handler([&svc](const Req& req) {
                  return svc.delete_cohort(req.matches[1]);
                }));
}

// "host:port" -> (host, port)
inline std::pair<std::string, int> parse_bind(const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == bind.size()) {
    throw Error(ErrorCode::InvalidConfig, "bind address must be host:port", {{"bind", bind}});
  }
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "bad port in bind address", {{"bind", bind}});
  }
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::InvalidConfig, "port out of range", {{"bind", bind}});
  }
  return {bind.substr(0, colon), port};
}

}  // namespace dpm
