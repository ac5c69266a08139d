#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpm/csv.hpp"
#include "dpm/error.hpp"
#include "dpm/util.hpp"

namespace dpm {

enum class Obs : std::int8_t { Missing = -1, Zero = 0, One = 1 };

struct Visit {
  std::string subject_id;
  double age_months = 0.0;
  std::map<std::string, Obs> observations;
  std::map<std::string, bool> outcomes;  // occurred at this visit

  bool operator==(const Visit&) const = default;
};

struct Subject {
  std::string subject_id;
  std::vector<Visit> visits;  // strictly ascending age

  bool operator==(const Subject&) const = default;
};

struct IngestConfig {
  std::string subject_col;
  std::string age_col;
  std::vector<std::string> model_vars;
  std::vector<std::string> extra_vars;
  std::vector<std::string> outcome_cols;
};

struct Dataset {
  std::string subject_column = "subject_id";
  std::string age_column = "age_months";
  std::map<std::string, Subject> subjects;
  std::vector<std::string> model_variables;
  std::vector<std::string> extra_variables;
  std::vector<std::string> outcome_names;

  bool operator==(const Dataset&) const = default;

  std::size_t n_visits() const {
    std::size_t n = 0;
    for (const auto& [_, s] : subjects) n += s.visits.size();
    return n;
  }

  bool is_model_variable(std::string_view v) const {
    return std::find(model_variables.begin(), model_variables.end(), v) !=
           model_variables.end();
  }
  bool is_extra_variable(std::string_view v) const {
    return std::find(extra_variables.begin(), extra_variables.end(), v) !=
           extra_variables.end();
  }
};

namespace detail {

inline void check_names(const std::vector<std::string>& names,
                        std::set<std::string>& seen, const char* what) {
  for (const auto& n : names) {
    if (n.empty()) {
      throw Error(ErrorCode::InvalidConfig,
                  std::string("empty column name in ") + what);
    }
    if (!seen.insert(n).second) {
      throw Error(ErrorCode::InvalidConfig, "column '" + n + "' listed twice",
                  {{"column", n}});
    }
  }
}

inline Obs parse_obs(const std::string& cell, const std::string& column,
                     std::size_t row) {
  if (cell.empty()) return Obs::Missing;
  if (cell == "0") return Obs::Zero;
  if (cell == "1") return Obs::One;
  throw Error(ErrorCode::NonBinaryValue,
              "row " + std::to_string(row) + ": column '" + column +
                  "' has non-binary value '" + cell + "'",
              {{"row", row}, {"column", column}, {"value", cell}});
}

}  // namespace detail

inline void validate_config(const IngestConfig& cfg) {
  if (cfg.subject_col.empty() || cfg.age_col.empty()) {
    throw Error(ErrorCode::InvalidConfig, "subject_col and age_col are required");
  }
  std::set<std::string> seen{cfg.subject_col};
  if (!seen.insert(cfg.age_col).second) {
    throw Error(ErrorCode::InvalidConfig, "subject_col and age_col coincide");
  }
  detail::check_names(cfg.model_vars, seen, "model_vars");
  detail::check_names(cfg.extra_vars, seen, "extra_vars");
  detail::check_names(cfg.outcome_cols, seen, "outcome_cols");
}

inline IngestConfig ingest_config_from_json(const nlohmann::json& j) {
  IngestConfig cfg;
  try {
    cfg.subject_col = j.at("subject_col").get<std::string>();
    cfg.age_col = j.at("age_col").get<std::string>();
    cfg.model_vars = j.at("model_vars").get<std::vector<std::string>>();
    cfg.extra_vars = j.value("extra_vars", std::vector<std::string>{});
    cfg.outcome_cols = j.value("outcome_cols", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig,
                std::string("bad ingest config: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

// Config that reproduces `d` when fed its own export.
inline IngestConfig config_of(const Dataset& d) {
  return {d.subject_column, d.age_column, d.model_variables, d.extra_variables,
          d.outcome_names};
}

// Checks every Dataset invariant; throws the matching ingest error.
inline void validate(const Dataset& d) {
  validate_config(config_of(d));
  std::set<std::string> vars(d.model_variables.begin(), d.model_variables.end());
  vars.insert(d.extra_variables.begin(), d.extra_variables.end());
  std::set<std::string> outcomes(d.outcome_names.begin(), d.outcome_names.end());
  for (const auto& [id, s] : d.subjects) {
    if (id.empty() || s.subject_id != id) {
      throw Error(ErrorCode::MalformedCsv, "subject id mismatch",
                  {{"subject_id", id}});
    }
    if (s.visits.empty()) {
      throw Error(ErrorCode::MalformedCsv, "subject '" + id + "' has no visits",
                  {{"subject_id", id}});
    }
    for (std::size_t t = 0; t < s.visits.size(); ++t) {
      const Visit& v = s.visits[t];
      if (v.subject_id != id) {
        throw Error(ErrorCode::MalformedCsv, "visit subject mismatch",
                    {{"subject_id", id}});
      }
      if (!std::isfinite(v.age_months)) {
        throw Error(ErrorCode::MalformedCsv, "non-finite age",
                    {{"subject_id", id}});
      }
      if (v.age_months < 0) {
        throw Error(ErrorCode::NegativeAge, "negative age",
                    {{"subject_id", id}, {"age_months", v.age_months}});
      }
      if (t > 0 && !(s.visits[t - 1].age_months < v.age_months)) {
        throw Error(ErrorCode::DuplicateVisit,
                    "visits not strictly ascending in age",
                    {{"subject_id", id}, {"age_months", v.age_months}});
      }
      for (const auto& [name, _] : v.observations) {
        if (!vars.count(name)) {
          throw Error(ErrorCode::UnknownVariable,
                      "unknown observation '" + name + "'",
                      {{"variable", name}});
        }
      }
      for (const auto& [name, _] : v.outcomes) {
        if (!outcomes.count(name)) {
          throw Error(ErrorCode::UnknownColumn, "unknown outcome '" + name + "'",
                      {{"column", name}});
        }
      }
    }
  }
}

inline Dataset parse_dataset(std::string_view csv_text, const IngestConfig& cfg) {
  validate_config(cfg);
  auto records = csv::read(csv_text);
  if (records.empty()) {
    throw Error(ErrorCode::MalformedCsv, "missing header row", {{"row", 1}});
  }
  const auto& header = records.front().fields;
  std::map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!column_index.emplace(header[i], i).second) {
      throw Error(ErrorCode::MalformedCsv,
                  "duplicate header column '" + header[i] + "'",
                  {{"row", records.front().line}, {"column", header[i]}});
    }
  }
  auto col = [&](const std::string& name) {
    auto it = column_index.find(name);
    if (it == column_index.end()) {
      throw Error(ErrorCode::UnknownColumn,
                  "config references absent column '" + name + "'",
                  {{"column", name}});
    }
    return it->second;
  };

  const std::size_t subject_idx = col(cfg.subject_col);
  const std::size_t age_idx = col(cfg.age_col);
  std::vector<std::pair<std::string, std::size_t>> obs_cols;
  for (const auto& v : cfg.model_vars) obs_cols.emplace_back(v, col(v));
  for (const auto& v : cfg.extra_vars) obs_cols.emplace_back(v, col(v));
  std::vector<std::pair<std::string, std::size_t>> outcome_cols;
  for (const auto& o : cfg.outcome_cols) outcome_cols.emplace_back(o, col(o));

  Dataset d;
  d.subject_column = cfg.subject_col;
  d.age_column = cfg.age_col;
  d.model_variables = cfg.model_vars;
  d.extra_variables = cfg.extra_vars;
  d.outcome_names = cfg.outcome_cols;

  std::map<std::string, std::map<double, std::size_t>> seen_ages;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::size_t row = rec.line;
    if (rec.fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedCsv,
                  "row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(rec.fields.size()),
                  {{"row", row},
                   {"expected", header.size()},
                   {"actual", rec.fields.size()}});
    }
    Visit v;
    v.subject_id = rec.fields[subject_idx];
    if (v.subject_id.empty()) {
      throw Error(ErrorCode::MalformedCsv,
                  "row " + std::to_string(row) + ": empty subject id",
                  {{"row", row}});
    }
    const auto& age_cell = rec.fields[age_idx];
    if (!util::parse_double(age_cell, v.age_months) ||
        !std::isfinite(v.age_months)) {
      throw Error(ErrorCode::MalformedCsv,
                  "row " + std::to_string(row) + ": bad age '" + age_cell + "'",
                  {{"row", row}, {"column", cfg.age_col}, {"value", age_cell}});
    }
    if (v.age_months < 0) {
      throw Error(ErrorCode::NegativeAge,
                  "row " + std::to_string(row) + ": negative age",
                  {{"row", row}, {"age_months", v.age_months}});
    }
    if (v.age_months == 0.0) v.age_months = 0.0;  // fold -0
    for (const auto& [name, idx] : obs_cols) {
      v.observations.emplace(name, detail::parse_obs(rec.fields[idx], name, row));
    }
    for (const auto& [name, idx] : outcome_cols) {
      Obs flag = detail::parse_obs(rec.fields[idx], name, row);
      v.outcomes.emplace(name, flag == Obs::One);
    }
    auto [it, inserted] = seen_ages[v.subject_id].emplace(v.age_months, row);
    if (!inserted) {
      throw Error(ErrorCode::DuplicateVisit,
                  "row " + std::to_string(row) + ": subject '" + v.subject_id +
                      "' already has a visit at age " +
                      util::format_double(v.age_months),
                  {{"row", row},
                   {"first_row", it->second},
                   {"subject_id", v.subject_id},
                   {"age_months", v.age_months}});
    }
    auto& subject = d.subjects[v.subject_id];
    subject.subject_id = v.subject_id;
    subject.visits.push_back(std::move(v));
  }
  for (auto& [_, s] : d.subjects) {
    std::sort(s.visits.begin(), s.visits.end(),
              [](const Visit& a, const Visit& b) {
                return a.age_months < b.age_months;
              });
  }
  return d;
}

inline std::string export_dataset(const Dataset& d) {
  std::string out;
  auto emit_row = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += csv::escape(cells[i]);
    }
    out.push_back('\n');
  };
  std::vector<std::string> header{d.subject_column, d.age_column};
  header.insert(header.end(), d.model_variables.begin(), d.model_variables.end());
  header.insert(header.end(), d.extra_variables.begin(), d.extra_variables.end());
  header.insert(header.end(), d.outcome_names.begin(), d.outcome_names.end());
  emit_row(header);

  auto obs_cell = [](const Visit& v, const std::string& name) -> std::string {
    auto it = v.observations.find(name);
    if (it == v.observations.end() || it->second == Obs::Missing) return "";
    return it->second == Obs::One ? "1" : "0";
  };
  for (const auto& [id, s] : d.subjects) {
    for (const auto& v : s.visits) {
      std::vector<std::string> cells{id, util::format_double(v.age_months)};
      for (const auto& m : d.model_variables) cells.push_back(obs_cell(v, m));
      for (const auto& x : d.extra_variables) cells.push_back(obs_cell(v, x));
      for (const auto& o : d.outcome_names) {
        auto it = v.outcomes.find(o);
        cells.push_back(it != v.outcomes.end() && it->second ? "1" : "0");
      }
      emit_row(cells);
    }
  }
  return out;
}

// Content-derived identifier; equal datasets share an id.
inline std::string dataset_id(const Dataset& d) {
  return "d-" + util::hex64(util::fnv1a64(export_dataset(d)));
}

// --- JSON ---------------------------------------------------------------

inline nlohmann::ordered_json obs_to_json(Obs o) {
  if (o == Obs::Missing) return nullptr;
  return o == Obs::One ? 1 : 0;
}

inline nlohmann::ordered_json to_json(const Dataset& d) {
  nlohmann::ordered_json j;
  j["subject_column"] = d.subject_column;
  j["age_column"] = d.age_column;
  j["model_variables"] = d.model_variables;
  j["extra_variables"] = d.extra_variables;
  j["outcome_names"] = d.outcome_names;
  auto subjects = nlohmann::ordered_json::array();
  for (const auto& [id, s] : d.subjects) {
    auto visits = nlohmann::ordered_json::array();
    for (const auto& v : s.visits) {
      nlohmann::ordered_json vj;
      vj["age_months"] = v.age_months;
      auto obs = nlohmann::ordered_json::object();
      for (const auto& m : d.model_variables) {
        auto it = v.observations.find(m);
        obs[m] = obs_to_json(it == v.observations.end() ? Obs::Missing : it->second);
      }
      for (const auto& x : d.extra_variables) {
        auto it = v.observations.find(x);
        obs[x] = obs_to_json(it == v.observations.end() ? Obs::Missing : it->second);
      }
      vj["observations"] = std::move(obs);
      auto outs = nlohmann::ordered_json::object();
      for (const auto& o : d.outcome_names) {
        auto it = v.outcomes.find(o);
        outs[o] = it != v.outcomes.end() && it->second;
      }
      vj["outcomes"] = std::move(outs);
      visits.push_back(std::move(vj));
    }
    subjects.push_back({{"subject_id", id}, {"visits", std::move(visits)}});
  }
  j["subjects"] = std::move(subjects);
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset d;
  try {
    d.subject_column = j.at("subject_column").get<std::string>();
    d.age_column = j.at("age_column").get<std::string>();
    d.model_variables = j.at("model_variables").get<std::vector<std::string>>();
    d.extra_variables = j.at("extra_variables").get<std::vector<std::string>>();
    d.outcome_names = j.at("outcome_names").get<std::vector<std::string>>();
    for (const auto& sj : j.at("subjects")) {
      Subject s;
      s.subject_id = sj.at("subject_id").get<std::string>();
      for (const auto& vj : sj.at("visits")) {
        Visit v;
        v.subject_id = s.subject_id;
        v.age_months = vj.at("age_months").get<double>();
        for (const auto& [name, value] : vj.at("observations").items()) {
          Obs o = Obs::Missing;
          if (!value.is_null()) {
            int x = value.get<int>();
            if (x != 0 && x != 1) {
              throw Error(ErrorCode::NonBinaryValue,
                          "non-binary observation for '" + name + "'",
                          {{"column", name}});
            }
            o = x ? Obs::One : Obs::Zero;
          }
          v.observations.emplace(name, o);
        }
        for (const auto& [name, value] : vj.at("outcomes").items()) {
          v.outcomes.emplace(name, value.get<bool>());
        }
        s.visits.push_back(std::move(v));
      }
      auto id = s.subject_id;
      if (!d.subjects.emplace(id, std::move(s)).second) {
        throw Error(ErrorCode::MalformedCsv, "subject '" + id + "' listed twice",
                    {{"subject_id", id}});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError,
                std::string("bad dataset document: ") + e.what());
  }
  validate(d);
  return d;
}

}  // namespace dpm
