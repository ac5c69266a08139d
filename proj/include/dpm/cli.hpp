#pragma once

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpm/cohort_store.hpp"
#include "dpm/error.hpp"
#include "dpm/hmm.hpp"
#include "dpm/ingest.hpp"
#include "dpm/query.hpp"
#include "dpm/service.hpp"
#include "dpm/summarize.hpp"
#include "dpm/util.hpp"

namespace dpm::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kUsage = 2 };

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

namespace detail {

inline void write_json_line(std::ostream& os, const nlohmann::ordered_json& j) {
  os << j.dump() << '\n';
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_json(nlohmann::json::parse(util::read_file(path)));
}

inline HmmModel load_model(const std::string& path) {
  return model_from_json(nlohmann::ordered_json::parse(util::read_file(path)));
}

inline httplib::Server* g_server = nullptr;

inline void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace detail

// Runs one dpm command. Data goes to `out`, diagnostics to `err` as a single
// JSON object. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hidden Markov model toolkit for longitudinal cohort data", "dpm"};
  app.require_subcommand(1);

  std::string csv_path, config_path, out_path;
  auto* ingest = app.add_subcommand("ingest", "Parse a visit CSV into a dataset document");
  ingest->add_option("csv", csv_path, "Visit CSV")->required();
  ingest->add_option("--config", config_path, "Ingest config JSON")->required();
  ingest->add_option("--out", out_path, "Dataset output path")->required();

  std::string dataset_path, model_path;
  TrainConfig train_cfg;
  auto* train_cmd = app.add_subcommand("train", "Fit an HMM with Baum-Welch");
  train_cmd->add_option("dataset", dataset_path, "Dataset document")->required();
  train_cmd->add_option("--states", train_cfg.n_states, "Number of hidden states")->required();
  train_cmd->add_option("--seed", train_cfg.seed, "Random seed")->required();
  train_cmd->add_option("--max-iter", train_cfg.max_iter, "EM iteration cap");
  train_cmd->add_option("--restarts", train_cfg.n_restarts, "Random restarts");
  train_cmd->add_option("--out", out_path, "Model output path")->required();

  auto* decode_cmd = app.add_subcommand("decode", "Posterior and Viterbi decoding per subject");
  decode_cmd->add_option("model", model_path, "Model document")->required();
  decode_cmd->add_option("dataset", dataset_path, "Dataset document")->required();
  decode_cmd->add_option("--out", out_path, "Decoding output path")->required();

  std::string decoding_path, query_text, save_name;
  std::string data_dir = env_or("DPM_DATA_DIR", "./data");
  auto* query_cmd = app.add_subcommand("query", "List subjects matching a state-sequence query");
  query_cmd->add_option("decoding", decoding_path, "Decoding document")->required();
  query_cmd->add_option("query", query_text, "Query text")->required();
  query_cmd->add_option("--save", save_name, "Persist the result as a named cohort");
  query_cmd->add_option("--data-dir", data_dir, "Cohort store root (default $DPM_DATA_DIR)");

  bool want_fm = false, want_tr = false;
  std::string density_outcome;
  int grid_points = kDefaultGridPoints;
  auto* summary_cmd = app.add_subcommand("summary", "Feature matrix, transitions or density");
  summary_cmd->add_option("model", model_path, "Model document")->required();
  summary_cmd->add_option("dataset", dataset_path, "Dataset document")->required();
  auto* fm_flag = summary_cmd->add_flag("--feature-matrix", want_fm, "Per-state feature matrix");
  auto* tr_flag = summary_cmd->add_flag("--transitions", want_tr, "Transition counts and ages");
  auto* de_opt =
      summary_cmd->add_option("--density", density_outcome, "Outcome age density");
  summary_cmd->add_option("--grid-points", grid_points, "Density grid size");
  fm_flag->excludes(tr_flag)->excludes(de_opt);
  tr_flag->excludes(de_opt);

  std::string bind = env_or("DPM_BIND", "127.0.0.1:8080");
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  serve_cmd->add_option("--data-dir", data_dir, "Data directory (default $DPM_DATA_DIR)");
  serve_cmd->add_option("--bind", bind, "host:port (default $DPM_BIND)");

  try {
    app.parse(argc, argv);
    if (summary_cmd->parsed() && !want_fm && !want_tr && de_opt->count() == 0) {
      throw CLI::ValidationError("summary",
                                 "one of --feature-matrix, --transitions, --density is required");
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    nlohmann::ordered_json j;
    j["code"] = "UsageError";
    j["message"] = e.what();
    detail::write_json_line(err, j);
    return kUsage;
  }

  try {
    if (ingest->parsed()) {
      auto cfg = ingest_config_from_json(nlohmann::json::parse(util::read_file(config_path)));
      auto d = parse_dataset(util::read_file(csv_path), cfg);
      util::write_file_atomic(out_path, dump(to_json(d)));
    } else if (train_cmd->parsed()) {
      auto m = train(detail::load_dataset(dataset_path), train_cfg);
      util::write_file_atomic(out_path, dump(to_json(m)));
    } else if (decode_cmd->parsed()) {
      auto dec = decode(detail::load_model(model_path), detail::load_dataset(dataset_path));
      util::write_file_atomic(out_path, dump(to_json(dec)));
    } else if (query_cmd->parsed()) {
      auto dec = decoding_from_json(nlohmann::ordered_json::parse(util::read_file(decoding_path)));
      auto members = evaluate(parse_query(query_text), dec);
      for (const auto& id : members) out << id << '\n';
      if (!save_name.empty()) {
        CohortStore store(data_dir);
        store.save(save_name, query_text, members, dec.model_id);
      }
    } else if (summary_cmd->parsed()) {
      auto m = detail::load_model(model_path);
      auto d = detail::load_dataset(dataset_path);
      if (want_fm) {
        auto vars = m.variables;
        vars.insert(vars.end(), d.extra_variables.begin(), d.extra_variables.end());
        out << dump(to_json(feature_matrix(m, decode(m, d), d, vars)));
      } else if (want_tr) {
        out << dump(to_json(transition_summary(decode(m, d), d)));
      } else {
        auto est = kde(outcome_ages(d, density_outcome), grid_points);
        est.outcome = density_outcome;
        out << dump(to_json(est));
      }
    } else if (serve_cmd->parsed()) {
      auto [host, port] = parse_bind(bind);
      Service svc(data_dir);
      httplib::Server server;
      install_routes(server, svc);
      detail::g_server = &server;
      std::signal(SIGINT, detail::stop_server);
      std::signal(SIGTERM, detail::stop_server);
      nlohmann::ordered_json j;
      j["listening"] = bind;
      j["data_dir"] = data_dir;
      detail::write_json_line(err, j);
      if (!server.listen(host, port)) {
        throw Error(ErrorCode::Io, "cannot bind " + bind, {{"bind", bind}});
      }
      detail::g_server = nullptr;
    }
  } catch (const Error& e) {
    detail::write_json_line(err, e.to_json());
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    detail::write_json_line(err, Error(ErrorCode::ValidationError, e.what()).to_json());
    return kValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    detail::write_json_line(err, Error(ErrorCode::Io, e.what()).to_json());
    return kValidation;
  }
  return kOk;
}

}  // namespace dpm::cli
