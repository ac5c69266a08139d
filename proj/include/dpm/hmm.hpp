#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpm/error.hpp"
#include "dpm/ingest.hpp"
#include "dpm/rng.hpp"
#include "dpm/util.hpp"

namespace dpm {

// Emission probabilities are kept inside [kEmissionFloor, 1 - kEmissionFloor].
inline constexpr double kEmissionFloor = 1e-6;
inline constexpr double kNormTolerance = 1e-9;

struct HmmModel {
  int n_states = 1;
  std::vector<double> initial;                  // [K]
  std::vector<std::vector<double>> transition;  // [K][K], row-stochastic
  std::vector<std::string> variables;           // emission order
  std::vector<std::vector<double>> emission;    // [V][K] = P(v = 1 | k)
  std::string trained_on;
  double log_likelihood = 0.0;
  std::uint64_t seed = 0;
  int n_iterations_run = 0;

  bool operator==(const HmmModel&) const = default;

  std::optional<std::size_t> variable_index(std::string_view name) const {
    auto it = std::find(variables.begin(), variables.end(), name);
    if (it == variables.end()) return std::nullopt;
    return static_cast<std::size_t>(it - variables.begin());
  }
};

struct TrainConfig {
  int n_states = 2;
  int max_iter = 500;
  double rel_tol = 1e-6;
  int n_restarts = 5;
  std::uint64_t seed = 0;
  unsigned n_threads = 0;  // 0 = pick from hardware; never affects results
};

struct Posterior {
  std::vector<std::vector<double>> posteriors;  // [T][K]
  double log_likelihood = 0.0;
};

struct Decoding {
  std::vector<double> ages;
  std::vector<int> states;                      // posterior argmax
  std::vector<std::vector<double>> posteriors;  // [T][K]
  std::vector<int> viterbi_path;
  double log_likelihood = 0.0;

  bool operator==(const Decoding&) const = default;
};

struct DecodingSet {
  std::string model_id;
  std::string dataset_id;
  int n_states = 0;
  std::map<std::string, Decoding> subjects;

  bool operator==(const DecodingSet&) const = default;
};

// Per-iteration log-likelihoods, one vector per restart attempt that ran to
// completion (the first entry is the likelihood of the initial draw).
struct TrainReport {
  HmmModel model;
  std::vector<std::vector<double>> traces;
  std::size_t best_restart = 0;
};

// Lowest index wins ties.
inline int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

inline void validate(const TrainConfig& c) {
  if (c.n_states < 1 || c.max_iter < 1 || !(c.rel_tol > 0) || c.n_restarts < 1) {
    throw Error(ErrorCode::InvalidConfig,
                "train config requires n_states >= 1, max_iter >= 1, "
                "rel_tol > 0, n_restarts >= 1",
                {{"n_states", c.n_states},
                 {"max_iter", c.max_iter},
                 {"rel_tol", c.rel_tol},
                 {"n_restarts", c.n_restarts}});
  }
}

inline void validate(const HmmModel& m) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::ValidationError, "invalid model: " + what);
  };
  const auto k = static_cast<std::size_t>(m.n_states);
  if (m.n_states < 1) fail("n_states < 1");
  auto check_dist = [&](const std::vector<double>& p, const char* what) {
    if (p.size() != k) fail(std::string(what) + " has wrong length");
    double s = 0;
    for (double x : p) {
      if (!(x >= 0.0 && x <= 1.0)) fail(std::string(what) + " entry outside [0,1]");
      s += x;
    }
    if (std::abs(s - 1.0) > kNormTolerance) fail(std::string(what) + " does not sum to 1");
  };
  check_dist(m.initial, "initial");
  if (m.transition.size() != k) fail("transition has wrong shape");
  for (const auto& row : m.transition) check_dist(row, "transition row");
  if (m.emission.size() != m.variables.size()) fail("emission/variables mismatch");
  for (const auto& row : m.emission) {
    if (row.size() != k) fail("emission row has wrong length");
    for (double b : row) {
      if (!(b >= kEmissionFloor && b <= 1.0 - kEmissionFloor)) {
        fail("emission probability outside [eps, 1-eps]");
      }
    }
  }
}

// Sum over observed model variables of log P(value | k). Variables the visit
// does not carry, or carries as missing, contribute nothing.
inline double emission_loglik(const HmmModel& m, const Visit& visit, int k) {
  if (k < 0 || k >= m.n_states) {
    throw Error(ErrorCode::StateOutOfRange, "state index out of range",
                {{"state", k}, {"n_states", m.n_states}});
  }
  double ll = 0.0;
  for (std::size_t v = 0; v < m.variables.size(); ++v) {
    auto it = visit.observations.find(m.variables[v]);
    if (it == visit.observations.end() || it->second == Obs::Missing) continue;
    const double b = m.emission[v][static_cast<std::size_t>(k)];
    ll += it->second == Obs::One ? std::log(b) : std::log(1.0 - b);
  }
  return ll;
}

namespace detail {

// Observations of one subject laid out [T][V] in model-variable order.
struct Encoded {
  std::size_t T = 0;
  std::size_t V = 0;
  std::vector<std::int8_t> obs;
  std::int8_t at(std::size_t t, std::size_t v) const { return obs[t * V + v]; }
};

inline Encoded encode(const Subject& s, const std::vector<std::string>& vars) {
  Encoded e;
  e.T = s.visits.size();
  e.V = vars.size();
  e.obs.assign(e.T * e.V, -1);
  for (std::size_t t = 0; t < e.T; ++t) {
    const auto& o = s.visits[t].observations;
    for (std::size_t v = 0; v < e.V; ++v) {
      auto it = o.find(vars[v]);
      if (it != o.end()) e.obs[t * e.V + v] = static_cast<std::int8_t>(it->second);
    }
  }
  return e;
}

// Log tables derived once per model.
struct Tables {
  std::size_t K = 0;
  std::size_t V = 0;
  const HmmModel* model = nullptr;
  std::vector<double> log_b;    // [V][K]
  std::vector<double> log_1mb;  // [V][K]

  explicit Tables(const HmmModel& m)
      : K(static_cast<std::size_t>(m.n_states)), V(m.variables.size()), model(&m) {
    log_b.resize(V * K);
    log_1mb.resize(V * K);
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t k = 0; k < K; ++k) {
        log_b[v * K + k] = std::log(m.emission[v][k]);
        log_1mb[v * K + k] = std::log(1.0 - m.emission[v][k]);
      }
    }
  }

  // [T][K] log emission table
  std::vector<double> emissions(const Encoded& e) const {
    std::vector<double> out(e.T * K, 0.0);
    for (std::size_t t = 0; t < e.T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        double ll = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
          const auto x = e.at(t, v);
          if (x < 0) continue;
          ll += x ? log_b[v * K + k] : log_1mb[v * K + k];
        }
        out[t * K + k] = ll;
      }
    }
    return out;
  }
};

// Expected sufficient statistics for one or more subjects.
struct Stats {
  std::size_t K = 0;
  std::size_t V = 0;
  double log_likelihood = 0.0;
  std::vector<double> initial;    // [K]
  std::vector<double> trans;      // [K][K]
  std::vector<double> occupancy;  // [K]
  std::vector<double> b_num;      // [V][K]
  std::vector<double> b_den;      // [V][K]

  Stats() = default;
  Stats(std::size_t k, std::size_t v)
      : K(k), V(v), initial(k, 0.0), trans(k * k, 0.0), occupancy(k, 0.0),
        b_num(v * k, 0.0), b_den(v * k, 0.0) {}

  void add(const Stats& o) {
    log_likelihood += o.log_likelihood;
    for (std::size_t i = 0; i < initial.size(); ++i) initial[i] += o.initial[i];
    for (std::size_t i = 0; i < trans.size(); ++i) trans[i] += o.trans[i];
    for (std::size_t i = 0; i < occupancy.size(); ++i) occupancy[i] += o.occupancy[i];
    for (std::size_t i = 0; i < b_num.size(); ++i) b_num[i] += o.b_num[i];
    for (std::size_t i = 0; i < b_den.size(); ++i) b_den[i] += o.b_den[i];
  }
};

// Scaled forward-backward. Each step's emissions are shifted by their max
// log value before exponentiation; the shift and the normaliser are added
// back into the log-likelihood. Fills posteriors ([T][K]) and, when `stats`
// is non-null, accumulates expected counts.
inline double forward_backward(const Tables& tab, const Encoded& e,
                               std::vector<double>& gamma, Stats* stats) {
  const std::size_t K = tab.K;
  const std::size_t T = e.T;
  const HmmModel& m = *tab.model;
  const auto log_e = tab.emissions(e);

  gamma.clear();
  if (T == 0) return 0.0;

  std::vector<double> scaled(T * K), shift(T);
  for (std::size_t t = 0; t < T; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, log_e[t * K + k]);
    for (std::size_t k = 0; k < K; ++k) scaled[t * K + k] = std::exp(log_e[t * K + k] - mx);
    shift[t] = mx;
  }

  std::vector<double> alpha(T * K), beta(T * K), c(T);
  double ll = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double norm = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      double a;
      if (t == 0) {
        a = m.initial[j];
      } else {
        a = 0.0;
        for (std::size_t i = 0; i < K; ++i) a += alpha[(t - 1) * K + i] * m.transition[i][j];
      }
      a *= scaled[t * K + j];
      alpha[t * K + j] = a;
      norm += a;
    }
    c[t] = norm;
    for (std::size_t j = 0; j < K; ++j) alpha[t * K + j] /= norm;
    ll += std::log(norm) + shift[t];
  }

  for (std::size_t k = 0; k < K; ++k) beta[(T - 1) * K + k] = 1.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t i = 0; i < K; ++i) {
      double b = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        b += m.transition[i][j] * scaled[(t + 1) * K + j] * beta[(t + 1) * K + j];
      }
      beta[t * K + i] = b / c[t + 1];
    }
  }

  gamma.assign(T * K, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      gamma[t * K + k] = alpha[t * K + k] * beta[t * K + k];
      s += gamma[t * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) gamma[t * K + k] /= s;
  }

  if (stats) {
    stats->log_likelihood += ll;
    for (std::size_t k = 0; k < K; ++k) stats->initial[k] += gamma[k];
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double g = gamma[t * K + k];
        stats->occupancy[k] += g;
        for (std::size_t v = 0; v < e.V; ++v) {
          const auto x = e.at(t, v);
          if (x < 0) continue;
          stats->b_den[v * K + k] += g;
          if (x) stats->b_num[v * K + k] += g;
        }
      }
    }
    for (std::size_t t = 0; t + 1 < T; ++t) {
      for (std::size_t i = 0; i < K; ++i) {
        const double a = alpha[t * K + i] / c[t + 1];
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < K; ++j) {
          stats->trans[i * K + j] +=
              a * m.transition[i][j] * scaled[(t + 1) * K + j] * beta[(t + 1) * K + j];
        }
      }
    }
  }
  return ll;
}

inline std::vector<int> viterbi(const Tables& tab, const Encoded& e) {
  const std::size_t K = tab.K;
  const std::size_t T = e.T;
  const HmmModel& m = *tab.model;
  if (T == 0) return {};
  const auto log_e = tab.emissions(e);
  auto safe_log = [](double p) {
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  };
  std::vector<double> log_a(K * K);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) log_a[i * K + j] = safe_log(m.transition[i][j]);

  std::vector<double> delta(T * K);
  std::vector<int> back(T * K, 0);
  for (std::size_t k = 0; k < K; ++k) delta[k] = safe_log(m.initial[k]) + log_e[k];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      std::size_t best = 0;
      double best_score = delta[(t - 1) * K] + log_a[j];
      for (std::size_t i = 1; i < K; ++i) {
        const double s = delta[(t - 1) * K + i] + log_a[i * K + j];
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      delta[t * K + j] = best_score + log_e[t * K + j];
      back[t * K + j] = static_cast<int>(best);
    }
  }
  std::vector<int> path(T);
  path[T - 1] = argmax(std::span<const double>(delta).subspan((T - 1) * K, K));
  for (std::size_t t = T - 1; t > 0; --t) {
    path[t - 1] = back[t * K + static_cast<std::size_t>(path[t])];
  }
  return path;
}

inline std::vector<std::vector<double>> unflatten(const std::vector<double>& flat,
                                                  std::size_t K) {
  std::vector<std::vector<double>> out(flat.size() / K);
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].assign(flat.begin() + static_cast<std::ptrdiff_t>(t * K),
                  flat.begin() + static_cast<std::ptrdiff_t>((t + 1) * K));
  }
  return out;
}

inline unsigned thread_count(unsigned requested, std::size_t work) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, 16);
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(work, 1)));
}

// Runs fn(i) for i in [0, n). Work is claimed dynamically; callers write to
// slot i only, so results do not depend on the schedule.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

inline void check_variables(const HmmModel& m, const Dataset& d) {
  for (const auto& v : m.variables) {
    if (!d.is_model_variable(v)) {
      throw Error(ErrorCode::UnknownVariable,
                  "model variable '" + v + "' is not a dataset model variable",
                  {{"variable", v}});
    }
  }
  for (const auto& v : d.model_variables) {
    if (!m.variable_index(v)) {
      throw Error(ErrorCode::UnknownVariable,
                  "dataset model variable '" + v + "' is absent from the model",
                  {{"variable", v}});
    }
  }
}

}  // namespace detail

// Posteriors over states per visit (time index = visit order) and the
// subject's total log-likelihood.
inline Posterior forward_backward(const HmmModel& m, const Subject& s) {
  detail::Tables tab(m);
  auto enc = detail::encode(s, m.variables);
  std::vector<double> gamma;
  Posterior out;
  out.log_likelihood = detail::forward_backward(tab, enc, gamma, nullptr);
  out.posteriors = detail::unflatten(gamma, tab.K);
  return out;
}

inline std::vector<int> viterbi(const HmmModel& m, const Subject& s) {
  detail::Tables tab(m);
  return detail::viterbi(tab, detail::encode(s, m.variables));
}

// Draw one restart's starting point.
inline HmmModel random_model(int n_states, const std::vector<std::string>& vars,
                             Rng& rng) {
  const auto K = static_cast<std::size_t>(n_states);
  HmmModel m;
  m.n_states = n_states;
  m.variables = vars;
  m.initial.assign(K, 0.0);
  rng.dirichlet1(m.initial);
  m.transition.assign(K, std::vector<double>(K, 0.0));
  for (auto& row : m.transition) rng.dirichlet1(row);
  m.emission.assign(vars.size(), std::vector<double>(K, 0.0));
  for (auto& row : m.emission)
    for (double& b : row) b = rng.uniform(0.2, 0.8);
  return m;
}

namespace detail {

struct PreparedData {
  std::vector<Encoded> subjects;
  std::size_t V = 0;
};

inline Stats e_step(const HmmModel& m, const PreparedData& data, unsigned threads) {
  Tables tab(m);
  const std::size_t K = tab.K;
  std::vector<Stats> per_subject(data.subjects.size());
  parallel_for(data.subjects.size(), threads, [&](std::size_t i) {
    Stats s(K, data.V);
    std::vector<double> gamma;
    forward_backward(tab, data.subjects[i], gamma, &s);
    per_subject[i] = std::move(s);
  });
  Stats total(K, data.V);
  for (const auto& s : per_subject) total.add(s);  // fixed subject order
  return total;
}

inline void m_step(HmmModel& m, const Stats& s, std::size_t n_subjects) {
  const std::size_t K = s.K;
  for (std::size_t k = 0; k < K; ++k) {
    m.initial[k] = s.initial[k] / static_cast<double>(n_subjects);
  }
  for (std::size_t i = 0; i < K; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < K; ++j) row += s.trans[i * K + j];
    if (row <= 0.0) continue;  // never left; keep previous row
    for (std::size_t j = 0; j < K; ++j) m.transition[i][j] = s.trans[i * K + j] / row;
  }
  for (std::size_t v = 0; v < s.V; ++v) {
    for (std::size_t k = 0; k < K; ++k) {
      const double den = s.b_den[v * K + k];
      if (den <= 0.0) continue;  // never observed in this state
      m.emission[v][k] = std::clamp(s.b_num[v * K + k] / den, kEmissionFloor,
                                    1.0 - kEmissionFloor);
    }
  }
}

inline std::optional<std::size_t> empty_state(const Stats& s) {
  for (std::size_t k = 0; k < s.K; ++k) {
    if (s.occupancy[k] < std::numeric_limits<double>::min()) return k;
  }
  return std::nullopt;
}

}  // namespace detail

// Baum-Welch with multiple seeded restarts; keeps the restart with the
// highest final log-likelihood (earliest restart on ties).
inline TrainReport train_with_report(const Dataset& d, const TrainConfig& cfg) {
  validate(cfg);
  if (d.subjects.empty()) {
    throw Error(ErrorCode::ValidationError, "cannot train on an empty dataset");
  }
  detail::PreparedData data;
  data.V = d.model_variables.size();
  data.subjects.reserve(d.subjects.size());
  for (const auto& [_, s] : d.subjects) data.subjects.push_back(detail::encode(s, d.model_variables));
  const unsigned threads = detail::thread_count(cfg.n_threads, data.subjects.size());
  const std::size_t n_subjects = data.subjects.size();

  TrainReport report;
  std::optional<HmmModel> best;
  for (int r = 0; r < cfg.n_restarts; ++r) {
    Rng rng(splitmix64(cfg.seed) ^ splitmix64(0x5eedull + static_cast<std::uint64_t>(r)));
    HmmModel m;
    std::vector<double> trace;
    bool done = false;
    for (int attempt = 0; attempt < 2 && !done; ++attempt) {
      m = random_model(cfg.n_states, d.model_variables, rng);
      trace.clear();
      auto stats = detail::e_step(m, data, threads);
      int iters = 0;
      std::optional<std::size_t> empty = detail::empty_state(stats);
      trace.push_back(stats.log_likelihood);
      while (!empty && iters < cfg.max_iter) {
        const double prev = stats.log_likelihood;
        detail::m_step(m, stats, n_subjects);
        ++iters;
        stats = detail::e_step(m, data, threads);
        trace.push_back(stats.log_likelihood);
        empty = detail::empty_state(stats);
        const double rel = std::abs(stats.log_likelihood - prev) / (std::abs(prev) + 1.0);
        if (rel < cfg.rel_tol) break;
      }
      if (empty) {
        if (attempt == 1) {
          throw Error(ErrorCode::DegenerateData,
                      "state " + std::to_string(*empty) +
                          " has zero expected occupancy",
                      {{"restart", r}, {"state", *empty}});
        }
        continue;
      }
      m.log_likelihood = stats.log_likelihood;
      m.n_iterations_run = iters;
      done = true;
    }
    report.traces.push_back(trace);
    if (!best || m.log_likelihood > best->log_likelihood) {
      best = std::move(m);
      report.best_restart = static_cast<std::size_t>(r);
    }
  }
  report.model = std::move(*best);
  report.model.seed = cfg.seed;
  report.model.trained_on = dataset_id(d);
  return report;
}

inline HmmModel train(const Dataset& d, const TrainConfig& cfg) {
  return train_with_report(d, cfg).model;
}

// --- JSON ---------------------------------------------------------------

inline nlohmann::ordered_json to_json(const HmmModel& m) {
  nlohmann::ordered_json j;
  j["n_states"] = m.n_states;
  j["initial"] = m.initial;
  j["transition"] = m.transition;
  auto em = nlohmann::ordered_json::object();
  for (std::size_t v = 0; v < m.variables.size(); ++v) em[m.variables[v]] = m.emission[v];
  j["emission"] = std::move(em);
  j["seed"] = m.seed;
  j["log_likelihood"] = m.log_likelihood;
  j["n_iterations_run"] = m.n_iterations_run;
  j["trained_on"] = m.trained_on;
  return j;
}

inline HmmModel model_from_json(const nlohmann::ordered_json& j) {
  HmmModel m;
  try {
    m.n_states = j.at("n_states").get<int>();
    m.initial = j.at("initial").get<std::vector<double>>();
    m.transition = j.at("transition").get<std::vector<std::vector<double>>>();
    for (const auto& [name, row] : j.at("emission").items()) {
      m.variables.push_back(name);
      m.emission.push_back(row.get<std::vector<double>>());
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.log_likelihood = j.at("log_likelihood").get<double>();
    m.n_iterations_run = j.at("n_iterations_run").get<int>();
    m.trained_on = j.at("trained_on").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("bad model document: ") + e.what());
  }
  validate(m);
  return m;
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// Content-derived identifier of a trained model.
inline std::string model_id(const HmmModel& m) {
  return "m-" + util::hex64(util::fnv1a64(to_json(m).dump()));
}

// Per subject: posterior argmax states, posteriors, Viterbi path.
inline DecodingSet decode(const HmmModel& m, const Dataset& d, unsigned n_threads = 0) {
  detail::check_variables(m, d);
  detail::Tables tab(m);
  std::vector<const Subject*> subjects;
  for (const auto& [_, s] : d.subjects) subjects.push_back(&s);
  std::vector<Decoding> out(subjects.size());
  detail::parallel_for(subjects.size(), detail::thread_count(n_threads, subjects.size()),
                       [&](std::size_t i) {
                         const Subject& s = *subjects[i];
                         auto enc = detail::encode(s, m.variables);
                         std::vector<double> gamma;
                         Decoding dec;
                         dec.log_likelihood = detail::forward_backward(tab, enc, gamma, nullptr);
                         dec.posteriors = detail::unflatten(gamma, tab.K);
                         for (const auto& p : dec.posteriors) dec.states.push_back(argmax(p));
                         dec.viterbi_path = detail::viterbi(tab, enc);
                         for (const auto& v : s.visits) dec.ages.push_back(v.age_months);
                         out[i] = std::move(dec);
                       });
  DecodingSet set;
  set.model_id = model_id(m);
  set.dataset_id = dataset_id(d);
  set.n_states = m.n_states;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    set.subjects.emplace(subjects[i]->subject_id, std::move(out[i]));
  }
  return set;
}

inline nlohmann::ordered_json to_json(const DecodingSet& s) {
  nlohmann::ordered_json j;
  j["model_id"] = s.model_id;
  j["dataset_id"] = s.dataset_id;
  j["n_states"] = s.n_states;
  auto subjects = nlohmann::ordered_json::object();
  for (const auto& [id, d] : s.subjects) {
    nlohmann::ordered_json dj;
    dj["ages"] = d.ages;
    dj["states"] = d.states;
    dj["posteriors"] = d.posteriors;
    dj["viterbi_path"] = d.viterbi_path;
    dj["log_likelihood"] = d.log_likelihood;
    subjects[id] = std::move(dj);
  }
  j["subjects"] = std::move(subjects);
  return j;
}

inline DecodingSet decoding_from_json(const nlohmann::ordered_json& j) {
  DecodingSet s;
  try {
    s.model_id = j.at("model_id").get<std::string>();
    s.dataset_id = j.at("dataset_id").get<std::string>();
    s.n_states = j.at("n_states").get<int>();
    for (const auto& [id, dj] : j.at("subjects").items()) {
      Decoding d;
      d.ages = dj.at("ages").get<std::vector<double>>();
      d.states = dj.at("states").get<std::vector<int>>();
      d.posteriors = dj.at("posteriors").get<std::vector<std::vector<double>>>();
      d.viterbi_path = dj.at("viterbi_path").get<std::vector<int>>();
      d.log_likelihood = dj.at("log_likelihood").get<double>();
      if (d.states.size() != d.ages.size() || d.posteriors.size() != d.ages.size() ||
          d.viterbi_path.size() != d.ages.size()) {
        throw Error(ErrorCode::ValidationError,
                    "decoding for '" + id + "' has inconsistent lengths");
      }
      s.subjects.emplace(id, std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("bad decoding document: ") + e.what());
  }
  return s;
}

// --- sampling -------------------------------------------------------------

struct SampledDataset {
  Dataset dataset;
  std::map<std::string, std::vector<int>> states;
};

// Ancestral sampling; visit t of every subject is at age 3t months.
inline SampledDataset sample_with_states(const HmmModel& m, std::size_t n_subjects,
                                         std::size_t n_visits, std::uint64_t seed) {
  validate(m);
  if (n_visits == 0) {
    throw Error(ErrorCode::InvalidConfig, "sampled subjects need at least one visit");
  }
  Rng rng(seed);
  SampledDataset out;
  out.dataset.model_variables = m.variables;
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n_subjects).size());
  for (std::size_t i = 0; i < n_subjects; ++i) {
    std::string id = std::to_string(i);
    id = "s" + std::string(width - id.size(), '0') + id;
    Subject s;
    s.subject_id = id;
    std::vector<int> path;
    std::size_t k = rng.categorical(m.initial);
    for (std::size_t t = 0; t < n_visits; ++t) {
      if (t > 0) k = rng.categorical(m.transition[k]);
      path.push_back(static_cast<int>(k));
      Visit v;
      v.subject_id = id;
      v.age_months = 3.0 * static_cast<double>(t);
      for (std::size_t x = 0; x < m.variables.size(); ++x) {
        v.observations.emplace(m.variables[x],
                               rng.bernoulli(m.emission[x][k]) ? Obs::One : Obs::Zero);
      }
      s.visits.push_back(std::move(v));
    }
    out.states.emplace(id, std::move(path));
    out.dataset.subjects.emplace(id, std::move(s));
  }
  return out;
}

inline Dataset sample(const HmmModel& m, std::size_t n_subjects, std::size_t n_visits,
                      std::uint64_t seed) {
  return sample_with_states(m, n_subjects, n_visits, seed).dataset;
}

}  // namespace dpm
