#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpm/hmm.hpp"
#include "dpm/ingest.hpp"
#include "dpm/rng.hpp"

namespace fixtures {

// The 3-state / 3-variable generator used for EM and recovery checks.
inline dpm::HmmModel three_state_generator() {
  dpm::HmmModel m;
  m.n_states = 3;
  m.initial = {0.6, 0.3, 0.1};
  m.transition = {{0.80, 0.15, 0.05},
                  {0.05, 0.80, 0.15},
                  {0.05, 0.10, 0.85}};
  m.variables = {"IAA", "IA2A", "GADA"};
  m.emission = {{0.10, 0.90, 0.90},
                {0.10, 0.10, 0.85},
                {0.05, 0.20, 0.80}};
  return m;
}

inline dpm::HmmModel random_model(int K, std::size_t V, dpm::Rng& rng) {
  dpm::HmmModel m;
  m.n_states = K;
  m.initial.assign(static_cast<std::size_t>(K), 0.0);
  rng.dirichlet1(m.initial);
  m.transition.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(K)));
  for (auto& row : m.transition) rng.dirichlet1(row);
  for (std::size_t v = 0; v < V; ++v) {
    m.variables.push_back("v" + std::to_string(v));
    std::vector<double> row(static_cast<std::size_t>(K));
    for (double& b : row) b = rng.uniform(0.05, 0.95);
    m.emission.push_back(row);
  }
  return m;
}

inline dpm::Subject random_subject(const dpm::HmmModel& m, std::size_t T, dpm::Rng& rng,
                                   double p_missing = 0.2) {
  dpm::Subject s;
  s.subject_id = "r";
  for (std::size_t t = 0; t < T; ++t) {
    dpm::Visit v;
    v.subject_id = s.subject_id;
    v.age_months = 3.0 * static_cast<double>(t);
    for (const auto& name : m.variables) {
      dpm::Obs o = rng.bernoulli(p_missing) ? dpm::Obs::Missing
                   : rng.bernoulli(0.5)     ? dpm::Obs::One
                                            : dpm::Obs::Zero;
      v.observations.emplace(name, o);
    }
    s.visits.push_back(std::move(v));
  }
  return s;
}

// Dataset built straight from (id, [(age, {var: obs})]) with the given
// variable lists.
struct VisitSpec {
  double age;
  std::vector<dpm::Obs> obs;  // model vars then extra vars
  std::vector<bool> outcomes = {};
};

inline dpm::Dataset make_dataset(
    const std::vector<std::string>& model_vars, const std::vector<std::string>& extra_vars,
    const std::vector<std::string>& outcomes,
    const std::vector<std::pair<std::string, std::vector<VisitSpec>>>& subjects) {
  dpm::Dataset d;
  d.model_variables = model_vars;
  d.extra_variables = extra_vars;
  d.outcome_names = outcomes;
  for (const auto& [id, visits] : subjects) {
    dpm::Subject s;
    s.subject_id = id;
    for (const auto& spec : visits) {
      dpm::Visit v;
      v.subject_id = id;
      v.age_months = spec.age;
      std::size_t i = 0;
      for (const auto& name : model_vars) v.observations[name] = spec.obs.at(i++);
      for (const auto& name : extra_vars) v.observations[name] = spec.obs.at(i++);
      for (std::size_t o = 0; o < outcomes.size(); ++o) {
        v.outcomes[outcomes[o]] = o < spec.outcomes.size() && spec.outcomes[o];
      }
      s.visits.push_back(std::move(v));
    }
    d.subjects.emplace(id, std::move(s));
  }
  return d;
}

// Synthetic cohort sampled from the 3-state generator, with one extra
// variable and two outcome flags attached deterministically from the hidden
// states.
inline dpm::Dataset synthetic_cohort(std::size_t n_subjects, std::size_t n_visits,
                                     std::uint64_t seed) {
  auto sampled = dpm::sample_with_states(three_state_generator(), n_subjects, n_visits, seed);
  auto& d = sampled.dataset;
  d.extra_variables = {"HLA_DR3"};
  d.outcome_names = {"seroconversion", "onset"};
  dpm::Rng rng(seed ^ 0xabcdefull);
  for (auto& [id, s] : d.subjects) {
    const auto& states = sampled.states.at(id);
    bool hla = rng.bernoulli(0.4);
    for (std::size_t t = 0; t < s.visits.size(); ++t) {
      auto& v = s.visits[t];
      v.observations["HLA_DR3"] = rng.bernoulli(0.1) ? dpm::Obs::Missing
                                  : hla             ? dpm::Obs::One
                                                    : dpm::Obs::Zero;
      v.outcomes["seroconversion"] = states[t] >= 1;
      v.outcomes["onset"] = states[t] == 2 && t + 1 == s.visits.size();
    }
  }
  return d;
}

}  // namespace fixtures
