#pragma once

// Brute-force reference implementations used only by tests. They share no
// code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "dpm/hmm.hpp"
#include "dpm/query.hpp"

namespace oracle {

struct PathEnumeration {
  double log_likelihood = 0.0;
  std::vector<std::vector<double>> posteriors;  // [T][K]
  std::vector<int> best_path;
  double best_score = -std::numeric_limits<double>::infinity();
};

// log P(visit | k), summed over the model's variables in declaration order.
inline double emission_term(const dpm::HmmModel& m, const dpm::Visit& v, int k) {
  double ll = 0.0;
  for (std::size_t x = 0; x < m.variables.size(); ++x) {
    auto it = v.observations.find(m.variables[x]);
    if (it == v.observations.end() || it->second == dpm::Obs::Missing) continue;
    const double b = m.emission[x][static_cast<std::size_t>(k)];
    ll += it->second == dpm::Obs::One ? std::log(b) : std::log(1.0 - b);
  }
  return ll;
}

inline double log_or_ninf(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

// Among equal-score paths, prefer the one that is smaller when compared from
// the last visit backwards (lowest final state, then lowest predecessor...).
inline bool reverse_lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  for (std::size_t t = a.size(); t-- > 0;) {
    if (a[t] != b[t]) return a[t] < b[t];
  }
  return false;
}

// Enumerates all K^T state paths of a subject.
inline PathEnumeration enumerate_paths(const dpm::HmmModel& m, const dpm::Subject& s) {
  const int K = m.n_states;
  const std::size_t T = s.visits.size();
  std::vector<std::vector<double>> em(T, std::vector<double>(static_cast<std::size_t>(K)));
  for (std::size_t t = 0; t < T; ++t)
    for (int k = 0; k < K; ++k) em[t][static_cast<std::size_t>(k)] = emission_term(m, s.visits[t], k);

  std::size_t n_paths = 1;
  for (std::size_t t = 0; t < T; ++t) n_paths *= static_cast<std::size_t>(K);

  std::vector<double> scores(n_paths);
  std::vector<std::vector<int>> paths(n_paths, std::vector<int>(T));
  PathEnumeration out;
  for (std::size_t p = 0; p < n_paths; ++p) {
    std::size_t code = p;
    auto& path = paths[p];
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = static_cast<int>(code % static_cast<std::size_t>(K));
      code /= static_cast<std::size_t>(K);
    }
    double score = log_or_ninf(m.initial[static_cast<std::size_t>(path[0])]) +
                   em[0][static_cast<std::size_t>(path[0])];
    for (std::size_t t = 1; t < T; ++t) {
      score = score + log_or_ninf(m.transition[static_cast<std::size_t>(path[t - 1])]
                                              [static_cast<std::size_t>(path[t])]);
      score = score + em[t][static_cast<std::size_t>(path[t])];
    }
    scores[p] = score;
    if (out.best_path.empty() || score > out.best_score ||
        (score == out.best_score && reverse_lex_less(path, out.best_path))) {
      out.best_score = score;
      out.best_path = path;
    }
  }

  const double mx = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  out.posteriors.assign(T, std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (std::size_t p = 0; p < n_paths; ++p) {
    const double w = std::exp(scores[p] - mx);
    total += w;
    for (std::size_t t = 0; t < T; ++t) out.posteriors[t][static_cast<std::size_t>(paths[p][t])] += w;
  }
  for (auto& row : out.posteriors)
    for (double& x : row) x /= total;
  out.log_likelihood = mx + std::log(total);
  return out;
}

// Exhaustive subsequence matcher: tries every increasing tuple of run
// indices of the query's length.
inline bool match_by_subsequences(const dpm::StateQuery& q, const std::vector<dpm::Run>& runs) {
  const std::size_t n = q.nodes.size();
  const std::size_t R = runs.size();
  if (n == 0 || n > R) return false;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto node_ok = [&](std::size_t j, std::size_t r) {
    const auto& node = q.nodes[j];
    const auto& run = runs[r];
    if (run.state != node.state) return false;
    if (node.attrs.initial && r != 0) return false;
    if (node.attrs.final && r != R - 1) return false;
    if (node.attrs.min_age && !(run.first_age >= *node.attrs.min_age)) return false;
    if (node.attrs.max_age && !(run.first_age <= *node.attrs.max_age)) return false;
    if (node.attrs.min_visits && !(run.n_visits >= *node.attrs.min_visits)) return false;
    return true;
  };
  for (;;) {
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
      ok = node_ok(j, idx[j]);
      if (ok && j > 0 && q.edges[j - 1] == dpm::EdgeKind::Direct) ok = idx[j] == idx[j - 1] + 1;
    }
    if (ok) return true;
    // next combination in lexicographic order
    std::size_t i = n;
    while (i > 0 && idx[i - 1] == R - n + (i - 1)) --i;
    if (i == 0) return false;
    ++idx[i - 1];
    for (std::size_t j = i; j < n; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace oracle
