#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpm/error.hpp"
#include "dpm/hmm.hpp"
#include "dpm/ingest.hpp"

namespace dpm {

using SubjectFilter = std::optional<std::set<std::string>>;

enum class FeatureSource { Model, Empirical };

struct FeatureRow {
  std::string variable;
  FeatureSource source = FeatureSource::Model;
  std::vector<std::optional<double>> values;  // one per state; nullopt = undefined

  bool operator==(const FeatureRow&) const = default;
};

struct FeatureMatrix {
  std::vector<int> states;
  std::vector<FeatureRow> rows;

  bool operator==(const FeatureMatrix&) const = default;
};

struct TransitionSummary {
  std::vector<std::vector<long>> counts;                    // [from][to]
  std::map<std::pair<int, int>, std::vector<double>> transition_ages;  // off-diagonal only

  bool operator==(const TransitionSummary&) const = default;

  long total() const {
    long n = 0;
    for (const auto& row : counts)
      for (long c : row) n += c;
    return n;
  }
};

inline constexpr int kDefaultGridPoints = 512;

struct WaterfallPoint {
  std::string subject_id;
  double age_months = 0.0;
  int state = 0;
  double posterior_max = 0.0;

  bool operator==(const WaterfallPoint&) const = default;
};

struct DensityEstimate {
  std::string outcome;
  std::vector<double> sample_ages;
  double bandwidth = 1.0;
  std::vector<std::pair<double, double>> grid;  // (x, f(x))

  bool operator==(const DensityEstimate&) const = default;
};

namespace detail {

inline const Decoding& decoding_for(const DecodingSet& decodings, const Subject& s) {
  auto it = decodings.subjects.find(s.subject_id);
  if (it == decodings.subjects.end() || it->second.states.size() != s.visits.size()) {
    throw Error(ErrorCode::ValidationError,
                "decoding does not cover subject '" + s.subject_id + "'",
                {{"subject_id", s.subject_id}});
  }
  return it->second;
}

template <typename Fn>
void for_each_member(const Dataset& d, const SubjectFilter& cohort, Fn&& fn) {
  if (!cohort) {
    for (const auto& [_, s] : d.subjects) fn(s);
    return;
  }
  for (const auto& id : *cohort) {
    auto it = d.subjects.find(id);
    if (it != d.subjects.end()) fn(it->second);
  }
}

}  // namespace detail

// Model variables report B[v][.] verbatim; extra variables report, per
// decoded state, the fraction of observed visits with value 1.
inline FeatureMatrix feature_matrix(const HmmModel& m, const DecodingSet& decodings,
                                    const Dataset& d,
                                    const std::vector<std::string>& variables) {
  const auto K = static_cast<std::size_t>(m.n_states);
  FeatureMatrix fm;
  for (int k = 0; k < m.n_states; ++k) fm.states.push_back(k);
  for (const auto& var : variables) {
    FeatureRow row;
    row.variable = var;
    if (auto idx = m.variable_index(var)) {
      row.source = FeatureSource::Model;
      for (double b : m.emission[*idx]) row.values.emplace_back(b);
    } else if (d.is_extra_variable(var)) {
      row.source = FeatureSource::Empirical;
      std::vector<long> ones(K, 0), observed(K, 0);
      for (const auto& [_, s] : d.subjects) {
        const auto& dec = detail::decoding_for(decodings, s);
        for (std::size_t t = 0; t < s.visits.size(); ++t) {
          auto it = s.visits[t].observations.find(var);
          if (it == s.visits[t].observations.end() || it->second == Obs::Missing) continue;
          const auto k = static_cast<std::size_t>(dec.states[t]);
          if (k >= K) {
            throw Error(ErrorCode::StateOutOfRange, "decoded state out of range",
                        {{"state", dec.states[t]}, {"n_states", m.n_states}});
          }
          ++observed[k];
          if (it->second == Obs::One) ++ones[k];
        }
      }
      for (std::size_t k = 0; k < K; ++k) {
        if (observed[k] == 0) {
          row.values.emplace_back(std::nullopt);
        } else {
          row.values.emplace_back(static_cast<double>(ones[k]) /
                                  static_cast<double>(observed[k]));
        }
      }
    } else {
      throw Error(ErrorCode::UnknownVariable,
                  "'" + var + "' is neither a model nor an extra variable",
                  {{"variable", var}});
    }
    fm.rows.push_back(std::move(row));
  }
  return fm;
}

// Consecutive-visit transitions of the decoded states; ages are those of the
// destination visit.
inline TransitionSummary transition_summary(const DecodingSet& decodings, const Dataset& d,
                                            const SubjectFilter& cohort = std::nullopt) {
  const auto K = static_cast<std::size_t>(decodings.n_states);
  TransitionSummary out;
  out.counts.assign(K, std::vector<long>(K, 0));
  detail::for_each_member(d, cohort, [&](const Subject& s) {
    const auto& dec = detail::decoding_for(decodings, s);
    for (std::size_t t = 1; t < s.visits.size(); ++t) {
      const int from = dec.states[t - 1];
      const int to = dec.states[t];
      if (from < 0 || to < 0 || static_cast<std::size_t>(from) >= K ||
          static_cast<std::size_t>(to) >= K) {
        throw Error(ErrorCode::StateOutOfRange, "decoded state out of range");
      }
      ++out.counts[static_cast<std::size_t>(from)][static_cast<std::size_t>(to)];
      if (from != to) out.transition_ages[{from, to}].push_back(s.visits[t].age_months);
    }
  });
  return out;
}

// Share of (from -> to) transitions whose destination age is below the cutoff.
inline std::optional<double> fraction_before(const TransitionSummary& s, double age_cutoff,
                                             int from, int to) {
  auto it = s.transition_ages.find({from, to});
  if (it == s.transition_ages.end() || it->second.empty()) return std::nullopt;
  const auto before = std::count_if(it->second.begin(), it->second.end(),
                                    [&](double a) { return a < age_cutoff; });
  return static_cast<double>(before) / static_cast<double>(it->second.size());
}

inline std::vector<WaterfallPoint> waterfall_points(const DecodingSet& decodings,
                                                    const Dataset& d,
                                                    const SubjectFilter& cohort = std::nullopt) {
  std::vector<WaterfallPoint> out;
  detail::for_each_member(d, cohort, [&](const Subject& s) {
    const auto& dec = detail::decoding_for(decodings, s);
    for (std::size_t t = 0; t < s.visits.size(); ++t) {
      const auto& post = dec.posteriors[t];
      out.push_back({s.subject_id, s.visits[t].age_months, dec.states[t],
                     post.empty() ? 0.0 : *std::max_element(post.begin(), post.end())});
    }
  });
  return out;
}

// Age of each member's first visit flagging `outcome`.
inline std::vector<double> outcome_ages(const Dataset& d, const std::string& outcome,
                                        const SubjectFilter& cohort = std::nullopt) {
  if (std::find(d.outcome_names.begin(), d.outcome_names.end(), outcome) ==
      d.outcome_names.end()) {
    throw Error(ErrorCode::UnknownColumn, "unknown outcome '" + outcome + "'",
                {{"column", outcome}});
  }
  std::vector<double> ages;
  detail::for_each_member(d, cohort, [&](const Subject& s) {
    for (const auto& v : s.visits) {
      auto it = v.outcomes.find(outcome);
      if (it != v.outcomes.end() && it->second) {
        ages.push_back(v.age_months);
        return;
      }
    }
  });
  return ages;
}

// --- kernel density -------------------------------------------------------

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// Silverman's rule 0.9 * min(sd, IQR/1.34) * n^(-1/5). Falls back to 1.0 for
// a single sample or zero spread; a zero IQR alone falls back to sd.
inline double silverman_bandwidth(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) return 1.0;
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) return 1.0;
  auto sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

inline double kde_at(const std::vector<double>& samples, double bandwidth, double x) {
  double f = 0.0;
  for (double xi : samples) f += normal_pdf((x - xi) / bandwidth);
  return f / (static_cast<double>(samples.size()) * bandwidth);
}

inline DensityEstimate kde(const std::vector<double>& samples, int grid_points) {
  if (samples.empty()) {
    throw Error(ErrorCode::EmptySamples, "density needs at least one sample");
  }
  if (grid_points < 2) {
    throw Error(ErrorCode::InvalidConfig, "grid_points must be >= 2",
                {{"grid_points", grid_points}});
  }
  DensityEstimate out;
  out.sample_ages = samples;
  out.bandwidth = silverman_bandwidth(samples);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 4.0 * out.bandwidth;
  const double hi = *hi_it + 4.0 * out.bandwidth;
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  out.grid.reserve(static_cast<std::size_t>(grid_points));
  for (int i = 0; i < grid_points; ++i) {
    const double x = i + 1 == grid_points ? hi : lo + step * i;
    out.grid.emplace_back(x, kde_at(samples, out.bandwidth, x));
  }
  return out;
}

inline double trapezoid(const std::vector<std::pair<double, double>>& grid) {
  double area = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    area += 0.5 * (grid[i].second + grid[i - 1].second) * (grid[i].first - grid[i - 1].first);
  }
  return area;
}

// --- JSON ---------------------------------------------------------------

inline nlohmann::ordered_json to_json(const FeatureMatrix& fm) {
  nlohmann::ordered_json j;
  j["states"] = fm.states;
  auto rows = nlohmann::ordered_json::object();
  auto source = nlohmann::ordered_json::object();
  for (const auto& r : fm.rows) {
    auto values = nlohmann::ordered_json::array();
    for (const auto& v : r.values) values.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
    rows[r.variable] = std::move(values);
    source[r.variable] = r.source == FeatureSource::Model ? "model" : "empirical";
  }
  j["rows"] = std::move(rows);
  j["source"] = std::move(source);
  return j;
}

inline nlohmann::ordered_json to_json(const TransitionSummary& s) {
  nlohmann::ordered_json j;
  j["counts"] = s.counts;
  auto ages = nlohmann::ordered_json::array();
  for (const auto& [key, list] : s.transition_ages) {
    ages.push_back({{"from", key.first}, {"to", key.second}, {"ages", list}});
  }
  j["transition_ages"] = std::move(ages);
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<WaterfallPoint>& points) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& p : points) {
    j.push_back({{"subject_id", p.subject_id},
                 {"age_months", p.age_months},
                 {"state", p.state},
                 {"posterior_max", p.posterior_max}});
  }
  return j;
}

inline nlohmann::ordered_json to_json(const DensityEstimate& e) {
  nlohmann::ordered_json j;
  j["outcome"] = e.outcome;
  j["sample_ages"] = e.sample_ages;
  j["bandwidth"] = e.bandwidth;
  auto grid = nlohmann::ordered_json::array();
  for (const auto& [x, f] : e.grid) grid.push_back({x, f});
  j["grid"] = std::move(grid);
  return j;
}

}  // namespace dpm
