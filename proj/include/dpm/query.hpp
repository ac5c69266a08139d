#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpm/error.hpp"
#include "dpm/hmm.hpp"
#include "dpm/util.hpp"

// State-sequence queries.
//
//   query  := node (edge node)*
//   node   := "S" INT [ "{" attr ("," attr)* "}" ]
//   attr   := "initial" | "final" | "min_age=" NUM | "max_age=" NUM
//           | "min_visits=" INT
//   edge   := "->"   next run directly follows
//           | "~>"   next run comes anywhere later
//
// Queries are matched against run-length collapsed state sequences, so
// "S3 -> S4" means the subject left state 3 straight into state 4, however
// many visits each stay lasted. Age bounds test the age at which the run was
// entered and are inclusive.

namespace dpm {

struct NodeAttrs {
  bool initial = false;
  bool final = false;
  std::optional<double> min_age;
  std::optional<double> max_age;
  std::optional<int> min_visits;

  bool operator==(const NodeAttrs&) const = default;
};

struct QueryNode {
  int state = 0;
  NodeAttrs attrs;

  bool operator==(const QueryNode&) const = default;
};

enum class EdgeKind { Direct, Eventual };

struct StateQuery {
  std::vector<QueryNode> nodes;
  std::vector<EdgeKind> edges;  // edges[i] joins nodes[i] and nodes[i + 1]

  bool operator==(const StateQuery&) const = default;
};

struct Run {
  int state = 0;
  double first_age = 0.0;
  double last_age = 0.0;
  int n_visits = 0;

  bool operator==(const Run&) const = default;
};

namespace detail {

class QueryParser {
 public:
  explicit QueryParser(std::string_view text) : text_(text) {}

  StateQuery parse() {
    StateQuery q;
    q.nodes.push_back(node());
    for (;;) {
      skip_ws();
      if (pos_ == text_.size()) break;
      if (starts_with("->")) {
        pos_ += 2;
        q.edges.push_back(EdgeKind::Direct);
      } else if (starts_with("~>")) {
        pos_ += 2;
        q.edges.push_back(EdgeKind::Eventual);
      } else {
        fail(had_braces_ ? std::vector<std::string>{"->", "~>", "end of input"}
                         : std::vector<std::string>{"{", "->", "~>", "end of input"});
      }
      q.nodes.push_back(node());
    }
    return q;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  bool had_braces_ = false;

  void skip_ws() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' ||
                                   text_[pos_] == '\n' || text_[pos_] == '\r')) {
      ++pos_;
    }
  }

  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  std::string found() const {
    if (pos_ >= text_.size()) return "end of input";
    std::size_t end = pos_;
    while (end < text_.size() && end - pos_ < 8 && text_[end] != ' ') ++end;
    return std::string(text_.substr(pos_, std::max<std::size_t>(end - pos_, 1)));
  }

  [[noreturn]] void fail(const std::vector<std::string>& expected) const {
    std::string msg = "syntax error at offset " + std::to_string(pos_) + ": expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) msg += i + 1 == expected.size() ? " or " : ", ";
      msg += expected[i];
    }
    msg += ", found '" + found() + "'";
    throw Error(ErrorCode::SyntaxError, msg,
                {{"offset", pos_}, {"expected", expected}, {"found", found()}});
  }

  std::string_view take_digits() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  QueryNode node() {
    skip_ws();
    QueryNode n;
    if (pos_ >= text_.size() || text_[pos_] != 'S') fail({"S<state>"});
    const std::size_t start = pos_;
    ++pos_;
    auto digits = take_digits();
    if (digits.empty()) fail({"state number"});
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n.state);
    if (ec != std::errc{}) {
      pos_ = start;
      throw Error(ErrorCode::BadAttrValue, "state number out of range",
                  {{"offset", start}});
    }
    had_braces_ = false;
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '{') {
      had_braces_ = true;
      ++pos_;
      attrs(n.attrs);
    }
    return n;
  }

  void attrs(NodeAttrs& a) {
    std::set<std::string> seen;
    for (;;) {
      skip_ws();
      const std::size_t start = pos_;
      std::size_t end = pos_;
      while (end < text_.size() &&
             (std::islower(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) {
        ++end;
      }
      const std::string name(text_.substr(pos_, end - pos_));
      static const std::vector<std::string> kNames{"initial", "final", "min_age", "max_age",
                                                   "min_visits"};
      if (std::find(kNames.begin(), kNames.end(), name) == kNames.end()) fail(kNames);
      pos_ = end;
      if (!seen.insert(name).second) {
        throw Error(ErrorCode::DuplicateAttr,
                    "attribute '" + name + "' given twice at offset " + std::to_string(start),
                    {{"offset", start}, {"attr", name}});
      }
      if (name == "initial") {
        a.initial = true;
      } else if (name == "final") {
        a.final = true;
      } else {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != '=') fail({"="});
        ++pos_;
        skip_ws();
        const std::size_t value_at = pos_;
        auto int_part = take_digits();
        if (int_part.empty()) fail({"number"});
        bool fractional = false;
        if (pos_ < text_.size() && text_[pos_] == '.') {
          ++pos_;
          if (take_digits().empty()) fail({"digit"});
          fractional = true;
        }
        const auto literal = text_.substr(value_at, pos_ - value_at);
        auto bad = [&](const std::string& why) {
          throw Error(ErrorCode::BadAttrValue,
                      "bad value for '" + name + "' at offset " + std::to_string(value_at) +
                          ": " + why,
                      {{"offset", value_at}, {"attr", name}, {"value", std::string(literal)}});
        };
        if (name == "min_visits") {
          if (fractional) bad("expected an integer");
          int v = 0;
          auto [p, ec] = std::from_chars(literal.data(), literal.data() + literal.size(), v);
          if (ec != std::errc{}) bad("out of range");
          a.min_visits = v;
        } else {
          double v = 0;
          if (!util::parse_double(literal, v)) bad("not a number");
          (name == "min_age" ? a.min_age : a.max_age) = v;
          if (a.min_age && a.max_age && *a.min_age > *a.max_age) bad("min_age exceeds max_age");
        }
      }
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (pos_ < text_.size() && text_[pos_] == '}') {
        ++pos_;
        return;
      }
      fail({",", "}"});
    }
  }
};

}  // namespace detail

inline StateQuery parse_query(std::string_view text) {
  return detail::QueryParser(text).parse();
}

// Canonical text form; parse_query(render_query(q)) == q.
inline std::string render_query(const StateQuery& q) {
  std::string out;
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    if (i) out += q.edges[i - 1] == EdgeKind::Direct ? " -> " : " ~> ";
    const auto& n = q.nodes[i];
    out += "S" + std::to_string(n.state);
    std::vector<std::string> attrs;
    if (n.attrs.initial) attrs.emplace_back("initial");
    if (n.attrs.final) attrs.emplace_back("final");
    if (n.attrs.min_age) attrs.push_back("min_age=" + util::format_double(*n.attrs.min_age));
    if (n.attrs.max_age) attrs.push_back("max_age=" + util::format_double(*n.attrs.max_age));
    if (n.attrs.min_visits) attrs.push_back("min_visits=" + std::to_string(*n.attrs.min_visits));
    if (!attrs.empty()) {
      out += "{";
      for (std::size_t a = 0; a < attrs.size(); ++a) {
        if (a) out += ",";
        out += attrs[a];
      }
      out += "}";
    }
  }
  return out;
}

inline std::vector<Run> collapse_runs(std::span<const int> states, std::span<const double> ages) {
  if (states.size() != ages.size()) {
    throw Error(ErrorCode::ValidationError, "states and ages differ in length");
  }
  std::vector<Run> runs;
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (!runs.empty() && runs.back().state == states[t]) {
      runs.back().last_age = ages[t];
      ++runs.back().n_visits;
    } else {
      runs.push_back({states[t], ages[t], ages[t], 1});
    }
  }
  return runs;
}

namespace detail {

inline bool node_accepts(const QueryNode& n, const std::vector<Run>& runs, std::size_t r) {
  const Run& run = runs[r];
  if (run.state != n.state) return false;
  if (n.attrs.initial && r != 0) return false;
  if (n.attrs.final && r + 1 != runs.size()) return false;
  if (n.attrs.min_age && run.first_age < *n.attrs.min_age) return false;
  if (n.attrs.max_age && run.first_age > *n.attrs.max_age) return false;
  if (n.attrs.min_visits && run.n_visits < *n.attrs.min_visits) return false;
  return true;
}

inline bool match_from(const StateQuery& q, const std::vector<Run>& runs, std::size_t node,
                       std::size_t prev) {
  if (node == q.nodes.size()) return true;
  const std::size_t first = node == 0 ? 0 : prev + 1;
  const std::size_t last =
      node > 0 && q.edges[node - 1] == EdgeKind::Direct ? std::min(prev + 2, runs.size())
                                                        : runs.size();
  for (std::size_t r = first; r < last; ++r) {
    if (node_accepts(q.nodes[node], runs, r) && match_from(q, runs, node + 1, r)) return true;
  }
  return false;
}

}  // namespace detail

inline void check_states(const StateQuery& q, int n_states) {
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    if (q.nodes[i].state >= n_states) {
      throw Error(ErrorCode::StateOutOfRange,
                  "query references state " + std::to_string(q.nodes[i].state) +
                      " but the model has " + std::to_string(n_states),
                  {{"state", q.nodes[i].state}, {"n_states", n_states}, {"node", i}});
    }
  }
}

// True iff some increasing choice of runs satisfies every node and edge.
inline bool match_subject(const StateQuery& q, const std::vector<Run>& runs, int n_states) {
  check_states(q, n_states);
  if (q.nodes.empty()) return false;
  return detail::match_from(q, runs, 0, 0);
}

inline std::set<std::string> evaluate(const StateQuery& q, const DecodingSet& decodings) {
  check_states(q, decodings.n_states);
  std::set<std::string> out;
  for (const auto& [id, dec] : decodings.subjects) {
    if (match_subject(q, collapse_runs(dec.states, dec.ages), decodings.n_states)) {
      out.insert(id);
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const StateQuery& q) {
  nlohmann::ordered_json j;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : q.nodes) {
    nlohmann::ordered_json nj;
    nj["state"] = n.state;
    auto attrs = nlohmann::ordered_json::object();
    if (n.attrs.initial) attrs["initial"] = true;
    if (n.attrs.final) attrs["final"] = true;
    if (n.attrs.min_age) attrs["min_age"] = *n.attrs.min_age;
    if (n.attrs.max_age) attrs["max_age"] = *n.attrs.max_age;
    if (n.attrs.min_visits) attrs["min_visits"] = *n.attrs.min_visits;
    nj["attrs"] = std::move(attrs);
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = std::move(nodes);
  auto edges = nlohmann::ordered_json::array();
  for (auto e : q.edges) edges.push_back(e == EdgeKind::Direct ? "direct" : "eventual");
  j["edges"] = std::move(edges);
  return j;
}

}  // namespace dpm
