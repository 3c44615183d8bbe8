#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/core/stats.hpp"
#include "neuroloop/optimizer/grid.hpp"

namespace neuroloop::optimizer {

struct TrialReport {
  std::uint64_t trial_id = 0;
  std::size_t unit = 0;
  std::size_t slot = 0;
  std::string client_id;
  double score = 0.0;
  std::string digest;
  std::string status = "ok";  // ok | failed
  ParamMap params;
  friend bool operator==(const TrialReport&, const TrialReport&) = default;
};

struct ClientScore {
  std::size_t slot = 0;
  std::string client_id;
  double score = 0.0;
  friend bool operator==(const ClientScore&, const ClientScore&) = default;
};

struct AggregateScore {
  std::size_t unit = 0;
  std::size_t combo = 0;
  std::size_t replicate = 0;
  ParamMap params;
  std::vector<ClientScore> scores;  // ordered by slot, then client
  double mean = 0.0;
  std::size_t clients = 0;
  bool valid = false;
  friend bool operator==(const AggregateScore&, const AggregateScore&) = default;
};

// Outcome of an aggregate without the client names, which depend on which
// client happened to pick up which slot.
inline auto outcome_key(const AggregateScore& a) {
  std::vector<double> s;
  for (const auto& c : a.scores) s.push_back(c.score);
  return std::tuple{a.unit, a.combo, a.replicate, a.params, s, a.mean, a.clients, a.valid};
}

inline constexpr std::size_t kDefaultQuorum = 4;

/// Mean over distinct clients, valid once at least `quorum` clients have
/// reported. A client reporting twice counts once (its lowest slot); the
/// result does not depend on report order.
inline AggregateScore aggregate(const std::vector<TrialReport>& reports, std::size_t quorum = kDefaultQuorum) {
  std::vector<const TrialReport*> ok;
  for (const auto& r : reports)
    if (r.status == "ok") ok.push_back(&r);
  std::sort(ok.begin(), ok.end(), [](const TrialReport* a, const TrialReport* b) {
    return std::tie(a->slot, a->client_id, a->trial_id, a->score) < std::tie(b->slot, b->client_id, b->trial_id, b->score);
  });
  AggregateScore a;
  std::set<std::string> seen;
  for (const auto* r : ok) {
    if (a.scores.empty() && seen.empty()) {
      a.params = r->params;
      a.unit = r->unit;
    } else if (r->params != a.params) {
      throw ContractError("aggregate over reports with different parameters");
    }
    if (seen.insert(r->client_id).second) a.scores.push_back({r->slot, r->client_id, r->score});
  }
  a.clients = a.scores.size();
  double s = 0.0;
  for (const auto& c : a.scores) s += c.score;
  a.mean = a.clients ? s / static_cast<double>(a.clients) : 0.0;
  a.valid = a.clients > 0 && a.clients >= quorum;
  return a;
}

inline constexpr double kSelectionPercentile = 99.0;

struct Shortlist {
  std::vector<AggregateScore> selected;
  std::vector<double> thresholds;  // one per baseline group
  bool warning = false;            // no valid aggregates
};

/// Stage 1: keep combos whose valid aggregate exceeds the 99th percentile
/// of the random-substrate baseline scores of every group.
inline Shortlist stage1_select(const std::vector<AggregateScore>& aggregates,
                               const std::vector<std::vector<double>>& baseline_groups,
                               double pct = kSelectionPercentile) {
  if (baseline_groups.empty()) throw PreconditionError("stage 1 selection needs baseline groups");
  Shortlist out;
  for (const auto& g : baseline_groups) {
    if (g.empty()) throw PreconditionError("baseline group has no scores");
    out.thresholds.push_back(neuroloop::percentile(g, pct));
  }
  bool any_valid = false;
  for (const auto& a : aggregates) {
    if (!a.valid) continue;
    any_valid = true;
    if (std::all_of(out.thresholds.begin(), out.thresholds.end(), [&](double t) { return a.mean > t; }))
      out.selected.push_back(a);
  }
  if (!any_valid) {
    out.warning = true;
    log::warn("stage 1 selection: no valid aggregates");
  }
  return out;
}

enum class Consistency : std::uint8_t { all, majority, mean };

inline std::string_view to_string(Consistency c) {
  static constexpr std::string_view names[] = {"all", "majority", "mean"};
  return names[static_cast<int>(c)];
}

inline Consistency consistency_from_string(std::string_view s) {
  if (s == "all") return Consistency::all;
  if (s == "majority") return Consistency::majority;
  if (s == "mean") return Consistency::mean;
  throw ConfigError("unknown consistency rule '" + std::string(s) + "'");
}

struct TopSet {
  std::vector<ParamMap> selected;
  double threshold = 0.0;
};

/// Stage 2: combos whose replicate scores consistently exceed the 99th
/// percentile of the culture-baseline scores. Invalid aggregates are ignored.
inline TopSet stage2_select(const std::vector<AggregateScore>& replicated, const std::vector<double>& baseline,
                            Consistency rule = Consistency::all, double pct = kSelectionPercentile) {
  if (baseline.empty()) throw PreconditionError("stage 2 selection needs baseline scores");
  TopSet out;
  out.threshold = neuroloop::percentile(baseline, pct);
  std::map<ParamMap, std::vector<double>> by_params;
  for (const auto& a : replicated)
    if (a.valid) by_params[a.params].push_back(a.mean);
  for (const auto& [params, scores] : by_params) {
    if (scores.empty()) continue;
    const auto above = static_cast<std::size_t>(
        std::count_if(scores.begin(), scores.end(), [&](double s) { return s > out.threshold; }));
    bool keep = false;
    switch (rule) {
      case Consistency::all:
        keep = above == scores.size();
        break;
      case Consistency::majority:
        keep = 2 * above > scores.size();
        break;
      case Consistency::mean:
        keep = neuroloop::mean(scores) > out.threshold;
        break;
    }
    if (keep) out.selected.push_back(params);
  }
  return out;
}

inline void to_json(nlohmann::json& j, const TrialReport& r) {
  j = nlohmann::json{{"trial_id", r.trial_id}, {"unit", r.unit},     {"slot", r.slot},
                     {"client_id", r.client_id}, {"score", r.score}, {"digest", r.digest},
                     {"status", r.status},       {"params", r.params}};
}
inline void from_json(const nlohmann::json& j, TrialReport& r) {
  r.trial_id = j.at("trial_id").get<std::uint64_t>();
  r.unit = j.value("unit", std::size_t{0});
  r.slot = j.value("slot", std::size_t{0});
  r.client_id = j.at("client_id").get<std::string>();
  r.score = j.at("score").get<double>();
  r.digest = j.value("digest", std::string{});
  r.status = j.value("status", std::string{"ok"});
  r.params = j.value("params", ParamMap{});
}

inline void to_json(nlohmann::json& j, const ClientScore& c) {
  j = nlohmann::json{{"slot", c.slot}, {"client_id", c.client_id}, {"score", c.score}};
}
inline void from_json(const nlohmann::json& j, ClientScore& c) {
  c.slot = j.at("slot").get<std::size_t>();
  c.client_id = j.at("client_id").get<std::string>();
  c.score = j.at("score").get<double>();
}

inline void to_json(nlohmann::json& j, const AggregateScore& a) {
  j = nlohmann::json{{"unit", a.unit},     {"combo", a.combo}, {"replicate", a.replicate}, {"params", a.params},
                     {"scores", a.scores}, {"mean", a.mean},   {"clients", a.clients},     {"valid", a.valid}};
}
inline void from_json(const nlohmann::json& j, AggregateScore& a) {
  a.unit = j.at("unit").get<std::size_t>();
  a.combo = j.value("combo", std::size_t{0});
  a.replicate = j.value("replicate", std::size_t{0});
  a.params = j.at("params").get<ParamMap>();
  a.scores = j.at("scores").get<std::vector<ClientScore>>();
  a.mean = j.at("mean").get<double>();
  a.clients = j.at("clients").get<std::size_t>();
  a.valid = j.at("valid").get<bool>();
}

}  // namespace neuroloop::optimizer
