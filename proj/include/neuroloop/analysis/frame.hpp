#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/encode.hpp"
#include "neuroloop/core/error.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/core/stats.hpp"
#include "neuroloop/loop/trial.hpp"
#include "neuroloop/optimizer/select.hpp"

namespace neuroloop::analysis {

struct FrameRow {
  codec::ParamMap params;
  double score = 0.0;
  std::string group;
  std::string stage;
  std::size_t replicate = 0;
  std::string client_id;
};

struct StudyFrame {
  std::vector<FrameRow> rows;

  std::vector<double> scores() const {
    std::vector<double> s;
    s.reserve(rows.size());
    for (const auto& r : rows) s.push_back(r.score);
    return s;
  }

  void append(const StudyFrame& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
};

/// Rows from a study log (one per valid aggregate) or from trial/DQN result
/// files (one per file, taken from the summary line).
inline StudyFrame load_frame(const std::string& path, const std::string& group = "", const std::string& stage = "") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  StudyFrame f;
  std::string line;
  std::size_t lineno = 0;
  std::optional<double> summary_score;
  nlohmann::json trial_config;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      log::warn(path, ":", lineno, ": skipping unparsable line");
      continue;
    }
    const auto type = j.value("type", std::string{});
    if (type == "aggregate") {
      const auto a = j.at("aggregate").get<optimizer::AggregateScore>();
      if (!a.valid) continue;
      if (!std::isfinite(a.mean)) throw DataError(path + ":" + std::to_string(lineno) + ": non-finite score");
      f.rows.push_back({a.params, a.mean, group, stage, a.replicate, ""});
    } else if (type == "config") {
      trial_config = j.at("config");
    } else if (type == "summary") {
      summary_score = j.at("score").get<double>();
    } else if (type == "score") {
      // Plain score records: {"type":"score","score":..,"params":{..}}
      f.rows.push_back({j.value("params", codec::ParamMap{}), j.at("score").get<double>(),
                        j.value("group", group), j.value("stage", stage), j.value("replicate", std::size_t{0}),
                        j.value("client_id", std::string{})});
    }
  }
  if (summary_score) {
    codec::ParamMap params;
    if (trial_config.contains("encoding"))
      params = codec::to_param_map(trial_config.at("encoding").get<codec::EncodingParams>());
    f.rows.push_back({params, *summary_score, group, stage, 0, ""});
  }
  if (f.rows.empty()) throw DataError("'" + path + "' contains no scores");
  return f;
}

struct Marginal {
  std::string parameter;
  std::map<double, std::size_t> counts;  // value -> rows among the top set
  std::map<double, double> fraction;
};

struct MarginalReport {
  double threshold = 0.0;
  std::size_t top_rows = 0;
  std::vector<Marginal> marginals;
};

/// Parameter-value histograms among rows scoring at or above the
/// (100 - pct)th percentile.
inline MarginalReport top_percentile_marginals(const StudyFrame& frame, double pct) {
  if (!(pct > 0.0 && pct <= 100.0)) throw PreconditionError("pct must be in (0, 100]");
  if (frame.rows.empty()) throw PreconditionError("frame is empty");
  MarginalReport out;
  out.threshold = percentile(frame.scores(), 100.0 - pct);
  std::map<std::string, Marginal> by_name;
  for (const auto& r : frame.rows)
    for (const auto& [name, _] : r.params) by_name[name].parameter = name;
  for (const auto& r : frame.rows) {
    if (r.score < out.threshold) continue;
    ++out.top_rows;
    for (const auto& [name, v] : r.params) ++by_name[name].counts[v];
  }
  for (auto& [name, m] : by_name) {
    for (const auto& [v, c] : m.counts) m.fraction[v] = static_cast<double>(c) / static_cast<double>(out.top_rows);
    out.marginals.push_back(std::move(m));
  }
  return out;
}

struct ScoreRow {
  std::string group;
  double mean = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t n = 0;
};

inline constexpr std::size_t kBootstrapResamples = 10000;

/// Group means with percentile-bootstrap 95% intervals. Groups with a single
/// row get no interval.
inline std::vector<ScoreRow> score_table(const StudyFrame& frame, const std::string& grouping = "group",
                                         std::uint64_t seed = 0, std::size_t resamples = kBootstrapResamples) {
  if (frame.rows.empty()) throw PreconditionError("frame is empty");
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : frame.rows) {
    std::string key;
    if (grouping == "group")
      key = r.group;
    else if (grouping == "stage")
      key = r.stage;
    else if (grouping == "client")
      key = r.client_id;
    else if (grouping == "all")
      key = "all";
    else {
      const auto it = r.params.find(grouping);
      if (it == r.params.end()) throw ConfigError("unknown grouping '" + grouping + "'");
      std::ostringstream os;
      os << it->second;
      key = os.str();
    }
    groups[key].push_back(r.score);
  }
  std::vector<ScoreRow> out;
  Rng rng(seed);
  for (const auto& [key, xs] : groups) {
    ScoreRow row;
    row.group = key;
    row.n = xs.size();
    row.mean = mean(xs);
    if (xs.size() > 1) {
      std::vector<double> means(resamples);
      for (auto& m : means) {
        double s = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) s += xs[rng.below(xs.size())];
        m = s / static_cast<double>(xs.size());
      }
      row.ci_low = percentile(means, 2.5);
      row.ci_high = percentile(means, 97.5);
    }
    out.push_back(row);
  }
  return out;
}

struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::optional<double>> cells;  // row-major; empty when undefined
  bool partial = false;
};

/// Episode-mean spike count per channel relative to the channel's
/// calibration baseline, on the electrode grid.
inline Heatmap export_heatmap(const loop::TrialResult& result, std::size_t episode, std::size_t grid_cols = 8) {
  if (episode >= result.episodes.size())
    throw PreconditionError("episode " + std::to_string(episode) + " not in result");
  const auto& ep = result.episodes[episode];
  std::size_t channels = ep.baseline.channels.size();
  for (const auto& s : ep.steps) channels = std::max(channels, s.channel_counts.size());
  if (channels == 0) throw PreconditionError("result has no per-channel counts");
  Heatmap h;
  h.cols = grid_cols;
  h.rows = (channels + grid_cols - 1) / grid_cols;
  h.cells.assign(h.rows * h.cols, std::nullopt);
  std::vector<double> sum(channels, 0.0);
  std::vector<std::size_t> n(channels, 0);
  for (const auto& s : ep.steps) {
    if (s.channel_counts.size() != channels) {
      h.partial = true;
      continue;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      sum[c] += s.channel_counts[c];
      ++n[c];
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (n[c] == 0 || c >= ep.baseline.channels.size()) {
      h.partial = true;
      continue;
    }
    const double m = sum[c] / static_cast<double>(n[c]);
    const double base = ep.baseline.channels[c];
    if (m == 0.0)
      h.cells[c] = 0.0;
    else if (base > 0.0)
      h.cells[c] = m / base;
    else
      h.partial = true;
  }
  if (h.partial) log::warn("heatmap for episode ", episode, " is partial: some channels lack counts or baseline");
  return h;
}

inline void write_heatmap_csv(std::ostream& os, const Heatmap& h) {
  os << std::setprecision(10);
  for (std::size_t r = 0; r < h.rows; ++r) {
    for (std::size_t c = 0; c < h.cols; ++c) {
      if (c) os << ',';
      if (const auto& v = h.cells[r * h.cols + c]) os << *v;
    }
    os << '\n';
  }
}

inline void to_json(nlohmann::json& j, const MarginalReport& m) {
  j = nlohmann::json{{"threshold", m.threshold}, {"top_rows", m.top_rows}, {"marginals", nlohmann::json::array()}};
  for (const auto& mg : m.marginals) {
    nlohmann::json values = nlohmann::json::array();
    for (const auto& [v, c] : mg.counts) values.push_back({{"value", v}, {"count", c}, {"fraction", mg.fraction.at(v)}});
    j["marginals"].push_back({{"parameter", mg.parameter}, {"values", values}});
  }
}

inline void to_json(nlohmann::json& j, const ScoreRow& r) {
  j = nlohmann::json{{"group", r.group}, {"mean", r.mean}, {"n", r.n}};
  j["ci_low"] = r.ci_low ? nlohmann::json(*r.ci_low) : nlohmann::json(nullptr);
  j["ci_high"] = r.ci_high ? nlohmann::json(*r.ci_high) : nlohmann::json(nullptr);
}

}  // namespace neuroloop::analysis
