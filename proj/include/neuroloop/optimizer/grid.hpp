#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/encode.hpp"
#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/loop/trial.hpp"

namespace neuroloop::optimizer {

using codec::ParamMap;

enum class Stage : std::uint8_t { stage1, stage2 };

inline std::string_view to_string(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2"; }

inline Stage stage_from_string(std::string_view s) {
  if (s == "stage1" || s == "1") return Stage::stage1;
  if (s == "stage2" || s == "2") return Stage::stage2;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

struct Axis {
  std::string name;
  std::vector<double> values;
  friend bool operator==(const Axis&, const Axis&) = default;
};

/// Cartesian parameter grid; the last axis varies fastest.
struct ParameterGrid {
  std::vector<Axis> axes;

  std::size_t size() const {
    if (axes.empty()) return 0;
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.values.size();
    return n;
  }

  ParamMap combo(std::size_t index) const {
    ParamMap p;
    for (std::size_t i = axes.size(); i-- > 0;) {
      const auto& a = axes[i];
      p[a.name] = a.values[index % a.values.size()];
      index /= a.values.size();
    }
    return p;
  }

  std::vector<ParamMap> combos() const {
    std::vector<ParamMap> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(combo(i));
    return out;
  }

  friend bool operator==(const ParameterGrid&, const ParameterGrid&) = default;
};

inline ParameterGrid build_grid(Stage stage) {
  if (stage == Stage::stage1)
    return {{{"min_frequency", {2.0, 3.0, 4.0, 5.0}},
             {"max_frequency", {40.0, 60.0, 80.0, 100.0}},
             {"amplitude", {1.0, 2.0, 2.5}},
             {"pulse_width", {40.0, 80.0, 160.0}},
             {"tick_rate", {1.0, 2.0, 4.0}},
             {"ticks_per_step", {2.0, 4.0, 8.0}}}};
  return {{{"min_frequency", {4.0}},
           {"max_frequency", {40.0, 60.0, 80.0, 100.0}},
           {"amplitude", {2.0, 2.5}},
           {"pulse_width", {40.0, 80.0}},
           {"tick_rate", {1.0, 2.0}},
           {"ticks_per_step", {2.0, 4.0}}}};
}

/// One aggregation unit: a parameter set (one replicate of it) that is
/// evaluated by `quorum` distinct clients.
struct Unit {
  std::size_t id = 0;       // dispatch index
  std::size_t combo = 0;    // index into the combo list
  std::size_t replicate = 0;
  ParamMap params;
  friend bool operator==(const Unit&, const Unit&) = default;
};

/// Shuffles the combos once with `seed` and interleaves replicates round-robin.
inline std::vector<Unit> schedule(const std::vector<ParamMap>& combos, std::size_t replicates, std::uint64_t seed) {
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  std::vector<std::size_t> order(combos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order.begin(), order.end(), rng);
  std::vector<Unit> units;
  units.reserve(order.size() * replicates);
  for (std::size_t r = 0; r < replicates; ++r)
    for (auto c : order) units.push_back({units.size(), c, r, combos[c]});
  return units;
}

inline std::vector<Unit> schedule(const ParameterGrid& grid, std::size_t replicates, std::uint64_t seed) {
  return schedule(grid.combos(), replicates, seed);
}

/// Work handed to one client.
struct Assignment {
  std::uint64_t trial_id = 0;
  std::size_t unit = 0;
  std::size_t slot = 0;
  std::size_t replicate = 0;
  ParamMap params;
  loop::Mode mode = loop::Mode::A;
  loop::TrialSeeds seeds;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Seeds depend only on the study seed and the (unit, slot) being evaluated,
// so a reissued assignment reproduces the original one exactly.
inline loop::TrialSeeds assignment_seeds(std::uint64_t study_seed, std::size_t unit, std::size_t slot) {
  loop::TrialSeeds s = loop::TrialSeeds::from(derive_seed(derive_seed(study_seed, unit + 1), slot + 1));
  s.env = derive_seed(study_seed, 0);  // episodes share one environment seed across the study
  return s;
}

/// Applies an assignment to a base trial configuration.
inline loop::TrialConfig apply_assignment(loop::TrialConfig base, const Assignment& a) {
  base.encoding = codec::apply_params(base.encoding, a.params);
  base.mode = a.mode;
  base.seeds = a.seeds;
  return base;
}

inline void to_json(nlohmann::json& j, const Axis& a) { j = nlohmann::json{{"name", a.name}, {"values", a.values}}; }
inline void from_json(const nlohmann::json& j, Axis& a) {
  a.name = j.at("name").get<std::string>();
  a.values = j.at("values").get<std::vector<double>>();
}
inline void to_json(nlohmann::json& j, const ParameterGrid& g) { j = g.axes; }
inline void from_json(const nlohmann::json& j, ParameterGrid& g) { g.axes = j.get<std::vector<Axis>>(); }

inline void to_json(nlohmann::json& j, const Assignment& a) {
  j = nlohmann::json{{"trial_id", a.trial_id}, {"unit", a.unit},   {"slot", a.slot},
                     {"replicate", a.replicate}, {"params", a.params}, {"mode", loop::to_string(a.mode)},
                     {"seeds", a.seeds}};
}
inline void from_json(const nlohmann::json& j, Assignment& a) {
  a.trial_id = j.at("trial_id").get<std::uint64_t>();
  a.unit = j.value("unit", std::size_t{0});
  a.slot = j.value("slot", std::size_t{0});
  a.replicate = j.value("replicate", std::size_t{0});
  a.params = j.at("params").get<ParamMap>();
  a.mode = loop::mode_from_string(j.at("mode").get<std::string>());
  a.seeds = j.at("seeds").get<loop::TrialSeeds>();
}

}  // namespace neuroloop::optimizer
