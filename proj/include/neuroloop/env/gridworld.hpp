#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"

namespace neuroloop::env {

// Barrier-enclosed gridworld. The outer ring of cells is wall; the agent and
// the food always occupy interior cells. y grows "north".

struct EnvConfig {
  int width = 6;
  int height = 6;
  double lambda = 0.5;         // odor decay per cell of Euclidean distance
  std::uint64_t seed = 0;
  double shaping_scale = 1.0;  // multiplier on the odor-delta reward

  void validate() const {
    if (width < 3 || height < 3) throw ConfigError("gridworld must be at least 3x3");
    if (!(lambda > 0.0)) throw ConfigError("odor decay lambda must be positive");
    if (!(shaping_scale >= 0.0)) throw ConfigError("shaping_scale must be non-negative");
  }

  int interior_cells() const { return (width - 2) * (height - 2); }

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

enum class Heading : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };
enum class Action : std::uint8_t { forward = 0, left = 1, right = 2 };
enum class Event : std::uint8_t { none = 0, food_acquired = 1, collision = 2 };

inline constexpr std::array<Action, 3> kActions{Action::forward, Action::left, Action::right};

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct AgentPose {
  Cell cell;
  Heading heading = Heading::N;
  friend bool operator==(const AgentPose&, const AgentPose&) = default;
};

struct EnvState {
  EnvConfig config;
  AgentPose pose;
  Cell food;
  int step_count = 0;
  int food_count = 0;
  int collisions = 0;
  double cumulative_reward = 0.0;
  Rng rng;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepOutcome {
  double reward = 0.0;
  int sensor = 0;
  Event event = Event::none;
};

inline constexpr double kFoodReward = 2.0;
inline constexpr double kCollisionPenalty = -0.2;

inline Cell heading_delta(Heading h) {
  switch (h) {
    case Heading::N: return {0, 1};
    case Heading::E: return {1, 0};
    case Heading::S: return {0, -1};
    case Heading::W: return {-1, 0};
  }
  return {0, 0};
}

inline Heading turn_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
inline Heading turn_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

inline bool is_interior(const EnvConfig& c, Cell p) {
  return p.x >= 1 && p.x <= c.width - 2 && p.y >= 1 && p.y <= c.height - 2;
}

// Uniform interior cell, optionally excluding one cell.
inline Cell sample_interior(const EnvConfig& c, Rng& rng, const Cell* exclude = nullptr) {
  const int iw = c.width - 2;
  const auto n = static_cast<std::uint64_t>(c.interior_cells() - (exclude ? 1 : 0));
  auto k = static_cast<int>(rng.below(n));
  if (exclude) {
    const int ex = (exclude->y - 1) * iw + (exclude->x - 1);
    if (k >= ex) ++k;
  }
  return {1 + k % iw, 1 + k / iw};
}

// Food relocation draws from the episode stream and never lands on the cell
// just vacated by the food, which is where the agent stands at that moment.
inline Cell next_food(const EnvConfig& c, Rng& rng, Cell previous_food) {
  return sample_interior(c, rng, &previous_food);
}

inline double odor_intensity(Cell pos, Cell food, double lambda) {
  const double dx = pos.x - food.x;
  const double dy = pos.y - food.y;
  return std::exp(-lambda * std::sqrt(dx * dx + dy * dy));
}

inline EnvState reset(const EnvConfig& config) {
  config.validate();
  if (config.interior_cells() < 2)
    throw ConfigError("grid too small to place agent and food on distinct interior cells");
  EnvState s;
  s.config = config;
  s.rng = Rng(config.seed);
  s.pose.cell = sample_interior(config, s.rng);
  s.pose.heading = static_cast<Heading>(s.rng.below(4));
  s.food = sample_interior(config, s.rng, &s.pose.cell);
  return s;
}

// Bearing of the food relative to heading, bucketed into
//   0  front           |angle| <= 45 deg
//  -1  left            angle in (45, 135) deg counter-clockwise
//  +1  right or behind otherwise
// Integer arithmetic makes the bucket edges exact.
inline int sense(const AgentPose& pose, Cell food) {
  const Cell h = heading_delta(pose.heading);
  const int vx = food.x - pose.cell.x;
  const int vy = food.y - pose.cell.y;
  const int fwd = h.x * vx + h.y * vy;
  const int lft = h.x * vy - h.y * vx;
  if (fwd >= std::abs(lft) && (fwd != 0 || lft != 0)) return 0;
  if (lft > std::abs(fwd)) return -1;
  return 1;
}

inline int sense(const EnvState& s) { return sense(s.pose, s.food); }

// Advances the state in place and reports the outcome of the action.
inline StepOutcome step(EnvState& s, Action action) {
  StepOutcome out;
  const double before = odor_intensity(s.pose.cell, s.food, s.config.lambda);
  switch (action) {
    case Action::left: s.pose.heading = turn_left(s.pose.heading); break;
    case Action::right: s.pose.heading = turn_right(s.pose.heading); break;
    case Action::forward: {
      const Cell d = heading_delta(s.pose.heading);
      const Cell target{s.pose.cell.x + d.x, s.pose.cell.y + d.y};
      if (!is_interior(s.config, target)) {
        out.event = Event::collision;
      } else {
        s.pose.cell = target;
        if (target == s.food) out.event = Event::food_acquired;
      }
      break;
    }
  }
  if (out.event == Event::food_acquired) {
    out.reward = kFoodReward;
    ++s.food_count;
    s.food = next_food(s.config, s.rng, s.food);
  } else if (out.event == Event::collision) {
    out.reward = kCollisionPenalty;
    ++s.collisions;
  } else {
    const double after = odor_intensity(s.pose.cell, s.food, s.config.lambda);
    out.reward = s.config.shaping_scale * (after - before);
  }
  ++s.step_count;
  s.cumulative_reward += out.reward;
  out.sensor = sense(s);
  return out;
}

// Value-returning form.
inline std::pair<EnvState, StepOutcome> stepped(EnvState s, Action action) {
  const StepOutcome o = step(s, action);
  return {std::move(s), o};
}

// --- names and serialization ---------------------------------------------

inline std::string_view to_string(Heading h) {
  static constexpr std::string_view n[] = {"N", "E", "S", "W"};
  return n[static_cast<int>(h)];
}
inline std::string_view to_string(Action a) {
  static constexpr std::string_view n[] = {"forward", "left", "right"};
  return n[static_cast<int>(a)];
}
inline std::string_view to_string(Event e) {
  static constexpr std::string_view n[] = {"none", "food_acquired", "collision"};
  return n[static_cast<int>(e)];
}

inline Heading heading_from_string(std::string_view s) {
  if (s == "N") return Heading::N;
  if (s == "E") return Heading::E;
  if (s == "S") return Heading::S;
  if (s == "W") return Heading::W;
  throw DataError("unknown heading '" + std::string(s) + "'");
}
inline Action action_from_string(std::string_view s) {
  if (s == "forward" || s == "f") return Action::forward;
  if (s == "left" || s == "l") return Action::left;
  if (s == "right" || s == "r") return Action::right;
  throw DataError("unknown action '" + std::string(s) + "'");
}
inline Event event_from_string(std::string_view s) {
  if (s == "none") return Event::none;
  if (s == "food_acquired") return Event::food_acquired;
  if (s == "collision") return Event::collision;
  throw DataError("unknown event '" + std::string(s) + "'");
}

inline void to_json(nlohmann::json& j, const Cell& c) { j = nlohmann::json{{"x", c.x}, {"y", c.y}}; }
inline void from_json(const nlohmann::json& j, Cell& c) {
  c.x = j.at("x").get<int>();
  c.y = j.at("y").get<int>();
}

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"height", c.height},
                     {"lambda", c.lambda},
                     {"seed", c.seed},
                     {"shaping_scale", c.shaping_scale}};
}
inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.lambda = j.value("lambda", c.lambda);
  c.seed = j.value("seed", c.seed);
  c.shaping_scale = j.value("shaping_scale", c.shaping_scale);
}

// One line of the episode trace export. `pose` and `food` are recorded after
// the action has been applied.
inline nlohmann::json trace_record(int step_index, const EnvState& after, Action action,
                                   const StepOutcome& out) {
  return nlohmann::json{{"step", step_index},
                        {"pose", after.pose.cell},
                        {"heading", to_string(after.pose.heading)},
                        {"action", to_string(action)},
                        {"reward", out.reward},
                        {"sensor", out.sensor},
                        {"event", to_string(out.event)},
                        {"food", after.food}};
}

}  // namespace neuroloop::env
