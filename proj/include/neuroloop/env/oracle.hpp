#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <queue>
#include <vector>

#include "neuroloop/env/gridworld.hpp"

namespace neuroloop::env {

namespace detail {

inline constexpr int kUnreachable = std::numeric_limits<int>::max() / 4;

// Fewest actions from `start` until the agent steps onto `target`, indexed by
// the heading the agent has when it arrives. Stepping onto the target ends
// the path, so no path passes through it early.
inline std::array<int, 4> arrival_costs(const EnvConfig& c, AgentPose start, Cell target) {
  const int w = c.width, h = c.height;
  auto index = [&](Cell p, Heading hd) { return ((p.y * w) + p.x) * 4 + static_cast<int>(hd); };
  std::vector<int> dist(static_cast<std::size_t>(w * h * 4), kUnreachable);
  std::array<int, 4> arrive;
  arrive.fill(kUnreachable);
  std::queue<AgentPose> frontier;
  dist[index(start.cell, start.heading)] = 0;
  frontier.push(start);
  while (!frontier.empty()) {
    const AgentPose p = frontier.front();
    frontier.pop();
    const int d = dist[index(p.cell, p.heading)];
    for (AgentPose q : {AgentPose{p.cell, turn_left(p.heading)}, AgentPose{p.cell, turn_right(p.heading)}}) {
      int& dq = dist[index(q.cell, q.heading)];
      if (dq == kUnreachable) {
        dq = d + 1;
        frontier.push(q);
      }
    }
    const Cell delta = heading_delta(p.heading);
    const Cell next{p.cell.x + delta.x, p.cell.y + delta.y};
    if (!is_interior(c, next)) continue;
    if (next == target) {
      auto& a = arrive[static_cast<int>(p.heading)];
      a = std::min(a, d + 1);
      continue;
    }
    int& dn = dist[index(next, p.heading)];
    if (dn == kUnreachable) {
      dn = d + 1;
      frontier.push({next, p.heading});
    }
  }
  return arrive;
}

}  // namespace detail

/// Largest number of foods any action sequence of length `steps` can collect
/// from the episode that `config` resets into.
///
/// The food sequence does not depend on the policy (each relocation excludes
/// only the cell the food left), so the optimum is a shortest-path dynamic
/// program over (foods collected, heading on arrival).
inline int max_food_acquisitions(const EnvConfig& config, int steps) {
  if (steps <= 0) return 0;
  EnvState s = reset(config);
  Rng food_rng = s.rng;
  Cell here = s.pose.cell;
  Cell food = s.food;

  // best[h]: fewest actions to be standing on the last collected food with heading h.
  std::array<int, 4> best;
  best.fill(detail::kUnreachable);
  best[static_cast<int>(s.pose.heading)] = 0;

  int collected = 0;
  for (;;) {
    std::array<int, 4> next;
    next.fill(detail::kUnreachable);
    for (int h = 0; h < 4; ++h) {
      if (best[h] > steps) continue;
      const auto cost = detail::arrival_costs(config, {here, static_cast<Heading>(h)}, food);
      for (int k = 0; k < 4; ++k)
        if (cost[k] != detail::kUnreachable) next[k] = std::min(next[k], best[h] + cost[k]);
    }
    if (*std::min_element(next.begin(), next.end()) > steps) return collected;
    ++collected;
    best = next;
    here = food;
    food = next_food(config, food_rng, food);
  }
}

/// Reward denominator for normalized scores: food reward times the maximum
/// achievable acquisitions. Shaping and collision terms are excluded.
inline double oracle_max_reward(EnvConfig config, std::uint64_t seed, int steps) {
  config.seed = seed;
  return kFoodReward * max_food_acquisitions(config, steps);
}

}  // namespace neuroloop::env
