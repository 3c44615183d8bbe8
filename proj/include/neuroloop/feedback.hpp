#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/encode.hpp"
#include "neuroloop/codec/layout.hpp"
#include "neuroloop/codec/raster.hpp"
#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"

namespace neuroloop::feedback {

using codec::RegionLayout;
using codec::StimulationMatrix;

// The feedback regimen is fixed; only amplitude and pulse width follow the
// encoding configuration.
struct FeedbackParams {
  int burst_count = 5;
  double burst_rate_hz = 100.0;
  double burst_duration_ms = 80.0;
  double random_rate_min_hz = 3.0;
  double random_rate_max_hz = 25.0;
  double activation_prob = 1.0 / 3.0;
  double duration_multiplier = 2.0;
  double amplitude = 2.5;     // uA, inherited
  double pulse_width = 40.0;  // us, inherited

  void validate() const {
    if (burst_count < 1 || !(burst_rate_hz > 0) || !(burst_duration_ms > 0))
      throw ConfigError("burst parameters must be positive");
    if (!(random_rate_min_hz > 0) || !(random_rate_min_hz < random_rate_max_hz))
      throw ConfigError("random feedback rate range must satisfy 0 < min < max");
    if (!(activation_prob > 0.0 && activation_prob <= 1.0))
      throw ConfigError("activation probability must be in (0, 1]");
    if (!(duration_multiplier > 0) || !(amplitude > 0) || !(pulse_width > 0))
      throw ConfigError("feedback duration multiplier, amplitude and pulse width must be positive");
  }

  void inherit(const codec::EncodingParams& e) {
    amplitude = e.amplitude;
    pulse_width = e.pulse_width;
  }

  std::uint64_t duration_ms(std::uint64_t interaction_ms) const {
    return static_cast<std::uint64_t>(std::llround(duration_multiplier * static_cast<double>(interaction_ms)));
  }

  friend bool operator==(const FeedbackParams&, const FeedbackParams&) = default;
};

enum class FeedbackKind : std::uint8_t { reinforcing = 0, plasticity = 1 };

inline FeedbackKind select_feedback(double reward) {
  return reward > 0.0 ? FeedbackKind::reinforcing : FeedbackKind::plasticity;
}

inline std::string_view to_string(FeedbackKind k) {
  return k == FeedbackKind::reinforcing ? "reinforcing" : "plasticity";
}

inline FeedbackKind feedback_kind_from_string(std::string_view s) {
  if (s == "reinforcing") return FeedbackKind::reinforcing;
  if (s == "plasticity") return FeedbackKind::plasticity;
  throw DataError("unknown feedback kind '" + std::string(s) + "'");
}

/// Structured bursts after a positive reward: burst k is centred at
/// (k + 0.5) T / burst_count within the feedback window T, and the same
/// pattern goes to every encoding and decoding electrode.
inline StimulationMatrix reinforcing_feedback(std::uint64_t interaction_ms, const RegionLayout& layout,
                                              const FeedbackParams& p) {
  if (interaction_ms == 0) throw PreconditionError("interaction period must be positive");
  const auto total = p.duration_ms(interaction_ms);
  if (static_cast<double>(total) < p.burst_count * p.burst_duration_ms)
    throw ParameterError("feedback window too short to hold the bursts");
  StimulationMatrix m(layout.channels, total, p.amplitude, p.pulse_width);
  const auto burst_bins = static_cast<std::size_t>(std::llround(p.burst_duration_ms));
  const auto active = layout.active_channels();
  for (int k = 0; k < p.burst_count; ++k) {
    const double centre = (k + 0.5) * static_cast<double>(total) / p.burst_count;
    const auto start = static_cast<std::size_t>(std::llround(centre - p.burst_duration_ms / 2.0));
    for (auto c : active) codec::place_pulse_train(m.onsets, c, p.burst_rate_hz, burst_bins, start);
  }
  return m;
}

/// Random stimulation after a non-positive reward. Each encoding/decoding
/// electrode is active with activation_prob; an active electrode gets onsets
/// separated by 1/f with f ~ U(min, max) Hz redrawn per interval (rounded to
/// whole milliseconds), starting at a uniform offset within the first interval.
inline StimulationMatrix plasticity_feedback(std::uint64_t interaction_ms, const RegionLayout& layout,
                                             const FeedbackParams& p, Rng& rng) {
  if (interaction_ms == 0) throw PreconditionError("interaction period must be positive");
  const auto total = p.duration_ms(interaction_ms);
  StimulationMatrix m(layout.channels, total, p.amplitude, p.pulse_width);
  auto draw_interval = [&] {
    const double f = rng.uniform(p.random_rate_min_hz, p.random_rate_max_hz);
    return static_cast<std::uint64_t>(std::llround(1000.0 / f));
  };
  for (auto c : layout.active_channels()) {
    if (!rng.bernoulli(p.activation_prob)) continue;
    std::uint64_t t = rng.below(draw_interval());
    while (t < total) {
      m.onsets.set(c, t);
      t += draw_interval();
    }
  }
  return m;
}

inline void to_json(nlohmann::json& j, const FeedbackParams& p) {
  j = nlohmann::json{{"burst_count", p.burst_count},
                     {"burst_rate_hz", p.burst_rate_hz},
                     {"burst_duration_ms", p.burst_duration_ms},
                     {"random_rate_range_hz", {p.random_rate_min_hz, p.random_rate_max_hz}},
                     {"activation_prob", p.activation_prob},
                     {"duration_multiplier", p.duration_multiplier},
                     {"amplitude", p.amplitude},
                     {"pulse_width", p.pulse_width}};
}

inline void from_json(const nlohmann::json& j, FeedbackParams& p) {
  p.burst_count = j.value("burst_count", p.burst_count);
  p.burst_rate_hz = j.value("burst_rate_hz", p.burst_rate_hz);
  p.burst_duration_ms = j.value("burst_duration_ms", p.burst_duration_ms);
  if (j.contains("random_rate_range_hz")) {
    p.random_rate_min_hz = j.at("random_rate_range_hz").at(0).get<double>();
    p.random_rate_max_hz = j.at("random_rate_range_hz").at(1).get<double>();
  }
  p.activation_prob = j.value("activation_prob", p.activation_prob);
  p.duration_multiplier = j.value("duration_multiplier", p.duration_multiplier);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.pulse_width = j.value("pulse_width", p.pulse_width);
}

}  // namespace neuroloop::feedback
