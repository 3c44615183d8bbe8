#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>
#include <string>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/layout.hpp"
#include "neuroloop/codec/raster.hpp"
#include "neuroloop/core/error.hpp"

namespace neuroloop::codec {

// Encoding parameters: the six screened values plus the sensor range.
struct EncodingParams {
  double f_min = 4.0;           // Hz
  double f_max = 40.0;          // Hz
  double amplitude = 2.5;       // uA
  double pulse_width = 40.0;    // us
  double tick_rate = 2.0;       // Hz
  int ticks_per_step = 4;
  double x_min = -1.0;
  double x_max = 1.0;

  void validate() const {
    if (!(f_min > 0.0 && f_min < f_max)) throw ConfigError("need 0 < f_min < f_max");
    if (!(amplitude > 0.0)) throw ConfigError("amplitude must be positive");
    if (!(pulse_width > 0.0)) throw ConfigError("pulse_width must be positive");
    if (!(tick_rate > 0.0)) throw ConfigError("tick_rate must be positive");
    if (ticks_per_step < 1) throw ConfigError("ticks_per_step must be at least 1");
    if (!(x_min < x_max)) throw ConfigError("need x_min < x_max");
  }

  // One tick, rounded to whole 1 ms bins.
  std::uint64_t tick_ms() const { return static_cast<std::uint64_t>(std::llround(1000.0 / tick_rate)); }

  // Interaction period: the window in which one step is encoded and decoded.
  std::uint64_t interaction_ms() const { return tick_ms() * static_cast<std::uint64_t>(ticks_per_step); }

  friend bool operator==(const EncodingParams&, const EncodingParams&) = default;
};

inline constexpr double kMaxEncodingFrequencyHz = 500.0;

struct RateResult {
  double hz = 0.0;
  bool clamped = false;
};

/// Linear interpolation of the sensor value onto [f_min, f_max]. Values
/// outside [x_min, x_max] are clamped and flagged.
inline RateResult rate_frequency(double x, const EncodingParams& p) {
  RateResult r;
  double xc = x;
  if (!(x >= p.x_min)) {
    xc = p.x_min;
    r.clamped = true;
  } else if (x > p.x_max) {
    xc = p.x_max;
    r.clamped = true;
  }
  r.hz = p.f_min + (p.f_max - p.f_min) * ((xc - p.x_min) / (p.x_max - p.x_min));
  return r;
}

// Pulse train of `hz` over `bins` 1 ms bins: onset k at floor(1000 k / hz)
// for every k with k / hz strictly before the end of the window.
inline void place_pulse_train(EventRaster& r, std::size_t channel, double hz, std::size_t bins,
                              std::size_t offset = 0) {
  const double limit = static_cast<double>(bins) * hz;  // k * 1000 < bins * hz  <=>  k / hz < window
  for (std::uint64_t k = 0; static_cast<double>(k) * 1000.0 < limit; ++k)
    r.set(channel, offset + static_cast<std::size_t>(std::floor(static_cast<double>(k) * 1000.0 / hz + 1e-9)));
}

/// One tick of rate-coded stimulation, delivered identically on every
/// encoding channel.
inline StimulationMatrix encode_tick(double x, const EncodingParams& p, const RegionLayout& layout) {
  const double hz = rate_frequency(x, p).hz;
  if (hz > kMaxEncodingFrequencyHz)
    throw ParameterError("encoding frequency above 500 Hz aliases 1 ms bins");
  const auto bins = static_cast<std::size_t>(p.tick_ms());
  StimulationMatrix m(layout.channels, bins, p.amplitude, p.pulse_width);
  for (auto c : layout.encoding) place_pulse_train(m.onsets, c, hz, bins);
  return m;
}

/// ticks_per_step ticks back to back: the stimulation for one interaction.
inline StimulationMatrix encode_step(double x, const EncodingParams& p, const RegionLayout& layout) {
  StimulationMatrix m = encode_tick(x, p, layout);
  const StimulationMatrix tick = m;
  for (int i = 1; i < p.ticks_per_step; ++i) m.append(tick);
  return m;
}

/// Screened parameters by name, as they appear in grids and on the wire.
using ParamMap = std::map<std::string, double>;

inline const std::vector<std::string>& screened_parameter_names() {
  static const std::vector<std::string> names{"min_frequency", "max_frequency", "amplitude",
                                              "pulse_width",   "tick_rate",     "ticks_per_step"};
  return names;
}

inline ParamMap to_param_map(const EncodingParams& p) {
  return {{"min_frequency", p.f_min}, {"max_frequency", p.f_max},  {"amplitude", p.amplitude},
          {"pulse_width", p.pulse_width}, {"tick_rate", p.tick_rate}, {"ticks_per_step", p.ticks_per_step}};
}

// Overrides the named fields of `base`; unknown names are a configuration error.
inline EncodingParams apply_params(EncodingParams base, const ParamMap& params) {
  for (const auto& [name, v] : params) {
    if (name == "min_frequency") base.f_min = v;
    else if (name == "max_frequency") base.f_max = v;
    else if (name == "amplitude") base.amplitude = v;
    else if (name == "pulse_width") base.pulse_width = v;
    else if (name == "tick_rate") base.tick_rate = v;
    else if (name == "ticks_per_step") base.ticks_per_step = static_cast<int>(std::llround(v));
    else throw ConfigError("unknown encoding parameter '" + name + "'");
  }
  return base;
}

inline void to_json(nlohmann::json& j, const EncodingParams& p) {
  j = nlohmann::json{{"min_frequency", p.f_min},  {"max_frequency", p.f_max},
                     {"amplitude", p.amplitude},  {"pulse_width", p.pulse_width},
                     {"tick_rate", p.tick_rate},  {"ticks_per_step", p.ticks_per_step},
                     {"x_min", p.x_min},          {"x_max", p.x_max}};
}

inline void from_json(const nlohmann::json& j, EncodingParams& p) {
  p.f_min = j.value("min_frequency", p.f_min);
  p.f_max = j.value("max_frequency", p.f_max);
  p.amplitude = j.value("amplitude", p.amplitude);
  p.pulse_width = j.value("pulse_width", p.pulse_width);
  p.tick_rate = j.value("tick_rate", p.tick_rate);
  if (j.contains("ticks_per_step")) p.ticks_per_step = static_cast<int>(std::llround(j.at("ticks_per_step").get<double>()));
  p.x_min = j.value("x_min", p.x_min);
  p.x_max = j.value("x_max", p.x_max);
}

}  // namespace neuroloop::codec
