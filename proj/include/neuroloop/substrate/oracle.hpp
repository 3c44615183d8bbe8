#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/encode.hpp"
#include "neuroloop/codec/layout.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/env/gridworld.hpp"
#include "neuroloop/substrate/substrate.hpp"

namespace neuroloop::substrate {

// Value ranges used to normalize parameter distances (stage-1 grid extents).
inline std::map<std::string, std::pair<double, double>> default_parameter_ranges() {
  return {{"min_frequency", {2.0, 5.0}}, {"max_frequency", {40.0, 100.0}}, {"amplitude", {1.0, 2.5}},
          {"pulse_width", {40.0, 160.0}}, {"tick_rate", {1.0, 4.0}},       {"ticks_per_step", {2.0, 8.0}}};
}

/// Planted-optimum substrate for testing the optimizer. It reads the sensor
/// value back out of the encoding pulse train and answers with the planted
/// navigation policy with reliability q(theta), otherwise with a uniformly
/// random region.
struct OracleConfig {
  codec::ParamMap planted;                      // theta*
  std::optional<codec::EncodingParams> evaluated;  // theta_e of the trial being run
  std::map<std::string, std::pair<double, double>> ranges = default_parameter_ranges();
  double width = 1.0;
  double background_rate_hz = 2.0;
  double evoked_rate_hz = 40.0;
  std::optional<double> quality;  // overrides q(theta) when set

  friend bool operator==(const OracleConfig&, const OracleConfig&) = default;
};

// q = exp(-|norm(theta) - norm(theta*)|^2 / width^2) over the planted names.
inline double oracle_quality(const OracleConfig& cfg, const codec::EncodingParams& evaluated) {
  if (cfg.quality) return *cfg.quality;
  const auto values = codec::to_param_map(evaluated);
  double d2 = 0.0;
  for (const auto& [name, target] : cfg.planted) {
    const auto v = values.find(name);
    if (v == values.end()) throw ConfigError("planted parameter '" + name + "' is not an encoding parameter");
    const auto r = cfg.ranges.find(name);
    const double span = (r != cfg.ranges.end() && r->second.second > r->second.first)
                            ? r->second.second - r->second.first
                            : 1.0;
    const double z = (v->second - target) / span;
    d2 += z * z;
  }
  return std::exp(-d2 / (cfg.width * cfg.width));
}

// Planted policy: head toward the odor.
inline env::Action planted_policy(int sensor) {
  if (sensor < 0) return env::Action::left;
  if (sensor > 0) return env::Action::right;
  return env::Action::forward;
}

class OracleSubstrate final : public Substrate {
 public:
  OracleSubstrate(const codec::RegionLayout& layout, OracleConfig cfg, std::uint64_t seed)
      : layout_(layout), cfg_(std::move(cfg)), rng_(seed) {
    if (cfg_.planted.empty() && !cfg_.quality) throw ConfigError("oracle substrate needs planted parameter values");
    if (!cfg_.evaluated) throw ConfigError("oracle substrate needs the evaluated encoding parameters");
    quality_ = oracle_quality(cfg_, *cfg_.evaluated);
    const auto tick = static_cast<std::size_t>(cfg_.evaluated->tick_ms());
    for (int s = -1; s <= 1; ++s) {
      codec::EventRaster r(1, tick);
      codec::place_pulse_train(r, 0, codec::rate_frequency(s, *cfg_.evaluated).hz, tick);
      per_tick_[static_cast<std::size_t>(s + 1)] = static_cast<double>(r.count(0)) / static_cast<double>(tick);
    }
  }

  double quality() const { return quality_; }

  Capabilities capabilities() const override { return {true, false}; }
  std::size_t channels() const override { return layout_.channels; }
  std::uint64_t clock_ms() const override { return clock_; }
  void rest(std::uint64_t duration_ms) override { clock_ += duration_ms; }

 protected:
  Recording do_stimulate(const StimulationMatrix& stim, std::uint64_t record_ms) override {
    SpikeMatrix out(layout_.channels, record_ms);
    poisson(out, layout_.all, cfg_.background_rate_hz, record_ms);
    if (auto sensor = read_sensor(stim)) {
      const env::Action target = rng_.bernoulli(quality_) ? planted_policy(*sensor)
                                                          : static_cast<env::Action>(rng_.below(3));
      poisson(out, layout_.decode[static_cast<std::size_t>(target)], cfg_.evoked_rate_hz, record_ms);
    }
    clock_ += record_ms;
    return out;
  }

 private:
  // Sensor value carried by an encoding pulse train; nothing for silence or
  // for patterns that also drive decode electrodes (feedback).
  std::optional<int> read_sensor(const StimulationMatrix& stim) const {
    if (stim.bins() == 0) return std::nullopt;
    for (const auto& region : layout_.decode)
      for (auto c : region)
        if (stim.onsets.count(c) != 0) return std::nullopt;
    const auto n = static_cast<double>(stim.onsets.count(layout_.encoding.front()));
    if (n == 0) return std::nullopt;
    int best = 0;
    double best_err = 1e300;
    for (int s = -1; s <= 1; ++s) {
      const double err = std::abs(n - per_tick_[static_cast<std::size_t>(s + 1)] * static_cast<double>(stim.bins()));
      if (err < best_err) {
        best_err = err;
        best = s;
      }
    }
    return best;
  }

  void poisson(SpikeMatrix& out, const std::vector<std::size_t>& channels, double rate_hz, std::uint64_t window) {
    if (rate_hz <= 0.0) return;
    const double rate_per_ms = rate_hz / 1000.0;
    for (auto c : channels) {
      double t = rng_.exponential(rate_per_ms);
      while (t < static_cast<double>(window)) {
        out.spikes.set(c, static_cast<std::size_t>(t));
        t += rng_.exponential(rate_per_ms);
      }
    }
  }

  struct Layout : codec::RegionLayout {
    std::vector<std::size_t> all;
    explicit Layout(const codec::RegionLayout& l) : codec::RegionLayout(l) {
      for (std::size_t c = 0; c < l.channels; ++c) all.push_back(c);
    }
  };

  Layout layout_;
  OracleConfig cfg_;
  Rng rng_;
  double quality_ = 1.0;
  std::array<double, 3> per_tick_{};  // expected onsets per ms for sensor -1, 0, +1
  std::uint64_t clock_ = 0;
};

inline void to_json(nlohmann::json& j, const OracleConfig& c) {
  j = nlohmann::json{{"planted", c.planted},
                     {"width", c.width},
                     {"background_rate_hz", c.background_rate_hz},
                     {"evoked_rate_hz", c.evoked_rate_hz}};
  if (c.quality) j["quality"] = *c.quality;
  if (c.evaluated) j["evaluated"] = *c.evaluated;
}

inline void from_json(const nlohmann::json& j, OracleConfig& c) {
  c.planted = j.value("planted", codec::ParamMap{});
  c.width = j.value("width", c.width);
  c.background_rate_hz = j.value("background_rate_hz", c.background_rate_hz);
  c.evoked_rate_hz = j.value("evoked_rate_hz", c.evoked_rate_hz);
  if (j.contains("quality")) c.quality = j.at("quality").get<double>();
  if (j.contains("evaluated")) c.evaluated = j.at("evaluated").get<codec::EncodingParams>();
}

}  // namespace neuroloop::substrate
