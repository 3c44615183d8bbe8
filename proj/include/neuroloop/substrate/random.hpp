#pragma once

#include <cmath>

#include <nlohmann/json.hpp>

#include "neuroloop/core/rng.hpp"
#include "neuroloop/substrate/substrate.hpp"

namespace neuroloop::substrate {

struct RandomConfig {
  double rate_hz = 2.0;  // per channel
  friend bool operator==(const RandomConfig&, const RandomConfig&) = default;
};

/// Non-adaptive control: independent Poisson spiking on every channel,
/// ignoring stimulation.
class RandomSubstrate final : public Substrate {
 public:
  RandomSubstrate(std::size_t channels, RandomConfig cfg, std::uint64_t seed)
      : channels_(channels), cfg_(cfg), rng_(seed) {
    if (!(cfg.rate_hz >= 0.0)) throw ConfigError("random substrate rate must be non-negative");
  }

  Capabilities capabilities() const override { return {true, false}; }
  std::size_t channels() const override { return channels_; }
  std::uint64_t clock_ms() const override { return clock_; }

  void rest(std::uint64_t duration_ms) override { clock_ += duration_ms; }

 protected:
  Recording do_stimulate(const StimulationMatrix&, std::uint64_t record_ms) override {
    SpikeMatrix out(channels_, record_ms);
    if (cfg_.rate_hz > 0.0) {
      const double rate_per_ms = cfg_.rate_hz / 1000.0;
      const auto window = static_cast<double>(record_ms);
      for (std::size_t c = 0; c < channels_; ++c) {
        double t = rng_.exponential(rate_per_ms);
        while (t < window) {
          out.spikes.set(c, static_cast<std::size_t>(t));
          t += rng_.exponential(rate_per_ms);
        }
      }
    }
    clock_ += record_ms;
    return out;
  }

 private:
  std::size_t channels_;
  RandomConfig cfg_;
  Rng rng_;
  std::uint64_t clock_ = 0;
};

inline void to_json(nlohmann::json& j, const RandomConfig& c) { j = nlohmann::json{{"rate_hz", c.rate_hz}}; }
inline void from_json(const nlohmann::json& j, RandomConfig& c) { c.rate_hz = j.value("rate_hz", c.rate_hz); }

}  // namespace neuroloop::substrate
