#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"

namespace neuroloop::codec {

/// Binary channels x bins grid, stored sparsely as sorted event bins per
/// channel. Used for both stimulation onsets and detected spikes.
class EventRaster {
 public:
  EventRaster() = default;
  EventRaster(std::size_t channels, std::size_t bins, double bin_ms = 1.0)
      : bins_(bins), bin_ms_(bin_ms), events_(channels) {}

  std::size_t channels() const { return events_.size(); }
  std::size_t bins() const { return bins_; }
  double bin_ms() const { return bin_ms_; }
  double duration_ms() const { return static_cast<double>(bins_) * bin_ms_; }

  void set(std::size_t channel, std::size_t bin) {
    if (channel >= events_.size() || bin >= bins_)
      throw ContractError("raster index out of range");
    auto& row = events_[channel];
    const auto b = static_cast<std::uint32_t>(bin);
    if (row.empty() || row.back() < b) {
      row.push_back(b);
      return;
    }
    auto it = std::lower_bound(row.begin(), row.end(), b);
    if (it == row.end() || *it != b) row.insert(it, b);
  }

  bool test(std::size_t channel, std::size_t bin) const {
    const auto& row = events_.at(channel);
    return std::binary_search(row.begin(), row.end(), static_cast<std::uint32_t>(bin));
  }

  std::span<const std::uint32_t> events(std::size_t channel) const { return events_.at(channel); }

  std::size_t count(std::size_t channel) const { return events_.at(channel).size(); }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : events_) n += r.size();
    return n;
  }

  bool empty() const { return total() == 0; }

  // Time-concatenates `other` after this raster.
  void append(const EventRaster& other) {
    if (other.channels() != channels()) throw ContractError("raster channel mismatch on append");
    const auto offset = static_cast<std::uint32_t>(bins_);
    for (std::size_t c = 0; c < events_.size(); ++c)
      for (auto b : other.events_[c]) events_[c].push_back(b + offset);
    bins_ += other.bins_;
  }

  void clear_channel(std::size_t channel) { events_.at(channel).clear(); }

  friend bool operator==(const EventRaster&, const EventRaster&) = default;

 private:
  std::size_t bins_ = 0;
  double bin_ms_ = 1.0;
  std::vector<std::vector<std::uint32_t>> events_;
};

/// Pulse-onset grid at 1 ms resolution. Every pulse is a symmetric biphasic
/// rectangular pulse, cathodic (negative) phase first; the waveform is
/// represented only by this metadata.
struct StimulationMatrix {
  EventRaster onsets;
  double amplitude_ua = 0.0;
  double pulse_width_us = 0.0;

  static constexpr const char* kPhase = "biphasic_negative_leading";

  StimulationMatrix() = default;
  StimulationMatrix(std::size_t channels, std::size_t bins, double amplitude, double pulse_width)
      : onsets(channels, bins), amplitude_ua(amplitude), pulse_width_us(pulse_width) {}

  std::size_t channels() const { return onsets.channels(); }
  std::size_t bins() const { return onsets.bins(); }

  // Charge per phase in pC (uA * us = pC).
  double charge_pc() const { return amplitude_ua * pulse_width_us; }

  void append(const StimulationMatrix& other) { onsets.append(other.onsets); }

  friend bool operator==(const StimulationMatrix&, const StimulationMatrix&) = default;
};

struct SpikeMatrix {
  EventRaster spikes;

  SpikeMatrix() = default;
  explicit SpikeMatrix(EventRaster r) : spikes(std::move(r)) {}
  SpikeMatrix(std::size_t channels, std::size_t bins, double bin_ms = 1.0)
      : spikes(channels, bins, bin_ms) {}

  std::size_t channels() const { return spikes.channels(); }
  std::size_t bins() const { return spikes.bins(); }

  friend bool operator==(const SpikeMatrix&, const SpikeMatrix&) = default;
};

/// Continuous per-channel potentials in microvolts.
struct ResponseMatrix {
  std::size_t channels = 0;
  std::size_t samples = 0;
  double sample_rate_hz = 1000.0;
  std::vector<double> values;  // channel-major: values[c * samples + t]

  ResponseMatrix() = default;
  ResponseMatrix(std::size_t c, std::size_t n, double rate)
      : channels(c), samples(n), sample_rate_hz(rate), values(c * n, 0.0) {}

  double& at(std::size_t c, std::size_t t) { return values[c * samples + t]; }
  double at(std::size_t c, std::size_t t) const { return values[c * samples + t]; }

  friend bool operator==(const ResponseMatrix&, const ResponseMatrix&) = default;
};

// --- JSON: each channel row is run-length encoded as alternating run
// lengths, starting with a (possibly empty) run of zeros. ------------------

inline std::vector<std::uint32_t> encode_runs(std::span<const std::uint32_t> events, std::size_t bins) {
  std::vector<std::uint32_t> runs;
  std::uint32_t pos = 0;
  std::size_t i = 0;
  while (i < events.size()) {
    runs.push_back(events[i] - pos);  // zeros
    std::uint32_t len = 1;
    while (i + len < events.size() && events[i + len] == events[i] + len) ++len;
    runs.push_back(len);  // ones
    pos = events[i] + len;
    i += len;
  }
  if (pos < bins || runs.empty()) runs.push_back(static_cast<std::uint32_t>(bins - pos));
  return runs;
}

inline nlohmann::json raster_runs_json(const EventRaster& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t c = 0; c < r.channels(); ++c) rows.push_back(encode_runs(r.events(c), r.bins()));
  return rows;
}

inline EventRaster raster_from_runs(const nlohmann::json& rows, std::size_t channels, std::size_t bins,
                                    double bin_ms) {
  if (!rows.is_array() || rows.size() != channels)
    throw DataError("run-length rows do not match channel count");
  EventRaster r(channels, bins, bin_ms);
  for (std::size_t c = 0; c < channels; ++c) {
    std::uint64_t pos = 0;
    bool ones = false;
    for (const auto& len_json : rows[c]) {
      const auto len = len_json.get<std::uint64_t>();
      if (pos + len > bins) throw DataError("run-length row exceeds bin count");
      if (ones)
        for (std::uint64_t b = pos; b < pos + len; ++b) r.set(c, b);
      pos += len;
      ones = !ones;
    }
    if (pos != bins) throw DataError("run-length row does not cover all bins");
  }
  return r;
}

inline void to_json(nlohmann::json& j, const StimulationMatrix& m) {
  j = nlohmann::json{{"channels", m.channels()},
                     {"bins", m.bins()},
                     {"onsets", raster_runs_json(m.onsets)},
                     {"amplitude", m.amplitude_ua},
                     {"pulse_width", m.pulse_width_us},
                     {"phase", StimulationMatrix::kPhase}};
}

inline void from_json(const nlohmann::json& j, StimulationMatrix& m) {
  const auto channels = j.at("channels").get<std::size_t>();
  const auto bins = j.at("bins").get<std::size_t>();
  m.onsets = raster_from_runs(j.at("onsets"), channels, bins, 1.0);
  m.amplitude_ua = j.at("amplitude").get<double>();
  m.pulse_width_us = j.at("pulse_width").get<double>();
}

inline void to_json(nlohmann::json& j, const SpikeMatrix& m) {
  j = nlohmann::json{{"channels", m.channels()},
                     {"bins", m.bins()},
                     {"bin_ms", m.spikes.bin_ms()},
                     {"spikes", raster_runs_json(m.spikes)}};
}

inline void from_json(const nlohmann::json& j, SpikeMatrix& m) {
  const auto channels = j.at("channels").get<std::size_t>();
  const auto bins = j.at("bins").get<std::size_t>();
  m.spikes = raster_from_runs(j.at("spikes"), channels, bins, j.value("bin_ms", 1.0));
}

// Raster export: one "channel,time_ms" row per event.
inline void write_raster_csv(std::ostream& os, const EventRaster& r, double offset_ms = 0.0,
                             bool header = true) {
  if (header) os << "channel,time_ms\n";
  for (std::size_t c = 0; c < r.channels(); ++c)
    for (auto b : r.events(c)) os << c << ',' << offset_ms + b * r.bin_ms() << '\n';
}

}  // namespace neuroloop::codec
