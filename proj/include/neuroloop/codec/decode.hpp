#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/codec/layout.hpp"
#include "neuroloop/codec/raster.hpp"
#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/env/gridworld.hpp"

namespace neuroloop::codec {

struct DetectorConfig {
  double threshold_uv = -50.0;  // negative-going threshold
  double refractory_ms = 1.0;
};

/// Threshold-crossing detector: a spike is marked at the first sample that
/// drops below the (negative) threshold; further crossings within the
/// refractory window of the last accepted spike are suppressed. Output bins
/// match the input sampling.
inline SpikeMatrix detect_spikes(const ResponseMatrix& v, double threshold_uv, double refractory_ms) {
  if (refractory_ms < 0.0) throw PreconditionError("refractory window must be non-negative");
  if (!(v.sample_rate_hz > 0.0)) throw DataError("response sample rate must be positive");
  const double bin_ms = 1000.0 / v.sample_rate_hz;
  const double refractory_samples = refractory_ms / bin_ms;
  SpikeMatrix out(v.channels, v.samples, bin_ms);
  for (std::size_t c = 0; c < v.channels; ++c) {
    bool below = false;
    double last = -1e300;
    for (std::size_t t = 0; t < v.samples; ++t) {
      const double x = v.at(c, t);
      if (!std::isfinite(x)) throw DataError("non-finite sample in response matrix");
      const bool now_below = x < threshold_uv;
      if (now_below && !below && static_cast<double>(t) - last >= refractory_samples) {
        out.spikes.set(c, t);
        last = static_cast<double>(t);
      }
      below = now_below;
    }
  }
  return out;
}

inline SpikeMatrix detect_spikes(const ResponseMatrix& v, const DetectorConfig& cfg) {
  return detect_spikes(v, cfg.threshold_uv, cfg.refractory_ms);
}

/// What a substrate hands back for a recording window.
using Recording = std::variant<SpikeMatrix, ResponseMatrix>;

// Identity for substrates that emit spikes directly, detection otherwise.
inline SpikeMatrix to_spikes(Recording r, const DetectorConfig& cfg) {
  if (auto* s = std::get_if<SpikeMatrix>(&r)) return std::move(*s);
  return detect_spikes(std::get<ResponseMatrix>(r), cfg);
}

/// Spike counts for one interaction window.
struct WindowCounts {
  std::array<std::uint64_t, 3> regions{};
  std::vector<std::uint32_t> channels;
};

inline WindowCounts count_window(const SpikeMatrix& spikes, const RegionLayout& layout) {
  if (spikes.channels() != layout.channels) throw ContractError("spike matrix channel count differs from layout");
  WindowCounts w;
  w.channels.resize(spikes.channels());
  for (std::size_t c = 0; c < spikes.channels(); ++c)
    w.channels[c] = static_cast<std::uint32_t>(spikes.spikes.count(c));
  for (std::size_t r = 0; r < 3; ++r)
    for (auto c : layout.decode[r]) w.regions[r] += w.channels[c];
  return w;
}

inline constexpr std::size_t kBaselineWindows = 60;

/// Mean spike count per interaction window for each decode region (and each
/// channel, when channel counts were supplied).
struct BaselineRates {
  std::array<double, 3> regions{};
  std::vector<double> channels;
  std::size_t windows = 0;

  friend bool operator==(const BaselineRates&, const BaselineRates&) = default;
};

/// Averages the most recent (at most 60) windows.
inline BaselineRates update_baseline(std::span<const WindowCounts> windows) {
  if (windows.empty()) throw PreconditionError("baseline needs at least one window");
  const auto used = windows.subspan(windows.size() > kBaselineWindows ? windows.size() - kBaselineWindows : 0);
  BaselineRates b;
  b.windows = used.size();
  const std::size_t nch = used.front().channels.size();
  b.channels.assign(nch, 0.0);
  for (const auto& w : used) {
    for (std::size_t r = 0; r < 3; ++r) b.regions[r] += static_cast<double>(w.regions[r]);
    if (w.channels.size() == nch)
      for (std::size_t c = 0; c < nch; ++c) b.channels[c] += w.channels[c];
  }
  const double n = static_cast<double>(b.windows);
  for (auto& r : b.regions) r /= n;
  for (auto& c : b.channels) c /= n;
  return b;
}

// Region-only convenience form.
inline BaselineRates update_baseline(std::span<const std::array<double, 3>> region_counts) {
  if (region_counts.empty()) throw PreconditionError("baseline needs at least one window");
  const auto used = region_counts.subspan(
      region_counts.size() > kBaselineWindows ? region_counts.size() - kBaselineWindows : 0);
  BaselineRates b;
  b.windows = used.size();
  for (const auto& w : used)
    for (std::size_t r = 0; r < 3; ++r) b.regions[r] += w[r];
  for (auto& r : b.regions) r /= static_cast<double>(b.windows);
  return b;
}

struct DecodeResult {
  env::Action action = env::Action::forward;
  std::array<std::uint64_t, 3> counts{};
  std::array<double, 3> density{};
  bool tie = false;
};

inline constexpr double kDensityEpsilon = 1.0;

/// Relative spike density per region, count / (baseline + epsilon); the
/// action of the densest region wins and exact ties are broken uniformly
/// from `rng` (the stream is only consumed on ties).
inline DecodeResult count_decode(const std::array<std::uint64_t, 3>& counts,
                                 const std::array<double, 3>& baseline, Rng& rng,
                                 double epsilon = kDensityEpsilon) {
  DecodeResult d;
  d.counts = counts;
  double best = -1.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const double denom = baseline[r] + epsilon;
    d.density[r] = denom > 0.0 ? static_cast<double>(counts[r]) / denom : static_cast<double>(counts[r]) * 1e300;
    best = std::max(best, d.density[r]);
  }
  std::array<std::size_t, 3> tied{};
  std::size_t n = 0;
  for (std::size_t r = 0; r < 3; ++r)
    if (d.density[r] == best) tied[n++] = r;
  d.tie = n > 1;
  const std::size_t pick = d.tie ? tied[rng.below(n)] : tied[0];
  d.action = static_cast<env::Action>(pick);
  return d;
}

inline DecodeResult count_decode(const SpikeMatrix& spikes, const RegionLayout& layout,
                                 const BaselineRates& baseline, Rng& rng,
                                 double epsilon = kDensityEpsilon) {
  return count_decode(count_window(spikes, layout).regions, baseline.regions, rng, epsilon);
}

inline void to_json(nlohmann::json& j, const BaselineRates& b) {
  j = nlohmann::json{{"regions", b.regions}, {"channels", b.channels}, {"windows", b.windows}};
}
inline void from_json(const nlohmann::json& j, BaselineRates& b) {
  b.regions = j.at("regions").get<std::array<double, 3>>();
  b.channels = j.value("channels", std::vector<double>{});
  b.windows = j.at("windows").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const DetectorConfig& d) {
  j = nlohmann::json{{"threshold_uv", d.threshold_uv}, {"refractory_ms", d.refractory_ms}};
}
inline void from_json(const nlohmann::json& j, DetectorConfig& d) {
  d.threshold_uv = j.value("threshold_uv", d.threshold_uv);
  d.refractory_ms = j.value("refractory_ms", d.refractory_ms);
}

}  // namespace neuroloop::codec
