#pragma once

#include <algorithm>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/substrate/substrate.hpp"

namespace neuroloop::substrate {

// Replay recording (JSONL):
//   {"format":"neuroloop-replay","channels":64}                  optional header
//   {"duration_ms":2000,"spikes":[[channel,t_ms],...]}          one per segment
struct ReplayRecording {
  std::size_t channels = 0;  // 0 when the file has no header
  struct Segment {
    std::uint64_t duration_ms = 0;
    std::vector<std::pair<std::size_t, std::uint64_t>> spikes;
  };
  std::vector<Segment> segments;

  std::uint64_t duration_ms() const {
    std::uint64_t d = 0;
    for (const auto& s : segments) d += s.duration_ms;
    return d;
  }
};

inline constexpr const char* kReplayFormat = "neuroloop-replay";

inline ReplayRecording parse_replay(std::istream& in, const std::string& name = "replay") {
  ReplayRecording rec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(name + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    try {
      if (j.contains("format")) {
        if (j.at("format") != kReplayFormat) throw IoError(name + ": unknown replay format");
        rec.channels = j.at("channels").get<std::size_t>();
        continue;
      }
      ReplayRecording::Segment seg;
      seg.duration_ms = j.at("duration_ms").get<std::uint64_t>();
      for (const auto& s : j.at("spikes")) {
        const auto c = s.at(0).get<std::size_t>();
        const auto t = s.at(1).get<std::uint64_t>();
        if (t >= seg.duration_ms) throw IoError(name + ":" + std::to_string(lineno) + ": spike time outside segment");
        seg.spikes.emplace_back(c, t);
      }
      rec.segments.push_back(std::move(seg));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(name + ":" + std::to_string(lineno) + ": malformed segment: " + e.what());
    }
  }
  if (rec.segments.empty() || rec.duration_ms() == 0) throw IoError(name + ": replay file has no recorded time");
  return rec;
}

inline ReplayRecording load_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open replay file '" + path + "'");
  return parse_replay(in, path);
}

inline void write_replay_header(std::ostream& os, std::size_t channels) {
  os << nlohmann::json{{"format", kReplayFormat}, {"channels", channels}}.dump() << '\n';
}

inline void write_replay_segment(std::ostream& os, const SpikeMatrix& m) {
  nlohmann::json spikes = nlohmann::json::array();
  for (std::size_t c = 0; c < m.channels(); ++c)
    for (auto b : m.spikes.events(c))
      spikes.push_back({c, static_cast<std::uint64_t>(b * m.spikes.bin_ms())});
  os << nlohmann::json{{"duration_ms", static_cast<std::uint64_t>(m.spikes.duration_ms())}, {"spikes", spikes}}.dump()
     << '\n';
}

/// Culture-baseline control: plays a recorded spike stream back in order,
/// wrapping at the end. Stimulation is ignored; rest advances the cursor.
class ReplaySubstrate final : public Substrate {
 public:
  ReplaySubstrate(std::size_t channels, const ReplayRecording& rec) : channels_(channels), events_(channels) {
    if (rec.channels != 0 && rec.channels != channels)
      throw IoError("replay recording has " + std::to_string(rec.channels) + " channels, layout has " +
                    std::to_string(channels));
    std::uint64_t offset = 0;
    for (const auto& seg : rec.segments) {
      for (auto [c, t] : seg.spikes) {
        if (c >= channels) throw IoError("replay spike on channel " + std::to_string(c) + " outside layout");
        events_[c].push_back(offset + t);
      }
      offset += seg.duration_ms;
    }
    length_ = offset;
    for (auto& e : events_) {
      std::sort(e.begin(), e.end());
      e.erase(std::unique(e.begin(), e.end()), e.end());
    }
  }

  Capabilities capabilities() const override { return {true, false}; }
  std::size_t channels() const override { return channels_; }
  std::uint64_t clock_ms() const override { return clock_; }

  void rest(std::uint64_t duration_ms) override {
    clock_ += duration_ms;
    cursor_ = (cursor_ + duration_ms) % length_;
  }

 protected:
  Recording do_stimulate(const StimulationMatrix&, std::uint64_t record_ms) override {
    SpikeMatrix out(channels_, record_ms);
    std::uint64_t written = 0;
    while (written < record_ms) {
      const std::uint64_t chunk = std::min(record_ms - written, length_ - cursor_);
      for (std::size_t c = 0; c < channels_; ++c) {
        const auto& e = events_[c];
        auto it = std::lower_bound(e.begin(), e.end(), cursor_);
        for (; it != e.end() && *it < cursor_ + chunk; ++it) out.spikes.set(c, written + (*it - cursor_));
      }
      written += chunk;
      cursor_ = (cursor_ + chunk) % length_;
    }
    clock_ += record_ms;
    return out;
  }

 private:
  std::size_t channels_;
  std::vector<std::vector<std::uint64_t>> events_;
  std::uint64_t length_ = 0;
  std::uint64_t cursor_ = 0;
  std::uint64_t clock_ = 0;
};

}  // namespace neuroloop::substrate
