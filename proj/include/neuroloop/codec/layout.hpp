#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"

namespace neuroloop::codec {

/// Electrode regions on the virtual MEA. Channels are numbered row-major on
/// a `grid_cols`-wide grid. decode[r] holds the channels voting for action r
/// (forward, left, right).
struct RegionLayout {
  std::size_t channels = 64;
  std::size_t grid_cols = 8;
  std::vector<std::size_t> encoding;
  std::array<std::vector<std::size_t>, 3> decode;

  std::size_t grid_rows() const { return (channels + grid_cols - 1) / grid_cols; }

  void validate() const {
    if (channels == 0 || grid_cols == 0) throw ConfigError("layout needs channels and grid columns");
    if (encoding.empty()) throw ConfigError("encoding region is empty");
    std::set<std::size_t> seen;
    auto claim = [&](const std::vector<std::size_t>& region, const char* name) {
      for (auto c : region) {
        if (c >= channels) throw ConfigError(std::string(name) + " region references channel out of range");
        if (!seen.insert(c).second) throw ConfigError("layout regions overlap on channel " + std::to_string(c));
      }
    };
    claim(encoding, "encoding");
    for (const auto& d : decode) {
      if (d.empty()) throw ConfigError("decode region is empty");
      if (d.size() != decode[0].size()) throw ConfigError("decode regions must have equal size");
      claim(d, "decode");
    }
  }

  bool is_encoding(std::size_t c) const {
    return std::find(encoding.begin(), encoding.end(), c) != encoding.end();
  }

  // Union of encoding and decode channels, sorted.
  std::vector<std::size_t> active_channels() const {
    std::vector<std::size_t> out = encoding;
    for (const auto& d : decode) out.insert(out.end(), d.begin(), d.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  friend bool operator==(const RegionLayout&, const RegionLayout&) = default;
};

namespace detail {
inline std::vector<std::size_t> block(std::size_t cols, std::size_t r0, std::size_t r1, std::size_t c0,
                                      std::size_t c1) {
  std::vector<std::size_t> out;
  for (std::size_t r = r0; r <= r1; ++r)
    for (std::size_t c = c0; c <= c1; ++c) out.push_back(r * cols + c);
  return out;
}
}  // namespace detail

// Central 4x4 encoding block. The surrounding two-electrode ring is cut into
// four rotationally congruent 12-electrode arms; three of them are decode
// regions, so all three sit at the same distance from the encoder.
inline RegionLayout centered_layout() {
  RegionLayout l;
  l.encoding = detail::block(8, 2, 5, 2, 5);
  l.decode[0] = detail::block(8, 0, 1, 0, 5);  // forward: top arm
  l.decode[1] = detail::block(8, 2, 7, 0, 1);  // left arm
  l.decode[2] = detail::block(8, 0, 5, 6, 7);  // right arm
  return l;
}

// Encoding along one edge, decoding on the far side of the chip.
inline RegionLayout opposed_layout() {
  RegionLayout l;
  l.encoding = detail::block(8, 0, 1, 0, 7);
  l.decode[0] = detail::block(8, 2, 7, 3, 4);  // forward
  l.decode[1] = detail::block(8, 4, 7, 0, 2);  // left
  l.decode[2] = detail::block(8, 4, 7, 5, 7);  // right
  return l;
}

inline RegionLayout layout_by_name(const std::string& name) {
  if (name == "centered" || name == "stage2") return centered_layout();
  if (name == "opposed" || name == "stage1") return opposed_layout();
  throw ConfigError("unknown layout '" + name + "' (expected centered|opposed)");
}

inline void to_json(nlohmann::json& j, const RegionLayout& l) {
  j = nlohmann::json{{"channels", l.channels},
                     {"grid_cols", l.grid_cols},
                     {"encoding", l.encoding},
                     {"decode", l.decode}};
}

inline void from_json(const nlohmann::json& j, RegionLayout& l) {
  if (j.is_string()) {
    l = layout_by_name(j.get<std::string>());
    return;
  }
  l.channels = j.value("channels", std::size_t{64});
  l.grid_cols = j.value("grid_cols", std::size_t{8});
  l.encoding = j.at("encoding").get<std::vector<std::size_t>>();
  l.decode = j.at("decode").get<std::array<std::vector<std::size_t>, 3>>();
}

}  // namespace neuroloop::codec
