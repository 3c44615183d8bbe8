#pragma once

#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "neuroloop/substrate/oracle.hpp"
#include "neuroloop/substrate/random.hpp"
#include "neuroloop/substrate/replay.hpp"
#include "neuroloop/substrate/spiking.hpp"

namespace neuroloop::substrate {

enum class Kind : std::uint8_t { spiking, random, replay, oracle };

inline std::string_view to_string(Kind k) {
  static constexpr std::string_view names[] = {"spiking", "random", "replay", "oracle"};
  return names[static_cast<int>(k)];
}

inline Kind kind_from_string(std::string_view s) {
  if (s == "spiking") return Kind::spiking;
  if (s == "random") return Kind::random;
  if (s == "replay") return Kind::replay;
  if (s == "oracle") return Kind::oracle;
  throw ConfigError("unknown substrate kind '" + std::string(s) + "'");
}

struct SubstrateKind {
  Kind kind = Kind::random;
  SpikingConfig spiking;
  RandomConfig random;
  std::string replay_path;
  OracleConfig oracle;

  void validate() const {
    switch (kind) {
      case Kind::spiking:
        spiking.validate();
        break;
      case Kind::random:
        if (!(random.rate_hz >= 0)) throw ConfigError("random substrate rate must be non-negative");
        break;
      case Kind::replay:
        if (replay_path.empty()) throw ConfigError("replay substrate needs a recording file");
        break;
      case Kind::oracle:
        if (oracle.planted.empty() && !oracle.quality)
          throw ConfigError("oracle substrate needs planted parameter values");
        break;
    }
  }
};

// `evaluated` is the encoding in force for the trial; the oracle kind scores it.
inline std::unique_ptr<Substrate> make_substrate(const SubstrateKind& k, const codec::RegionLayout& layout,
                                                 std::uint64_t seed, const codec::EncodingParams* evaluated = nullptr) {
  k.validate();
  switch (k.kind) {
    case Kind::spiking:
      return std::make_unique<SpikingSubstrate>(layout, k.spiking, seed);
    case Kind::random:
      return std::make_unique<RandomSubstrate>(layout.channels, k.random, seed);
    case Kind::replay:
      return std::make_unique<ReplaySubstrate>(layout.channels, load_replay(k.replay_path));
    case Kind::oracle: {
      OracleConfig cfg = k.oracle;
      if (evaluated) cfg.evaluated = *evaluated;
      return std::make_unique<OracleSubstrate>(layout, std::move(cfg), seed);
    }
  }
  throw ConfigError("unknown substrate kind");
}

inline void to_json(nlohmann::json& j, const SubstrateKind& k) {
  j = nlohmann::json{{"kind", to_string(k.kind)}};
  switch (k.kind) {
    case Kind::spiking:
      j["spiking"] = k.spiking;
      break;
    case Kind::random:
      j["random"] = k.random;
      break;
    case Kind::replay:
      j["replay_path"] = k.replay_path;
      break;
    case Kind::oracle:
      j["oracle"] = k.oracle;
      break;
  }
}

inline void from_json(const nlohmann::json& j, SubstrateKind& k) {
  if (j.is_string()) {
    k.kind = kind_from_string(j.get<std::string>());
    return;
  }
  k.kind = kind_from_string(j.value("kind", std::string("random")));
  if (j.contains("spiking")) k.spiking = j.at("spiking").get<SpikingConfig>();
  if (j.contains("random")) k.random = j.at("random").get<RandomConfig>();
  if (j.contains("replay_path")) k.replay_path = j.at("replay_path").get<std::string>();
  if (j.contains("oracle")) k.oracle = j.at("oracle").get<OracleConfig>();
}

}  // namespace neuroloop::substrate
