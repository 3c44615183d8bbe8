#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/optimizer/grid.hpp"

// Newline-delimited JSON frames, one object per line with a "type" field.
//
//   client -> server   HELLO {client_id, substrate}
//                      NEXT {}
//                      REPORT {trial_id, score, digest, status}   (also asks for more work)
//   server -> client   ASSIGN {trial_id, unit, slot, replicate, params, mode, seeds}
//                      WAIT {retry_ms}
//                      DONE {}
//                      ERR {code, msg}
namespace neuroloop::optimizer::protocol {

inline nlohmann::json hello(const std::string& client_id, const std::string& substrate) {
  return {{"type", "HELLO"}, {"client_id", client_id}, {"substrate", substrate}};
}
inline nlohmann::json next() { return {{"type", "NEXT"}}; }
inline nlohmann::json report(std::uint64_t trial_id, double score, const std::string& digest,
                             const std::string& status = "ok") {
  return {{"type", "REPORT"}, {"trial_id", trial_id}, {"score", score}, {"digest", digest}, {"status", status}};
}
inline nlohmann::json assign(const Assignment& a) {
  nlohmann::json j = a;
  j["type"] = "ASSIGN";
  return j;
}
inline nlohmann::json wait(int retry_ms) { return {{"type", "WAIT"}, {"retry_ms", retry_ms}}; }
inline nlohmann::json done() { return {{"type", "DONE"}}; }
inline nlohmann::json err(const std::string& code, const std::string& msg) {
  return {{"type", "ERR"}, {"code", code}, {"msg", msg}};
}

inline std::string frame(const nlohmann::json& j) { return j.dump() + "\n"; }

// Parses one frame; malformed input raises ProtocolError.
inline nlohmann::json parse(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed frame: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw ProtocolError("frame without a type");
  return j;
}

}  // namespace neuroloop::optimizer::protocol
