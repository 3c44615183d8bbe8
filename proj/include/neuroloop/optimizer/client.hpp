#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <thread>

#include "neuroloop/core/log.hpp"
#include "neuroloop/optimizer/net.hpp"
#include "neuroloop/optimizer/protocol.hpp"
#include "neuroloop/optimizer/runner.hpp"

namespace neuroloop::optimizer {

struct ClientOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string client_id;
  std::string substrate = "random";
  int max_retries = 10;       // consecutive failed connection attempts
  int retry_delay_ms = 200;
};

struct ClientStats {
  std::size_t trials = 0;
  std::size_t reconnects = 0;
};

/// Requests assignments until the server says DONE. Connection loss is
/// retried up to `max_retries` times in a row; a finished but unacknowledged
/// report is resent after reconnecting.
inline ClientStats client_run(const ClientOptions& opt, const Runner& runner) {
  if (opt.client_id.empty()) throw ConfigError("client_id must not be empty");
  ClientStats stats;
  std::optional<nlohmann::json> pending;
  int failures = 0;
  bool first = true;
  for (;;) {
    try {
      auto s = net::connect_tcp(opt.host, opt.port);
      if (!first) ++stats.reconnects;
      first = false;
      net::LineReader reader(s);
      net::send_all(s, protocol::frame(protocol::hello(opt.client_id, opt.substrate)));
      net::send_all(s, protocol::frame(pending ? *pending : protocol::next()));
      for (;;) {
        auto line = reader.read_line();
        if (!line) throw IoError("server closed the connection");
        const auto f = protocol::parse(*line);
        failures = 0;
        pending.reset();
        const auto type = f.at("type").get<std::string>();
        if (type == "DONE") return stats;
        if (type == "ERR")
          throw ProtocolError("server error " + f.value("code", std::string{}) + ": " + f.value("msg", std::string{}));
        if (type == "WAIT") {
          std::this_thread::sleep_for(std::chrono::milliseconds(f.value("retry_ms", 50)));
          net::send_all(s, protocol::frame(protocol::next()));
        } else if (type == "ASSIGN") {
          const auto a = f.get<Assignment>();
          try {
            const auto out = runner(a);
            pending = protocol::report(a.trial_id, out.score, out.digest);
            ++stats.trials;
          } catch (const std::exception& e) {
            log::warn("client ", opt.client_id, ": trial ", a.trial_id, " failed: ", e.what());
            pending = protocol::report(a.trial_id, 0.0, e.what(), "failed");
          }
          net::send_all(s, protocol::frame(*pending));
        } else {
          throw ProtocolError("unexpected frame type '" + type + "'");
        }
      }
    } catch (const ProtocolError&) {
      throw;
    } catch (const IoError& e) {
      if (++failures > opt.max_retries)
        throw IoError("client " + opt.client_id + ": giving up after " + std::to_string(opt.max_retries) +
                      " retries: " + e.what());
      log::info("client ", opt.client_id, ": ", e.what(), "; retrying");
      std::this_thread::sleep_for(std::chrono::milliseconds(opt.retry_delay_ms));
    }
  }
}

}  // namespace neuroloop::optimizer
