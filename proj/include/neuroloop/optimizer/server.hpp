#pragma once

#include <atomic>
#include <chrono>
#include <list>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "neuroloop/core/log.hpp"
#include "neuroloop/optimizer/net.hpp"
#include "neuroloop/optimizer/protocol.hpp"
#include "neuroloop/optimizer/study.hpp"

namespace neuroloop::optimizer {

/// TCP front end of a study: one thread per client session, all state
/// changes go through the coordinator.
class StudyServer {
 public:
  StudyServer(StudyCoordinator& coord, const std::string& host, std::uint16_t port, int wait_retry_ms = 50)
      : coord_(coord), listener_(net::listen_tcp(host, port)), wait_retry_ms_(wait_retry_ms) {
    port_ = net::bound_port(listener_);
  }

  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;
  ~StudyServer() { stop(); }

  std::uint16_t port() const { return port_; }

  void start() {
    if (accept_thread_.joinable()) return;
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  /// Serves until every unit is aggregated, then gives connected clients up
  /// to `linger` to collect their DONE frame.
  std::vector<AggregateScore> run(std::chrono::milliseconds linger = std::chrono::milliseconds(2000)) {
    start();
    coord_.wait_complete();
    const auto until = std::chrono::steady_clock::now() + linger;
    while (std::chrono::steady_clock::now() < until && session_count() > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    stop();
    return coord_.aggregates();
  }

  void stop() {
    if (stopping_.exchange(true)) {
      join_all();
      return;
    }
    listener_.shutdown();
    shutdown_sessions();
    join_all();
  }

  // Abrupt termination: the log stops mid-study and every connection drops.
  void crash() {
    coord_.halt();
    stop();
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return clients_.size();
  }

 private:
  struct Session {
    net::Socket socket;
    std::thread thread;
  };

  void accept_loop() {
    while (!stopping_) {
      auto s = net::accept_for(listener_, 100);
      if (!s) continue;
      if (!s->valid()) break;
      std::lock_guard lock(mu_);
      if (stopping_) break;
      auto& session = sessions_.emplace_back();
      session.socket = std::move(*s);
      session.thread = std::thread([this, &session] { serve_session(session.socket); });
    }
  }

  void shutdown_sessions() {
    std::lock_guard lock(mu_);
    for (auto& s : sessions_) s.socket.shutdown();
  }

  void join_all() {
    if (accept_thread_.joinable()) accept_thread_.join();
    std::list<Session> sessions;
    {
      std::lock_guard lock(mu_);
      sessions.swap(sessions_);
    }
    for (auto& s : sessions)
      if (s.thread.joinable()) s.thread.join();
  }

  void send(const net::Socket& s, const nlohmann::json& j) { net::send_all(s, protocol::frame(j)); }

  void send_work(const net::Socket& s, const std::string& client_id) {
    const auto w = coord_.next(client_id);
    switch (w.kind) {
      case NextWork::Kind::assign:
        send(s, protocol::assign(w.assignment));
        break;
      case NextWork::Kind::wait:
        send(s, protocol::wait(wait_retry_ms_));
        break;
      case NextWork::Kind::done:
        send(s, protocol::done());
        break;
    }
  }

  void serve_session(const net::Socket& s) {
    std::string client_id;
    try {
      net::LineReader reader(s);
      auto first = reader.read_line();
      if (!first) return;
      const auto hello = protocol::parse(*first);
      if (hello.at("type") != "HELLO" || !hello.contains("client_id") || !hello.at("client_id").is_string() ||
          hello.at("client_id").get<std::string>().empty())
        throw ProtocolError("expected HELLO with a client_id");
      {
        std::lock_guard lock(mu_);
        const auto id = hello.at("client_id").get<std::string>();
        if (!clients_.insert(id).second) {
          send(s, protocol::err("duplicate_client", "client_id '" + id + "' is already connected"));
          return;
        }
        client_id = id;
      }
      log::info("client ", client_id, " connected (substrate ", hello.value("substrate", std::string("?")), ")");
      while (auto line = reader.read_line()) {
        const auto frame = protocol::parse(*line);
        const auto type = frame.at("type").get<std::string>();
        if (type == "NEXT") {
          send_work(s, client_id);
        } else if (type == "REPORT") {
          if (!frame.contains("trial_id") || !frame.contains("score") || !frame.at("score").is_number())
            throw ProtocolError("REPORT needs trial_id and a numeric score");
          coord_.report(client_id, frame.at("trial_id").get<std::uint64_t>(), frame.at("score").get<double>(),
                        frame.value("digest", std::string{}), frame.value("status", std::string{"ok"}));
          send_work(s, client_id);
        } else {
          throw ProtocolError("unexpected frame type '" + type + "'");
        }
      }
    } catch (const ProtocolError& e) {
      try {
        send(s, protocol::err("protocol", e.what()));
      } catch (const Error&) {
      }
    } catch (const nlohmann::json::exception& e) {
      try {
        send(s, protocol::err("protocol", e.what()));
      } catch (const Error&) {
      }
    } catch (const Error& e) {
      log::debug("session ", client_id, " ended: ", e.what());
    }
    std::lock_guard lock(mu_);
    if (!client_id.empty()) clients_.erase(client_id);
    s.shutdown();
  }

  StudyCoordinator& coord_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  int wait_retry_ms_;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  mutable std::mutex mu_;
  std::list<Session> sessions_;
  std::set<std::string> clients_;
};

}  // namespace neuroloop::optimizer
