#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/core/hash.hpp"
#include "neuroloop/core/log.hpp"
#include "neuroloop/optimizer/grid.hpp"
#include "neuroloop/optimizer/select.hpp"

namespace neuroloop::optimizer {

struct StudySpec {
  std::string label = "study";
  std::vector<Unit> units;
  std::size_t quorum = kDefaultQuorum;
  std::uint64_t seed = 0;
  loop::Mode mode = loop::Mode::A;
  double timeout_s = 600.0;  // lease timeout
  nlohmann::json config;     // base trial config, recorded for provenance only

  // Identifies the schedule, so a log is only resumed by the study that wrote it.
  std::string fingerprint() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& u : units) j.push_back({u.id, u.combo, u.replicate, u.params});
    return digest_hex(nlohmann::json{{"units", j}, {"quorum", quorum}, {"seed", seed}, {"mode", loop::to_string(mode)}}
                          .dump());
  }
};

// Default lease timeout: ten times the virtual duration of one trial.
inline double default_timeout_s(const loop::TrialConfig& base, const std::vector<Unit>& units) {
  std::uint64_t longest = 0;
  for (const auto& u : units) {
    auto cfg = base;
    cfg.encoding = codec::apply_params(cfg.encoding, u.params);
    longest = std::max(longest, loop::expected_virtual_ms(cfg));
  }
  return 10.0 * static_cast<double>(longest) / 1000.0;
}

struct NextWork {
  enum class Kind { assign, wait, done } kind = Kind::wait;
  Assignment assignment;
};

enum class ReportOutcome { accepted, duplicate, rejected };

/// Serializes all study-state mutations and keeps the append-only log.
///
/// Every (unit, slot) pair is evaluated by one client and a unit is
/// aggregated once all of its `quorum` slots hold a report from distinct
/// clients. Leases expire after the timeout and the slot is reissued with
/// the same seeds.
class StudyCoordinator {
 public:
  using Clock = std::chrono::steady_clock;

  StudyCoordinator(StudySpec spec, std::string log_path) : spec_(std::move(spec)), log_path_(std::move(log_path)) {
    if (spec_.units.empty()) throw PreconditionError("study schedule is empty");
    if (spec_.quorum < 1) throw ConfigError("quorum must be at least 1");
    for (std::size_t i = 0; i < spec_.units.size(); ++i)
      if (spec_.units[i].id != i) throw ContractError("unit ids must equal their dispatch index");
    units_.resize(spec_.units.size());
    for (auto& u : units_) u.slots.resize(spec_.quorum);
    open_log();
  }

  StudyCoordinator(const StudyCoordinator&) = delete;
  StudyCoordinator& operator=(const StudyCoordinator&) = delete;

  const StudySpec& spec() const { return spec_; }

  NextWork next(const std::string& client_id) {
    std::lock_guard lock(mu_);
    return next_locked(client_id, false);
  }

  // Local-pool form: any free slot, recorded under a per-slot client id.
  NextWork next_any() {
    std::lock_guard lock(mu_);
    return next_locked({}, true);
  }

  static std::string local_client_id(std::size_t slot) { return "local-" + std::to_string(slot); }

  ReportOutcome report(const std::string& client_id, std::uint64_t trial_id, double score,
                       const std::string& digest, const std::string& status = "ok") {
    std::unique_lock lock(mu_);
    if (halted_) throw IoError("study coordinator halted");
    const std::size_t unit = trial_id / spec_.quorum;
    const std::size_t slot = trial_id % spec_.quorum;
    if (unit >= units_.size()) throw ProtocolError("unknown trial_id " + std::to_string(trial_id));
    auto& u = units_[unit];
    auto& s = u.slots[slot];
    if (s.state == SlotState::done || u.aggregated) return ReportOutcome::duplicate;
    for (const auto& other : u.slots)
      if (&other != &s && other.state == SlotState::done && other.client == client_id)
        return ReportOutcome::rejected;
    TrialReport r{trial_id, unit, slot, client_id, score, digest, status, spec_.units[unit].params};
    append({{"type", "report"}, {"report", r}});
    apply_report(r);
    if (status == "ok") maybe_aggregate(unit);
    cv_.notify_all();
    return ReportOutcome::accepted;
  }

  // Local-pool form of report.
  void report_local(const Assignment& a, double score, const std::string& digest) {
    report(local_client_id(a.slot), a.trial_id, score, digest);
  }

  // Drops the lease of an assignment so the slot is reissued.
  void release(const std::string& client_id, std::uint64_t trial_id) {
    std::lock_guard lock(mu_);
    const std::size_t unit = trial_id / spec_.quorum;
    if (unit >= units_.size()) return;
    auto& s = units_[unit].slots[trial_id % spec_.quorum];
    if (s.state == SlotState::leased && s.client == client_id) s.state = SlotState::free;
    cv_.notify_all();
  }

  bool complete() const {
    std::lock_guard lock(mu_);
    return aggregated_count_ == units_.size();
  }

  // Blocks until the study completes, something reports, or `max_wait` elapses.
  void wait_for_change(std::chrono::milliseconds max_wait) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, max_wait);
  }

  void wait_complete() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return aggregated_count_ == units_.size() || halted_; });
  }

  // Stops logging immediately (used to simulate a crash).
  void halt() {
    std::lock_guard lock(mu_);
    halted_ = true;
    log_.close();
    cv_.notify_all();
  }

  std::vector<AggregateScore> aggregates() const {
    std::lock_guard lock(mu_);
    std::vector<AggregateScore> out;
    for (const auto& u : units_)
      if (u.aggregated) out.push_back(u.result);
    return out;
  }

  std::size_t report_count() const {
    std::lock_guard lock(mu_);
    return reports_;
  }

  std::size_t resumed_reports() const { return resumed_reports_; }

 private:
  enum class SlotState { free, leased, done };
  struct Slot {
    SlotState state = SlotState::free;
    std::string client;
    Clock::time_point deadline{};
    double score = 0.0;
  };
  struct UnitState {
    std::vector<Slot> slots;
    std::set<std::string> failed_clients;
    bool aggregated = false;
    AggregateScore result;
    std::vector<TrialReport> reports;
  };

  Assignment make_assignment(std::size_t unit, std::size_t slot) const {
    const auto& u = spec_.units[unit];
    return {unit * spec_.quorum + slot, unit, slot, u.replicate, u.params, spec_.mode,
            assignment_seeds(spec_.seed, unit, slot)};
  }

  NextWork next_locked(const std::string& client_id, bool any) {
    if (halted_) throw IoError("study coordinator halted");
    if (aggregated_count_ == units_.size()) return {NextWork::Kind::done, {}};
    const auto now = Clock::now();
    const auto lease_for = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(spec_.timeout_s));
    for (std::size_t ui = first_open_; ui < units_.size(); ++ui) {
      auto& u = units_[ui];
      if (u.aggregated) continue;
      for (auto& s : u.slots)
        if (s.state == SlotState::leased && s.deadline <= now) {
          log::info("lease on unit ", ui, " held by ", s.client, " expired; reissuing");
          s.state = SlotState::free;
        }
    }
    if (!any) {
      // A reconnecting client gets its outstanding lease back.
      for (std::size_t ui = first_open_; ui < units_.size(); ++ui)
        for (std::size_t si = 0; si < spec_.quorum; ++si) {
          auto& s = units_[ui].slots[si];
          if (s.state == SlotState::leased && s.client == client_id) {
            s.deadline = now + lease_for;
            return {NextWork::Kind::assign, make_assignment(ui, si)};
          }
        }
    }
    for (std::size_t ui = first_open_; ui < units_.size(); ++ui) {
      auto& u = units_[ui];
      if (u.aggregated) continue;
      if (!any) {
        if (u.failed_clients.contains(client_id)) continue;
        bool involved = false;
        for (const auto& s : u.slots)
          if (s.state != SlotState::free && s.client == client_id) involved = true;
        if (involved) continue;
      }
      for (std::size_t si = 0; si < spec_.quorum; ++si) {
        auto& s = u.slots[si];
        if (s.state != SlotState::free) continue;
        s.state = SlotState::leased;
        s.client = any ? local_client_id(si) : client_id;
        s.deadline = now + lease_for;
        return {NextWork::Kind::assign, make_assignment(ui, si)};
      }
    }
    return {NextWork::Kind::wait, {}};
  }

  void apply_report(const TrialReport& r) {
    auto& u = units_[r.unit];
    auto& s = u.slots[r.slot];
    ++reports_;
    if (r.status != "ok") {
      u.failed_clients.insert(r.client_id);
      if (s.state == SlotState::leased && s.client == r.client_id) s.state = SlotState::free;
      return;
    }
    s.state = SlotState::done;
    s.client = r.client_id;
    s.score = r.score;
    u.reports.push_back(r);
  }

  void maybe_aggregate(std::size_t unit) {
    auto& u = units_[unit];
    if (u.aggregated) return;
    for (const auto& s : u.slots)
      if (s.state != SlotState::done) return;
    AggregateScore a = aggregate(u.reports, spec_.quorum);
    a.unit = unit;
    a.combo = spec_.units[unit].combo;
    a.replicate = spec_.units[unit].replicate;
    a.params = spec_.units[unit].params;
    append({{"type", "aggregate"}, {"aggregate", a}});
    mark_aggregated(unit, std::move(a));
  }

  void mark_aggregated(std::size_t unit, AggregateScore a) {
    auto& u = units_[unit];
    u.aggregated = true;
    u.result = std::move(a);
    ++aggregated_count_;
    while (first_open_ < units_.size() && units_[first_open_].aggregated) ++first_open_;
  }

  void append(const nlohmann::json& j) {
    if (halted_) throw IoError("study coordinator halted");
    log_ << j.dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("cannot append to study log '" + log_path_ + "'");
  }

  nlohmann::json header() const {
    return {{"type", "study"},
            {"label", spec_.label},
            {"units", spec_.units.size()},
            {"quorum", spec_.quorum},
            {"seed", spec_.seed},
            {"mode", loop::to_string(spec_.mode)},
            {"fingerprint", spec_.fingerprint()},
            {"config", spec_.config}};
  }

  void open_log() {
    namespace fs = std::filesystem;
    std::error_code ec;
    const bool existing = fs::exists(log_path_, ec) && fs::file_size(log_path_, ec) > 0;
    if (existing) replay_log();
    log_.open(log_path_, std::ios::app);
    if (!log_) throw IoError("cannot open study log '" + log_path_ + "'");
    if (!existing) {
      append(header());
    } else {
      // Units whose quorum was reached just before a crash still need their aggregate line.
      for (std::size_t ui = 0; ui < units_.size(); ++ui) maybe_aggregate(ui);
    }
  }

  void replay_log() {
    std::ifstream in(log_path_, std::ios::binary);
    if (!in) throw IoError("cannot read study log '" + log_path_ + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::size_t pos = 0, good_end = 0, lineno = 0;
    bool saw_header = false;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // torn final line
      const std::string line = text.substr(pos, nl - pos);
      ++lineno;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        // A corrupt line is only tolerated as the last one.
        if (text.find('\n', nl + 1) != std::string::npos)
          throw IoError(log_path_ + ":" + std::to_string(lineno) + ": corrupt study log line");
        break;
      }
      try {
        const auto type = j.at("type").get<std::string>();
        if (type == "study") {
          if (j.at("fingerprint").get<std::string>() != spec_.fingerprint())
            throw ConfigError("study log '" + log_path_ + "' belongs to a different study");
          saw_header = true;
        } else if (type == "report") {
          auto r = j.at("report").get<TrialReport>();
          if (r.unit >= units_.size() || r.slot >= spec_.quorum)
            throw IoError(log_path_ + ":" + std::to_string(lineno) + ": report outside the schedule");
          if (units_[r.unit].slots[r.slot].state != SlotState::done) apply_report(r);
          ++resumed_reports_;
        } else if (type == "aggregate") {
          auto a = j.at("aggregate").get<AggregateScore>();
          if (a.unit >= units_.size())
            throw IoError(log_path_ + ":" + std::to_string(lineno) + ": aggregate outside the schedule");
          if (!units_[a.unit].aggregated) mark_aggregated(a.unit, std::move(a));
        }
      } catch (const nlohmann::json::exception& e) {
        throw IoError(log_path_ + ":" + std::to_string(lineno) + ": " + e.what());
      }
      pos = nl + 1;
      good_end = pos;
    }
    if (!saw_header) throw IoError("study log '" + log_path_ + "' has no study header");
    if (good_end < text.size()) {
      log::warn("study log '", log_path_, "': dropping ", text.size() - good_end, " bytes of a torn final line");
      std::filesystem::resize_file(log_path_, good_end);
    }
    log::info("resumed study from '", log_path_, "': ", resumed_reports_, " reports, ", aggregated_count_,
              " aggregates");
  }

  StudySpec spec_;
  std::string log_path_;
  std::ofstream log_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<UnitState> units_;
  std::size_t aggregated_count_ = 0;
  std::size_t first_open_ = 0;
  std::size_t reports_ = 0;
  std::size_t resumed_reports_ = 0;
  bool halted_ = false;
};

/// Reads the aggregates recorded in a study log.
inline std::vector<AggregateScore> read_aggregates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open study log '" + path + "'");
  std::vector<AggregateScore> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;  // torn line
    }
    if (j.value("type", std::string{}) == "aggregate") out.push_back(j.at("aggregate").get<AggregateScore>());
  }
  return out;
}

}  // namespace neuroloop::optimizer
