#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "neuroloop/core/hash.hpp"
#include "neuroloop/loop/trial.hpp"
#include "neuroloop/optimizer/study.hpp"

namespace neuroloop::optimizer {

struct RunOutcome {
  double score = 0.0;
  std::string digest;
};

// Evaluates one assignment. Used by network clients and the local pool alike.
using Runner = std::function<RunOutcome(const Assignment&)>;

inline std::string result_digest(const loop::TrialResult& r) {
  std::ostringstream os;
  loop::write_trial_jsonl(os, r);
  return digest_hex(os.str());
}

/// Runner that plays the assignment as a closed-loop trial on top of `base`.
inline Runner trial_runner(loop::TrialConfig base) {
  return [base = std::move(base)](const Assignment& a) {
    const auto result = loop::run_trial(apply_assignment(base, a));
    return RunOutcome{loop::score(result), result_digest(result)};
  };
}

/// In-process sweep: `workers` threads drain the study through the same
/// coordinator a server would use. The first runner failure stops the pool
/// and is rethrown once all workers have returned.
inline std::vector<AggregateScore> run_local(StudyCoordinator& coord, std::size_t workers, const Runner& runner) {
  if (workers < 1) throw ConfigError("worker count must be at least 1");
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    try {
      while (!abort) {
        const auto w = coord.next_any();
        if (w.kind == NextWork::Kind::done) return;
        if (w.kind == NextWork::Kind::wait) {
          coord.wait_for_change(std::chrono::milliseconds(50));
          continue;
        }
        const auto out = runner(w.assignment);
        coord.report_local(w.assignment, out.score, out.digest);
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
      abort = true;
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return coord.aggregates();
}

}  // namespace neuroloop::optimizer
