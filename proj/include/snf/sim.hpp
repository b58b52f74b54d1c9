#pragma once
// Deterministic discrete-event engine. Events fire in (time, insertion seq)
// order, so equal-time events run exactly in the order they were scheduled.

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "snf/core.hpp"

namespace snf {

class EventQueue {
 public:
  using Fn = std::function<void()>;

  // Schedules fn at absolute time `at` (must be >= now). Returns the event seq.
  std::uint64_t schedule(Us at, Fn fn);

  Us now() const { return now_; }
  bool empty() const { return heap_.empty(); }
  std::size_t pending() const { return heap_.size(); }

  // Runs a single event; precondition: !empty().
  void step();

  // Drains the queue; `limit` guards against runaway self-arming timers.
  // Returns the number of events run.
  std::uint64_t run(std::uint64_t limit = UINT64_MAX);

 private:
  struct Ev {
    Us at;
    std::uint64_t seq;
    Fn fn;
  };
  struct Later {
    bool operator()(const Ev& a, const Ev& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<Ev, std::vector<Ev>, Later> heap_;
  Us now_ = 0;
  std::uint64_t next_seq_ = 0;
};

}  // namespace snf
