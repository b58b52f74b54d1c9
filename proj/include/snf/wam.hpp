#pragma once
// Work assignment: trailing-window load measurement, weighted greedy flowlet
// placement, and launch/retire scaling decisions.

#include <cstdint>
#include <set>
#include <vector>

#include "snf/core.hpp"

namespace snf {

// Trailing-window byte counters: fixed-width buckets, fixed window length.
// record() may only move forward in time relative to queries.
class LoadTracker {
 public:
  LoadTracker(Us bucket_width_us, std::uint32_t bucket_count);

  void record(Us t, std::uint64_t bytes);

  // Bytes in the window (now - width*count, now], bucket granular.
  std::uint64_t window_bytes(Us now) const;

  // window_bytes * 8 / window duration, in bits per second.
  double load_bps(Us now) const;

  Us window_us() const { return width_ * count_; }

 private:
  Us width_;
  std::uint32_t count_;
  struct Slot {
    std::uint64_t bucket_idx = UINT64_MAX;  // absolute index; stale slots ignored
    std::uint64_t bytes = 0;
  };
  std::vector<Slot> slots_;
};

// Controller-side view of one compute unit when scoring a placement.
struct UnitView {
  std::uint32_t unit = 0;
  double capacity_bps = 0;
  double measured_load_bps = 0;  // trailing-window drain rate (scoring)
  double committed_bps = 0;      // sum of live flowlet estimates (feasibility)
};

struct ScaleAction {
  enum class Kind : std::uint8_t { None, Launch, Retire } kind = Kind::None;
  std::uint32_t launch_count = 0;
  std::uint32_t retire_unit = 0;
};

struct AssignResult {
  std::uint32_t unit = 0;  // chosen or newly launched unit id
  ScaleAction action;      // Launch(1) when no candidate could host the flowlet
  double score = 0;        // winning score (0 for a fresh launch)
  bool launched = false;
};

// Weighted greedy placement. Feasible units satisfy
//   committed + estimate <= capacity;
// among them the highest score
//   S = measured/capacity + alpha * (1 if unit holds the flow's state else 0)
// wins, ties broken by smallest unit id. With no feasible unit the result is a
// Launch(1) of `next_unit_id`. `units` must be sorted by ascending unit id.
AssignResult assign_flowlet(double estimate_bps, const std::vector<UnitView>& units,
                            const std::set<std::uint32_t>& state_holders,
                            const Config& cfg, std::uint32_t next_unit_id);

// Inputs to the periodic scaling sweep.
struct UnitActivity {
  std::uint32_t unit = 0;
  double utilization = 0;  // measured/capacity
  Us last_traffic_ts = 0;
  std::uint64_t live_flowlets = 0;
};

// Launch(1) when every unit is above the scale-up threshold; otherwise Retire
// of the lowest-id unit idle past the retire horizon with no live flowlets;
// otherwise None. An empty unit set yields None.
ScaleAction scale_decision(const std::vector<UnitActivity>& units, Us now,
                           const Config& cfg);

}  // namespace snf
