#pragma once
// Work granularization: splits flows into flowlets on inactivity gaps and a
// per-flowlet byte budget, and estimates per-flowlet demand for assignment.

#include <cstdint>
#include <map>
#include <optional>

#include "snf/core.hpp"

namespace snf {

enum class StartReason : std::uint8_t { FirstOfFlow, Timeout, SizeFork };

const char* to_string(StartReason r);

struct FlowletState {
  std::uint64_t flowlet_id = 0;
  std::uint64_t bytes_so_far = 0;  // includes the first packet
  Us first_pkt_ts = 0;
  Us last_pkt_ts = 0;
  UnitId assigned_unit;
  StartReason start_reason = StartReason::FirstOfFlow;
  double estimate_bps = 0;  // demand committed against the unit at assignment
};

// Per-flow estimator memory, updated when a flowlet closes.
struct FlowStats {
  double last_measured_bps = 0;
  double ewma_estimate_bps = 0;
  std::uint64_t completed_flowlets = 0;
};

// Average measured rate across every completed flowlet of every flow.
struct GlobalRateStats {
  double rate_sum_bps = 0;
  std::uint64_t completed = 0;
  double mean_or(double fallback) const {
    return completed ? rate_sum_bps / static_cast<double>(completed) : fallback;
  }
};

struct FlowletDecision {
  bool is_new = false;
  StartReason reason = StartReason::FirstOfFlow;  // meaningful when is_new
  std::uint64_t flowlet_id = 0;                   // current flowlet when !is_new
};

// bytes * 8 / duration, duration clamped to >= 1us.
double measured_rate_bps(std::uint64_t bytes, Us active_duration_us);

// EWMA step: delta * measured + (1 - delta) * previous estimate.
double ewma_update(double prev_estimate_bps, double measured_bps, double delta);

// Flowlet and estimator bookkeeping for all flows of one controller.
class FlowletTable {
 public:
  explicit FlowletTable(const Config& cfg) : cfg_(cfg) {}

  // Classifies one packet. New-flowlet starts are NOT applied here (the caller
  // assigns a unit first and then calls start_flowlet); on a continuation the
  // current flowlet's byte count and last-packet time are updated in place.
  //
  // Boundary rules: first packet of an unknown flow -> FirstOfFlow; gap
  // strictly greater than the timeout -> Timeout; a packet whose size would
  // push the running byte count past the threshold starts the next flowlet
  // (it is counted against the new one, never split). A flow with history but
  // no open flowlet (closed by the idle timer or a forced close) also starts a
  // Timeout flowlet.
  FlowletDecision observe_packet(const PacketRecord& pkt, Us now);

  // Demand estimate for the flow's next flowlet: EWMA memory when the flow has
  // completed flowlets, otherwise the global average of all completed
  // flowlets' measured rates (seed value when none exist anywhere yet).
  double estimate_demand(const FlowKey& key) const;

  // Opens a flowlet for `key` seeded with its first packet. The estimate is
  // recorded both on the flowlet and as the flow's EWMA baseline when the flow
  // has no completed flowlets (so the first EWMA update blends against it).
  FlowletState& start_flowlet(const FlowKey& key, const PacketRecord& first, Us now,
                              StartReason reason, UnitId unit, double estimate_bps,
                              std::uint64_t flowlet_id);

  // Closes the open flowlet, folding its measured rate into the flow's EWMA
  // and the global average. Returns the closed flowlet (nullopt if none open).
  std::optional<FlowletState> close_current(const FlowKey& key);

  const FlowletState* current(const FlowKey& key) const;
  const FlowStats* stats(const FlowKey& key) const;
  GlobalRateStats& global() { return global_; }
  const GlobalRateStats& global() const { return global_; }

  // Time of the flow's most recent packet (0 if unknown flow).
  Us last_packet_ts(const FlowKey& key) const;

  // Drops bookkeeping for flows idle past cfg.flow_idle_retire_us (open
  // flowlets are left alone; the caller closes those on their own timers).
  // Returns the number of flows retired.
  std::size_t retire_idle_flows(Us now);

  std::size_t flow_count() const { return flows_.size(); }

 private:
  struct FlowEntry {
    std::optional<FlowletState> current;
    FlowStats stats;
    Us last_pkt_ts = 0;
  };
  Config cfg_;
  std::map<FlowKey, FlowEntry> flows_;
  GlobalRateStats global_;
};

}  // namespace snf
