#pragma once
// Output-logger core: keeps a per-flow mirror one delta behind its paired
// unit, releases packets in logical-clock order, and serves recovery
// snapshots. Message plumbing lives in the cluster; this class is the
// protocol brain and is unit-testable standalone.

#include <cstdint>
#include <map>
#include <vector>

#include "snf/core.hpp"
#include "snf/runtime.hpp"
#include "snf/transport.hpp"

namespace snf {

class OutputLogger {
 public:
  explicit OutputLogger(std::uint32_t id) : id_(id) {}

  struct Action {
    std::vector<std::uint32_t> release;  // trace indices safe to externalize
    bool need_resync = false;            // ask the unit for a fresh snapshot
    FlowKey resync_flow;
  };

  // One DELTA_LOG from the paired unit. Baselines replace the flow's mirror
  // outright; delta lists apply only when the clock is contiguous (or the
  // mirror is lossy and the clock jumps forward), otherwise the packet is
  // held and a resync is requested once.
  Action on_delta_log(const DeltaLogMsg& m);

  // The unit's snapshot answering a resync request: adopt it, then release
  // everything held at or below its tag.
  Action on_resync_response(const TaggedState& snapshot);

  // Snapshot set for recovering the paired unit elsewhere; marked lossy so
  // the adopter tolerates the clock hole left by packets that died with the
  // unit.
  std::vector<TaggedState> recovery_snapshots() const;

  // Replacement-logger path: seed the whole mirror from the unit's snapshots.
  void seed_all(const std::vector<TaggedState>& snapshots);

  const TaggedState* mirror(const FlowKey& flow) const;
  // Every mirrored flow's current state, for end-of-run inspection.
  std::map<FlowKey, TaggedState> mirror_states() const;
  // Trace indices of packets parked awaiting a resync (lost if this logger
  // dies before the snapshot arrives).
  std::vector<std::uint32_t> held_indices() const;
  std::size_t mirror_flows() const { return mirror_.size(); }
  std::uint64_t releases() const { return releases_; }
  std::uint64_t resyncs_requested() const { return resyncs_; }
  std::uint32_t id() const { return id_; }

 private:
  struct Held {
    std::uint64_t clock;
    std::uint32_t trace_idx;
  };
  struct Mir {
    TaggedState state;
    bool resync_pending = false;
    std::vector<Held> held;
  };
  std::uint32_t id_;
  std::map<FlowKey, Mir> mirror_;
  std::uint64_t releases_ = 0;
  std::uint64_t resyncs_ = 0;
};

}  // namespace snf
