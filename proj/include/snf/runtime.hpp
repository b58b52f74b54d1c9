#pragma once
// Per-unit ephemeral state: tagged per-flow key/value records, the logical
// clock staleness check, replica handling, and proactive replication targets.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "snf/core.hpp"

namespace snf {

// One NF put, tagged with the packet's logical clock (shipped to the logger).
struct DeltaRecord {
  FlowKey flow;
  std::string key;
  Bytes value;
  std::uint64_t packet_clock = 0;

  bool operator==(const DeltaRecord&) const = default;
};

// Serializable snapshot of one flow's state.
struct TaggedState {
  FlowKey flow;
  std::uint64_t clock_tag = 0;   // logical clock of the last packet applied
  std::uint32_t origin_unit = 0; // unit that produced the snapshot
  bool lossy = false;            // recovered past a fail-stop loss hole; the
                                 // next accepted clock may jump forward once
  std::map<std::string, Bytes> entries;

  bool operator==(const TaggedState&) const = default;
};

enum class Freshness : std::uint8_t { Fresh, Stale };

// A packet may be applied to state carrying tag t iff its clock is t+1.
inline Freshness validate_clock(std::uint64_t clock_tag, std::uint64_t packet_clock) {
  return packet_clock == clock_tag + 1 ? Freshness::Fresh : Freshness::Stale;
}

// Loss-aware variant: lossy state additionally accepts a one-time forward jump.
inline bool accepts_clock(std::uint64_t clock_tag, bool lossy, std::uint64_t packet_clock) {
  if (lossy) return packet_clock > clock_tag;
  return validate_clock(clock_tag, packet_clock) == Freshness::Fresh;
}

enum class InitOutcomeKind : std::uint8_t {
  Fresh,                 // first flowlet of the flow, state starts empty
  LocalHit,              // previous flowlet ran here; state already local
  ProactiveHit,          // a fresh replica was adopted without any pull
  ReactivePull,          // state must be pulled from the previous unit
  StallPendingTransfer,  // a push is already in flight; wait for it
};

const char* to_string(InitOutcomeKind k);

struct InitOutcome {
  InitOutcomeKind kind = InitOutcomeKind::Fresh;
  std::uint32_t pull_from = kNoUnit;  // set for ReactivePull
};

enum class ReplicatorMode : std::uint8_t { Deterministic, WeightedRandom };

// Picks replica targets from the active unit ids (must be sorted ascending).
// Deterministic: the first k ids. WeightedRandom: k distinct draws with
// probability proportional to 1/id, duplicates redrawn. When k >= the number
// of active units, all of them are returned. The pushing unit is not excluded.
std::vector<std::uint32_t> choose_replication_targets(
    const std::vector<std::uint32_t>& active_sorted, std::uint32_t k,
    ReplicatorMode mode, std::mt19937_64& rng);

// Ephemeral state store of one compute unit. Holds primary (processable)
// per-flow records plus replica copies awaiting adoption, and a unit-global
// key index over primary entries so NFs can look up shared keys (such as a
// whitelist entry written by the opposite direction's flow). Keys must be
// unique per owning flow scope.
class StateStore {
 public:
  // --- NF-facing, used while processing one packet ---
  std::optional<Bytes> get(const std::string& key) const;
  // Records the write and queues a delta tagged with the packet's clock.
  void put(const FlowKey& owner, const std::string& key, Bytes value,
           std::uint64_t packet_clock);

  // --- flow lifecycle ---
  void admit_fresh(const FlowKey& flow);              // empty primary, tag 0
  bool has_primary(const FlowKey& flow) const;
  bool has_replica(const FlowKey& flow) const;
  std::uint64_t tag(const FlowKey& flow) const;       // 0 when absent
  bool lossy(const FlowKey& flow) const;
  // Advances the flow's tag after a packet is fully processed (every packet
  // advances the tag, including ones that performed no puts).
  void mark_applied(const FlowKey& flow, std::uint64_t packet_clock);

  TaggedState snapshot(const FlowKey& flow, std::uint32_t origin) const;
  std::vector<TaggedState> snapshot_all(std::uint32_t origin) const;

  // Stores/refreshes a replica copy; ignored unless strictly newer than what
  // is already held (primary or replica). A newer replica supersedes a stale
  // primary left behind by an old flowlet.
  void install_replica(const TaggedState& ts);
  // Promotes a held replica to primary (caller validated the clock).
  void adopt_replica(const FlowKey& flow);
  // Installs a pulled/recovered snapshot directly as primary.
  void adopt_snapshot(const TaggedState& ts);

  void drop_flow(const FlowKey& flow);
  std::size_t retire_idle_flows(Us now, Us horizon);
  void touch(const FlowKey& flow, Us now);

  // Drains deltas accumulated by put() since the last call.
  std::vector<DeltaRecord> take_deltas();

  std::uint64_t replica_tag(const FlowKey& flow) const;
  bool replica_lossy(const FlowKey& flow) const;
  std::size_t flow_count() const { return flows_.size(); }
  std::vector<FlowKey> primary_flows() const;

 private:
  struct Rec {
    std::map<std::string, Bytes> entries;
    std::uint64_t clock_tag = 0;
    bool replica = false;
    bool lossy = false;
    Us last_touch = 0;
  };
  void index_entries(const FlowKey& flow, const Rec& rec);
  void unindex_entries(const Rec& rec);

  std::map<FlowKey, Rec> flows_;
  std::map<std::string, FlowKey> key_owner_;  // primary entries only
  std::vector<DeltaRecord> pending_deltas_;
};

// Classifies how a flowlet's first packet at `self` finds its state.
// `push_in_flight` reports whether a state push addressed to this unit for the
// flow is currently in transit.
InitOutcome classify_flowlet_init(const StateStore& store, std::uint32_t self,
                                  const FlowKey& flow, const PacketMeta& meta,
                                  bool push_in_flight);

}  // namespace snf
