#pragma once
// The full simulated deployment: controllers (granularization + assignment +
// state metadata), compute units running one NF each, output loggers, the
// optional external state store, and the resource manager, all exchanging
// wire frames over the simulated network on one virtual clock.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "snf/core.hpp"
#include "snf/fault.hpp"
#include "snf/metrics.hpp"
#include "snf/nf.hpp"
#include "snf/rm.hpp"
#include "snf/runtime.hpp"
#include "snf/sim.hpp"
#include "snf/transport.hpp"
#include "snf/wam.hpp"
#include "snf/wgm.hpp"

namespace snf {

enum class AllocMode : std::uint8_t { Flowlet, VanillaFlow, SmartFlow };
enum class StateMode : std::uint8_t { Proactive, Reactive, ExternalStore };

const char* to_string(AllocMode m);
const char* to_string(StateMode m);

struct FailureInjection {
  bool logger = false;  // false: compute unit, true: its paired output logger
  std::uint32_t unit = 0;
  Us at_us = 0;
};

struct ExperimentConfig {
  Config cfg;
  AllocMode mode = AllocMode::Flowlet;
  Us smart_interval_us = 100000;  // SmartFlow rebalance period
  StateMode state_mode = StateMode::Proactive;
  ReplicatorMode replicator = ReplicatorMode::Deterministic;
  std::uint64_t seed = 1;
  std::uint32_t controller_count = 1;
  std::vector<FailureInjection> failures;
  std::string trace_path;
  double time_scale = 1.0;  // divides trace inter-arrival times
  bool fault_tolerant = false;
  std::string nf = "nat";
  NfConfig nf_config = NfConfig::defaults();
  // Test hook: overrides `nf` with a custom function per unit.
  std::function<std::unique_ptr<NetworkFunction>()> nf_factory;
  bool collect_verdicts = false;
  Us checkpoint_interval_us = 50000;  // replay-style recovery baseline knob

  void validate() const;  // throws std::invalid_argument
};

class Cluster {
 public:
  Cluster(const ExperimentConfig& xc, std::vector<PacketRecord> trace,
          MetricsCollector& metrics);
  ~Cluster();

  // Scripted placement for experiments/tests: return a unit id to force the
  // flowlet there (launching it if needed), or 0 to use the normal policy.
  // flowlet_seq is the number of flowlets the flow had before this one
  // (0 for its first).
  using PlacementFn =
      std::function<std::uint32_t(const FlowKey&, std::uint64_t flowlet_seq)>;
  void set_placement_override(PlacementFn fn);

  void set_drop_fn(SimNet::DropFn fn);

  // Runs the whole experiment to event-queue exhaustion.
  void run();

  // --- post-run inspection ---
  // Highest-tagged primary copy of each flow's state across all units.
  std::map<FlowKey, std::map<std::string, Bytes>> final_flow_states() const;
  std::vector<std::uint32_t> active_unit_ids() const;
  const std::map<MsgType, SimNet::TypeStats>& wire_stats() const;
  std::uint64_t peak_units() const;
  Us end_time() const;
  const ResourceManager& resource_manager() const;
  std::uint64_t held_packets_at_end() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Reference executor: the same NF against one state store with no scheduler,
// no transfers and no replication — the migration-transparency and
// fault-recovery oracle. `skip` lists trace indices to treat as lost.
struct SequentialResult {
  std::vector<std::pair<std::uint32_t, std::string>> verdicts;  // trace_idx, text
  std::map<FlowKey, std::map<std::string, Bytes>> final_states;
};
SequentialResult run_sequential(const std::vector<PacketRecord>& trace,
                                const std::string& nf_name, const NfConfig& nf_cfg,
                                const std::set<std::uint32_t>& skip = {});

}  // namespace snf
