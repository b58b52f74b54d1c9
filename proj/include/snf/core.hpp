#pragma once
// Core domain types shared by every module: flow identity, packet records,
// the platform configuration block, and small time/byte helpers.

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace snf {

// Virtual time in integer microseconds.
using Us = std::uint64_t;

using Bytes = std::vector<std::uint8_t>;

struct UnitId {
  std::uint32_t id = 0;
  auto operator<=>(const UnitId&) const = default;
};

// Wire sentinel for "no previous unit".
inline constexpr std::uint32_t kNoUnit = 0xFFFFFFFFu;

// Canonical 5-tuple. Comparison order (src_ip, dst_ip, src_port, dst_port, proto)
// is relied upon wherever deterministic iteration matters.
struct FlowKey {
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint8_t proto = 0;
  auto operator<=>(const FlowKey&) const = default;
};

// FNV-1a over the big-endian 13-byte tuple serialization; the basis/prime are
// fixed so hashed decisions (e.g. load-balancer pinning) are stable across runs.
std::uint64_t hash_flow_key(const FlowKey& k);

std::string to_string(const FlowKey& k);

// Strict dotted-quad parse; throws std::invalid_argument on malformed input.
std::uint32_t parse_ipv4(const std::string& s);
std::string format_ipv4(std::uint32_t ip);

// Controller-stamped per-packet metadata.
struct PacketMeta {
  std::uint64_t logical_clock = 0;           // per-flow, first packet carries 1
  std::optional<UnitId> prev_unit;           // unit of the flow's previous flowlet
  std::uint64_t flowlet_id = 0;
};

struct PacketRecord {
  Us arrival_ts = 0;            // trace timestamp (already time-scaled)
  FlowKey key;
  std::uint32_t size = 0;       // bytes on the wire (header+payload accounting unit)
  Bytes payload;                // optional inspectable bytes (may be < size)
  std::uint32_t trace_idx = 0;  // position in the input trace
  PacketMeta meta;
};

inline const FlowKey& flow_key_of(const PacketRecord& p) { return p.key; }

// Platform configuration. Field defaults are the evaluated operating point.
struct Config {
  Us flowlet_timeout_us = 500;             // T: inactivity gap that closes a flowlet
  std::uint64_t size_threshold_bytes = 15360;  // B: max bytes per flowlet
  double alpha = 0.25;                     // locality weight in assignment scoring
  std::uint32_t replication_k = 3;         // K: proactive replica count
  double bw_max_bps = 1e9;                 // per-unit capacity
  double ewma_delta = 0.5;                 // demand estimator smoothing
  Us bucket_width_us = 500;                // load tracker bucket width
  std::uint32_t bucket_count = 200;        // load tracker window = width * count
  Us epoch_us = 100000;                    // reporting/resource epoch
  double scaleup_threshold = 0.9;          // all-units-above -> launch
  Us unit_idle_retire_us = 1000000;        // idle horizon before retiring a unit
  double demand_seed_bps = 1e7;            // estimate before any flowlet completes
  Us flow_idle_retire_us = 60000000;       // drop per-flow bookkeeping after this
  Us pull_timeout_us = 10000;              // reactive pull escalation deadline
  Us launch_delay_us = 0;                  // unit spin-up latency
  Us link_latency_us = 50;                 // one-way latency between nodes

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Service occupancy for one packet at a unit: max(1, round(bits / bw * 1e6)).
Us service_time_us(std::uint32_t size_bytes, double bw_max_bps);

}  // namespace snf
