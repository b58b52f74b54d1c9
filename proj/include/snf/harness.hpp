#pragma once
// Experiment harness: trace files, deterministic synthetic workloads, the
// end-to-end experiment runner, and the report artifacts it writes.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "snf/cluster.hpp"
#include "snf/core.hpp"
#include "snf/metrics.hpp"

namespace snf {

// One row of a trace file:
//   ts_us,src_ip,dst_ip,src_port,dst_port,proto,size_bytes[,payload_hex]
// Timestamps are absolute microseconds and must be non-decreasing. size_bytes
// is the on-wire packet size used for service-time accounting; payload_hex
// (optional) carries the bytes visible to payload-inspecting functions.
struct TraceRecord {
  Us ts_us = 0;
  FlowKey key;
  std::uint32_t size_bytes = 0;
  Bytes payload;

  bool operator==(const TraceRecord&) const = default;
};

// Strict parser; throws std::runtime_error naming file and line on any
// malformed row. Blank lines and lines starting with '#' are skipped.
std::vector<TraceRecord> load_trace(const std::string& path);
std::vector<TraceRecord> parse_trace(std::istream& in, const std::string& name);
void save_trace(const std::vector<TraceRecord>& recs, const std::string& path);

// Deterministic synthetic workload: `flow_count` flows, staggered starts,
// each emitting bursts separated by gaps longer than the flowlet timeout.
// Every `heavy_every`-th flow (1-based; 0 disables) sends large fixed-size
// bursts that exercise the per-flowlet byte budget.
struct SynthSpec {
  std::uint64_t seed = 1;
  std::uint32_t flow_count = 50;
  std::uint32_t bursts_per_flow = 8;
  std::uint32_t packets_per_burst = 6;
  std::uint32_t payload_bytes = 1000;
  Us burst_gap_us = 800;        // between bursts of one flow
  Us intra_gap_us = 40;         // between packets inside a burst
  Us gap_jitter_us = 10;        // uniform jitter added to both gaps
  Us flow_stagger_us = 120;     // start offset between consecutive flows
  std::uint32_t heavy_every = 0;
  std::uint32_t heavy_burst_packets = 20;
  std::uint32_t heavy_payload_bytes = 1400;
};
std::vector<TraceRecord> generate_synthetic_trace(const SynthSpec& spec);

// Trace rows -> simulator packets. Timestamps are divided by `time_scale`
// (>1 compresses the trace); trace_idx is the row index.
std::vector<PacketRecord> to_packets(const std::vector<TraceRecord>& recs,
                                     double time_scale);

struct LatencyStats {
  std::uint64_t count = 0;
  std::uint64_t p1 = 0, p25 = 0, p50 = 0, p75 = 0, p99 = 0;
  double mean = 0;
};
LatencyStats latency_stats(const std::vector<MetricsCollector::Sample>& samples);

struct EpochRow {
  std::uint64_t epoch = 0;
  Us start_us = 0;
  double demand_bps = 0;       // arrived bytes in the epoch
  double offered_bps = 0;      // bytes delivered to units in the epoch
  double provisioned_bps = 0;  // time-weighted active units x unit capacity
  double active_units = 0;     // time-weighted average
  double utilization = 0;      // offered / provisioned (0 when unprovisioned)
};

struct MetricsReport {
  std::string mode, state_mode, replicator, nf;
  std::uint64_t seed = 0;
  std::uint64_t packets = 0;
  std::uint64_t externalized = 0;
  std::uint64_t lost = 0;
  std::uint64_t total_bytes = 0;
  Us duration_us = 0;  // first arrival to end of run
  LatencyStats latency;
  std::vector<EpochRow> epochs;
  // Per unit-epoch utilization histogram: ten 0.1-wide bins plus an overflow
  // bin for >= 1.0.
  std::array<std::uint64_t, 11> utilization_histogram{};
  Counters counters;
  double replication_overhead_bps = 0;
  // | sum of per-epoch demand bytes - total arrived bytes |, always 0.
  std::uint64_t demand_conservation_error = 0;
  std::uint64_t peak_units = 0;
  Us end_time_us = 0;
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> wire;  // frames, bytes
  // Replay-style recovery estimate for comparison with the measured snapshot
  // recovery time: 2 link RTT legs plus re-processing half a checkpoint
  // interval's worth of packets.
  double replay_recovery_baseline_us = 0;
};

struct RunResult {
  MetricsReport report;
  std::map<FlowKey, std::map<std::string, Bytes>> final_states;
  std::vector<std::pair<std::uint32_t, std::string>> verdicts;  // when collected
  std::vector<std::pair<std::uint32_t, std::string>> lost;      // trace_idx, cause
  std::vector<MetricsCollector::Sample> latency_samples;
  std::vector<std::uint32_t> active_units;
  std::uint64_t held_packets_at_end = 0;
};

RunResult run_experiment(const ExperimentConfig& xc,
                         const std::vector<TraceRecord>& trace);

// Rendered artifacts (byte-stable for a fixed config + seed):
//   report.json  - the whole MetricsReport, keys sorted
//   epochs.csv   - epoch,start_us,demand_bps,offered_bps,provisioned_bps,
//                  active_units,utilization
//   latency.csv  - trace_idx,latency_us (sorted by trace_idx)
std::string render_report_json(const MetricsReport& r);
std::string render_epochs_csv(const MetricsReport& r);
std::string render_latency_csv(const std::vector<MetricsCollector::Sample>& samples);
void write_report_files(const RunResult& r, const std::string& out_dir);

struct ModeComparison {
  double opportunity_ratio = 0;  // a.opportunities / b.opportunities
  double p50_ratio = 0;          // a.p50 / b.p50
  double p99_ratio = 0;
  double pull_ratio = 0;         // a.reactive_pulls / b.reactive_pulls
};
ModeComparison compare_reports(const MetricsReport& a, const MetricsReport& b);

}  // namespace snf
