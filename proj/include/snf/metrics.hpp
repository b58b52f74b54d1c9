#pragma once
// Run-wide measurement sink. Cluster components poke raw events in here;
// the harness folds them into a MetricsReport after the run.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snf/core.hpp"

namespace snf {

struct Counters {
  std::uint64_t allocation_opportunities = 0;
  std::uint64_t proactive_hits = 0;
  std::uint64_t reactive_pulls = 0;
  std::uint64_t fresh_inits = 0;
  std::uint64_t local_hits = 0;
  std::uint64_t stall_waits = 0;       // stalls observed (resolve into the above)
  std::uint64_t size_forks = 0;        // flowlets closed by the byte budget
  std::uint64_t timeout_flowlets = 0;  // flowlets closed by the inactivity gap
  std::uint64_t external_store_reads = 0;
  std::uint64_t external_store_fetches = 0;
  std::uint64_t pull_timeouts = 0;
  std::uint64_t lost_packets = 0;
  std::uint64_t dropped_releases = 0;
  std::uint64_t staleness_violations = 0;
  std::uint64_t launches = 0;
  std::uint64_t retires = 0;
  std::uint64_t recovery_events = 0;
  std::uint64_t recovery_snapshot_transfers = 0;
  std::uint64_t logger_resyncs = 0;
  std::uint64_t failover_closes = 0;
  std::uint64_t recovery_time_us_last = 0;
  std::uint64_t recovery_time_us_max = 0;
};

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample (1-indexed,
// clamped to [1, n]). Throws std::invalid_argument on empty input.
std::uint64_t percentile(std::vector<std::uint64_t> samples, double p);

class MetricsCollector {
 public:
  MetricsCollector(const Config& cfg, bool collect_verdicts)
      : cfg_(cfg), collect_verdicts_(collect_verdicts) {}

  void on_arrival(std::uint32_t trace_idx, Us ts, std::uint32_t bytes);
  void on_unit_offered(std::uint32_t unit, Us ts, std::uint32_t bytes);
  void on_verdict(std::uint32_t trace_idx, const std::string& text);
  void on_externalized(std::uint32_t trace_idx, Us at);
  void on_lost(std::uint32_t trace_idx, const char* cause);
  void on_unit_count_change(Us at, int delta);
  void on_replication_push(std::uint64_t frame_bytes);

  bool externalized(std::uint32_t trace_idx) const;
  std::optional<std::uint64_t> latency_of(std::uint32_t trace_idx) const;

  Counters counters;

  // raw series, consumed by the report builder
  struct Sample {
    std::uint32_t trace_idx;
    std::uint64_t latency_us;
  };
  const std::vector<Sample>& latency_samples() const { return samples_; }
  const std::map<std::uint64_t, std::uint64_t>& epoch_demand_bytes() const {
    return epoch_demand_bytes_;
  }
  const std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint64_t>&
  unit_epoch_offered() const {
    return unit_epoch_offered_;
  }
  const std::vector<std::pair<Us, int>>& unit_count_events() const {
    return unit_events_;
  }
  const std::vector<std::pair<std::uint32_t, std::string>>& verdicts() const {
    return verdicts_;
  }
  const std::vector<std::pair<std::uint32_t, std::string>>& lost() const {
    return lost_;
  }
  std::uint64_t total_arrived_bytes() const { return total_bytes_; }
  std::uint64_t total_packets() const { return arrivals_.size(); }
  std::uint64_t replication_push_bytes() const { return replication_push_bytes_; }
  Us first_arrival() const { return arrivals_.empty() ? 0 : first_ts_; }
  Us last_arrival() const { return last_ts_; }

 private:
  Config cfg_;
  bool collect_verdicts_;
  std::vector<Us> arrivals_;          // trace_idx -> arrival ts
  std::vector<std::uint8_t> done_;    // trace_idx -> externalized flag
  std::vector<Sample> samples_;
  std::map<std::uint64_t, std::uint64_t> epoch_demand_bytes_;
  std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint64_t> unit_epoch_offered_;
  std::vector<std::pair<Us, int>> unit_events_;
  std::vector<std::pair<std::uint32_t, std::string>> verdicts_;
  std::vector<std::pair<std::uint32_t, std::string>> lost_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t replication_push_bytes_ = 0;
  Us first_ts_ = 0;
  Us last_ts_ = 0;
};

}  // namespace snf
