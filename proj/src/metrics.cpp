#include "snf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace snf {

std::uint64_t percentile(std::vector<std::uint64_t> samples, double p) {
  if (samples.empty()) throw std::invalid_argument("percentile: no samples");
  std::sort(samples.begin(), samples.end());
  double rank = std::ceil(p / 100.0 * static_cast<double>(samples.size()));
  std::size_t idx = rank < 1 ? 0 : static_cast<std::size_t>(rank) - 1;
  if (idx >= samples.size()) idx = samples.size() - 1;
  return samples[idx];
}

void MetricsCollector::on_arrival(std::uint32_t trace_idx, Us ts, std::uint32_t bytes) {
  if (arrivals_.size() <= trace_idx) {
    arrivals_.resize(trace_idx + 1, 0);
    done_.resize(trace_idx + 1, 0);
  }
  arrivals_[trace_idx] = ts;
  if (total_bytes_ == 0 || ts < first_ts_) first_ts_ = ts;
  if (ts > last_ts_) last_ts_ = ts;
  total_bytes_ += bytes;
  epoch_demand_bytes_[ts / cfg_.epoch_us] += bytes;
}

void MetricsCollector::on_unit_offered(std::uint32_t unit, Us ts, std::uint32_t bytes) {
  unit_epoch_offered_[{unit, ts / cfg_.epoch_us}] += bytes;
}

void MetricsCollector::on_verdict(std::uint32_t trace_idx, const std::string& text) {
  if (collect_verdicts_) verdicts_.emplace_back(trace_idx, text);
}

void MetricsCollector::on_externalized(std::uint32_t trace_idx, Us at) {
  if (trace_idx >= arrivals_.size() || done_[trace_idx]) return;
  done_[trace_idx] = 1;
  samples_.push_back({trace_idx, at - arrivals_[trace_idx]});
}

void MetricsCollector::on_lost(std::uint32_t trace_idx, const char* cause) {
  counters.lost_packets += 1;
  lost_.emplace_back(trace_idx, cause);
}

void MetricsCollector::on_unit_count_change(Us at, int delta) {
  unit_events_.emplace_back(at, delta);
}

void MetricsCollector::on_replication_push(std::uint64_t frame_bytes) {
  replication_push_bytes_ += frame_bytes;
}

bool MetricsCollector::externalized(std::uint32_t trace_idx) const {
  return trace_idx < done_.size() && done_[trace_idx];
}

std::optional<std::uint64_t> MetricsCollector::latency_of(std::uint32_t trace_idx) const {
  for (const Sample& s : samples_)
    if (s.trace_idx == trace_idx) return s.latency_us;
  return std::nullopt;
}

}  // namespace snf
