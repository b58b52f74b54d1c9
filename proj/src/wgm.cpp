#include "snf/wgm.hpp"

namespace snf {

const char* to_string(StartReason r) {
  switch (r) {
    case StartReason::FirstOfFlow: return "first-of-flow";
    case StartReason::Timeout: return "timeout";
    case StartReason::SizeFork: return "size-fork";
  }
  return "?";
}

double measured_rate_bps(std::uint64_t bytes, Us active_duration_us) {
  Us d = active_duration_us < 1 ? 1 : active_duration_us;
  return static_cast<double>(bytes) * 8.0 * 1e6 / static_cast<double>(d);
}

double ewma_update(double prev_estimate_bps, double measured_bps, double delta) {
  return delta * measured_bps + (1.0 - delta) * prev_estimate_bps;
}

FlowletDecision FlowletTable::observe_packet(const PacketRecord& pkt, Us now) {
  auto it = flows_.find(pkt.key);
  if (it == flows_.end()) return {true, StartReason::FirstOfFlow, 0};
  FlowEntry& fe = it->second;
  if (!fe.current) return {true, StartReason::Timeout, 0};  // closed out-of-band
  FlowletState& cur = *fe.current;
  if (now > cur.last_pkt_ts && now - cur.last_pkt_ts > cfg_.flowlet_timeout_us)
    return {true, StartReason::Timeout, 0};
  if (cur.bytes_so_far + pkt.size > cfg_.size_threshold_bytes)
    return {true, StartReason::SizeFork, 0};
  cur.bytes_so_far += pkt.size;
  cur.last_pkt_ts = now;
  fe.last_pkt_ts = now;
  return {false, cur.start_reason, cur.flowlet_id};
}

double FlowletTable::estimate_demand(const FlowKey& key) const {
  auto it = flows_.find(key);
  if (it != flows_.end() && it->second.stats.completed_flowlets > 0)
    return it->second.stats.ewma_estimate_bps;
  return global_.mean_or(cfg_.demand_seed_bps);
}

FlowletState& FlowletTable::start_flowlet(const FlowKey& key, const PacketRecord& first,
                                          Us now, StartReason reason, UnitId unit,
                                          double estimate_bps, std::uint64_t flowlet_id) {
  FlowEntry& fe = flows_[key];
  FlowletState fl;
  fl.flowlet_id = flowlet_id;
  fl.bytes_so_far = first.size;
  fl.first_pkt_ts = now;
  fl.last_pkt_ts = now;
  fl.assigned_unit = unit;
  fl.start_reason = reason;
  fl.estimate_bps = estimate_bps;
  fe.current = fl;
  fe.last_pkt_ts = now;
  if (fe.stats.completed_flowlets == 0) fe.stats.ewma_estimate_bps = estimate_bps;
  return *fe.current;
}

std::optional<FlowletState> FlowletTable::close_current(const FlowKey& key) {
  auto it = flows_.find(key);
  if (it == flows_.end() || !it->second.current) return std::nullopt;
  FlowEntry& fe = it->second;
  FlowletState closed = *fe.current;
  fe.current.reset();
  double measured =
      measured_rate_bps(closed.bytes_so_far, closed.last_pkt_ts - closed.first_pkt_ts);
  fe.stats.ewma_estimate_bps =
      ewma_update(fe.stats.ewma_estimate_bps, measured, cfg_.ewma_delta);
  fe.stats.last_measured_bps = measured;
  fe.stats.completed_flowlets += 1;
  global_.rate_sum_bps += measured;
  global_.completed += 1;
  return closed;
}

const FlowletState* FlowletTable::current(const FlowKey& key) const {
  auto it = flows_.find(key);
  if (it == flows_.end() || !it->second.current) return nullptr;
  return &*it->second.current;
}

const FlowStats* FlowletTable::stats(const FlowKey& key) const {
  auto it = flows_.find(key);
  return it == flows_.end() ? nullptr : &it->second.stats;
}

Us FlowletTable::last_packet_ts(const FlowKey& key) const {
  auto it = flows_.find(key);
  return it == flows_.end() ? 0 : it->second.last_pkt_ts;
}

std::size_t FlowletTable::retire_idle_flows(Us now) {
  std::size_t n = 0;
  for (auto it = flows_.begin(); it != flows_.end();) {
    const FlowEntry& fe = it->second;
    if (!fe.current && now > fe.last_pkt_ts &&
        now - fe.last_pkt_ts > cfg_.flow_idle_retire_us) {
      it = flows_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

}  // namespace snf
