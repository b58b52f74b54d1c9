#include "snf/wam.hpp"

namespace snf {

LoadTracker::LoadTracker(Us bucket_width_us, std::uint32_t bucket_count)
    : width_(bucket_width_us), count_(bucket_count), slots_(bucket_count) {}

void LoadTracker::record(Us t, std::uint64_t bytes) {
  std::uint64_t idx = t / width_;
  Slot& s = slots_[idx % count_];
  if (s.bucket_idx != idx) {
    // A report older than the slot's occupant (a delayed frame after the ring
    // wrapped) must not clobber newer data.
    if (s.bucket_idx != UINT64_MAX && s.bucket_idx > idx) return;
    s.bucket_idx = idx;
    s.bytes = 0;
  }
  s.bytes += bytes;
}

std::uint64_t LoadTracker::window_bytes(Us now) const {
  std::uint64_t cur = now / width_;
  std::uint64_t oldest = cur >= count_ - 1 ? cur - (count_ - 1) : 0;
  std::uint64_t total = 0;
  for (const Slot& s : slots_)
    if (s.bucket_idx != UINT64_MAX && s.bucket_idx >= oldest && s.bucket_idx <= cur)
      total += s.bytes;
  return total;
}

double LoadTracker::load_bps(Us now) const {
  return static_cast<double>(window_bytes(now)) * 8.0 * 1e6 /
         static_cast<double>(window_us());
}

AssignResult assign_flowlet(double estimate_bps, const std::vector<UnitView>& units,
                            const std::set<std::uint32_t>& state_holders,
                            const Config& cfg, std::uint32_t next_unit_id) {
  const UnitView* best = nullptr;
  double best_score = 0;
  for (const UnitView& u : units) {
    if (u.committed_bps + estimate_bps > u.capacity_bps) continue;
    double beta = state_holders.count(u.unit) ? 1.0 : 0.0;
    double score = u.measured_load_bps / u.capacity_bps + cfg.alpha * beta;
    if (!best || score > best_score) {  // ties resolve to the smallest id
      best = &u;
      best_score = score;
    }
  }
  if (!best) {
    AssignResult r;
    r.unit = next_unit_id;
    r.action = {ScaleAction::Kind::Launch, 1, 0};
    r.launched = true;
    return r;
  }
  return {best->unit, {}, best_score, false};
}

ScaleAction scale_decision(const std::vector<UnitActivity>& units, Us now,
                           const Config& cfg) {
  if (units.empty()) return {};
  bool all_hot = true;
  for (const UnitActivity& u : units)
    if (u.utilization <= cfg.scaleup_threshold) {
      all_hot = false;
      break;
    }
  if (all_hot) return {ScaleAction::Kind::Launch, 1, 0};
  for (const UnitActivity& u : units) {
    bool idle = now > u.last_traffic_ts &&
                now - u.last_traffic_ts > cfg.unit_idle_retire_us;
    if (idle && u.live_flowlets == 0) return {ScaleAction::Kind::Retire, 0, u.unit};
  }
  return {};
}

}  // namespace snf
