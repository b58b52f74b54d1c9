#include "snf/runtime.hpp"

#include <algorithm>

namespace snf {

const char* to_string(InitOutcomeKind k) {
  switch (k) {
    case InitOutcomeKind::Fresh: return "fresh";
    case InitOutcomeKind::LocalHit: return "local-hit";
    case InitOutcomeKind::ProactiveHit: return "proactive-hit";
    case InitOutcomeKind::ReactivePull: return "reactive-pull";
    case InitOutcomeKind::StallPendingTransfer: return "stall-pending-transfer";
  }
  return "?";
}

std::vector<std::uint32_t> choose_replication_targets(
    const std::vector<std::uint32_t>& active_sorted, std::uint32_t k,
    ReplicatorMode mode, std::mt19937_64& rng) {
  if (k >= active_sorted.size()) return active_sorted;
  if (mode == ReplicatorMode::Deterministic)
    return {active_sorted.begin(), active_sorted.begin() + k};

  // Weight each unit by 1/id; redraw duplicates until k distinct picks.
  std::vector<double> cum;
  cum.reserve(active_sorted.size());
  double sum = 0;
  for (std::uint32_t id : active_sorted) {
    sum += 1.0 / static_cast<double>(id);
    cum.push_back(sum);
  }
  std::vector<std::uint32_t> picked;
  while (picked.size() < k) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cum.begin());
    if (idx >= active_sorted.size()) idx = active_sorted.size() - 1;
    std::uint32_t id = active_sorted[idx];
    if (std::find(picked.begin(), picked.end(), id) == picked.end())
      picked.push_back(id);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::optional<Bytes> StateStore::get(const std::string& key) const {
  auto it = key_owner_.find(key);
  if (it == key_owner_.end()) return std::nullopt;
  auto fit = flows_.find(it->second);
  if (fit == flows_.end() || fit->second.replica) return std::nullopt;
  auto eit = fit->second.entries.find(key);
  if (eit == fit->second.entries.end()) return std::nullopt;
  return eit->second;
}

void StateStore::put(const FlowKey& owner, const std::string& key, Bytes value,
                     std::uint64_t packet_clock) {
  Rec& rec = flows_[owner];
  rec.replica = false;
  rec.entries[key] = value;
  key_owner_[key] = owner;
  pending_deltas_.push_back({owner, key, std::move(value), packet_clock});
}

void StateStore::admit_fresh(const FlowKey& flow) {
  auto it = flows_.find(flow);
  if (it != flows_.end()) {
    if (!it->second.replica) unindex_entries(it->second);
    flows_.erase(it);
  }
  Rec& rec = flows_[flow];
  rec.replica = false;
  // A flow restarting after idle retirement or a non-replicated failure does
  // not resume at clock 1; the lossy flag admits its first packet wherever
  // its clock stands, after which the contiguity rule applies again.
  rec.lossy = true;
}

bool StateStore::has_primary(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it != flows_.end() && !it->second.replica;
}

bool StateStore::has_replica(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it != flows_.end() && it->second.replica;
}

std::uint64_t StateStore::tag(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it == flows_.end() ? 0 : it->second.clock_tag;
}

bool StateStore::lossy(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it != flows_.end() && it->second.lossy;
}

void StateStore::mark_applied(const FlowKey& flow, std::uint64_t packet_clock) {
  Rec& rec = flows_[flow];
  rec.clock_tag = packet_clock;
  rec.lossy = false;  // strict +1 checking resumes after the first accept
}

TaggedState StateStore::snapshot(const FlowKey& flow, std::uint32_t origin) const {
  TaggedState ts;
  ts.flow = flow;
  ts.origin_unit = origin;
  auto it = flows_.find(flow);
  if (it != flows_.end()) {
    ts.clock_tag = it->second.clock_tag;
    ts.lossy = it->second.lossy;
    ts.entries = it->second.entries;
  }
  return ts;
}

std::vector<TaggedState> StateStore::snapshot_all(std::uint32_t origin) const {
  std::vector<TaggedState> out;
  out.reserve(flows_.size());
  for (const auto& [flow, rec] : flows_)
    if (!rec.replica) out.push_back(snapshot(flow, origin));
  return out;
}

void StateStore::install_replica(const TaggedState& ts) {
  auto it = flows_.find(ts.flow);
  if (it != flows_.end()) {
    if (ts.clock_tag <= it->second.clock_tag) return;  // not newer, keep ours
    if (!it->second.replica) unindex_entries(it->second);
  }
  Rec& rec = flows_[ts.flow];  // last_touch carries over when it existed
  rec.entries = ts.entries;
  rec.clock_tag = ts.clock_tag;
  rec.replica = true;
  rec.lossy = ts.lossy;
}

void StateStore::adopt_replica(const FlowKey& flow) {
  auto it = flows_.find(flow);
  if (it == flows_.end() || !it->second.replica) return;
  it->second.replica = false;
  index_entries(flow, it->second);
}

void StateStore::adopt_snapshot(const TaggedState& ts) {
  auto it = flows_.find(ts.flow);
  if (it != flows_.end() && !it->second.replica) unindex_entries(it->second);
  Rec& rec = flows_[ts.flow];
  rec.entries = ts.entries;
  rec.clock_tag = ts.clock_tag;
  rec.replica = false;
  rec.lossy = ts.lossy;
  index_entries(ts.flow, rec);
}

void StateStore::drop_flow(const FlowKey& flow) {
  auto it = flows_.find(flow);
  if (it == flows_.end()) return;
  if (!it->second.replica) unindex_entries(it->second);
  flows_.erase(it);
}

std::size_t StateStore::retire_idle_flows(Us now, Us horizon) {
  std::size_t n = 0;
  for (auto it = flows_.begin(); it != flows_.end();) {
    if (now > it->second.last_touch && now - it->second.last_touch > horizon) {
      if (!it->second.replica) unindex_entries(it->second);
      it = flows_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

void StateStore::touch(const FlowKey& flow, Us now) {
  auto it = flows_.find(flow);
  if (it != flows_.end()) it->second.last_touch = now;
}

std::vector<DeltaRecord> StateStore::take_deltas() {
  std::vector<DeltaRecord> out;
  out.swap(pending_deltas_);
  return out;
}

std::uint64_t StateStore::replica_tag(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it != flows_.end() && it->second.replica ? it->second.clock_tag : 0;
}

bool StateStore::replica_lossy(const FlowKey& flow) const {
  auto it = flows_.find(flow);
  return it != flows_.end() && it->second.replica && it->second.lossy;
}

std::vector<FlowKey> StateStore::primary_flows() const {
  std::vector<FlowKey> out;
  for (const auto& [flow, rec] : flows_)
    if (!rec.replica) out.push_back(flow);
  return out;
}

void StateStore::index_entries(const FlowKey& flow, const Rec& rec) {
  for (const auto& [k, v] : rec.entries) key_owner_[k] = flow;
}

void StateStore::unindex_entries(const Rec& rec) {
  for (const auto& [k, v] : rec.entries) key_owner_.erase(k);
}

InitOutcome classify_flowlet_init(const StateStore& store, std::uint32_t self,
                                  const FlowKey& flow, const PacketMeta& meta,
                                  bool push_in_flight) {
  if (!meta.prev_unit) return {InitOutcomeKind::Fresh, kNoUnit};
  std::uint32_t prev = meta.prev_unit->id;
  if (prev == self) {
    // State should already be local; if it was dropped (idle retirement race)
    // the flow restarts fresh, mirroring what a real state loss would do.
    if (store.has_primary(flow)) return {InitOutcomeKind::LocalHit, kNoUnit};
    return {InitOutcomeKind::Fresh, kNoUnit};
  }
  if (store.has_primary(flow) &&
      accepts_clock(store.tag(flow), store.lossy(flow), meta.logical_clock))
    // A previous adoption (e.g. an earlier flowlet here) already holds a
    // processable copy.
    return {InitOutcomeKind::LocalHit, kNoUnit};
  if (store.has_replica(flow) &&
      accepts_clock(store.replica_tag(flow), store.replica_lossy(flow),
                    meta.logical_clock))
    return {InitOutcomeKind::ProactiveHit, kNoUnit};
  if (push_in_flight) return {InitOutcomeKind::StallPendingTransfer, kNoUnit};
  return {InitOutcomeKind::ReactivePull, prev};
}

}  // namespace snf
