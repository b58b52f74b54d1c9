#include "snf/fault.hpp"

#include <algorithm>

namespace snf {

OutputLogger::Action OutputLogger::on_delta_log(const DeltaLogMsg& m) {
  Action act;
  if (m.baseline) {
    // A flow admission at the unit ships its post-packet snapshot; this also
    // re-seeds the mirror after a recovery rejoin, so any pending gap ends.
    Mir& mir = mirror_[m.flow];
    mir.state = m.snapshot;
    mir.resync_pending = false;
    for (const Held& h : mir.held)
      if (h.clock <= mir.state.clock_tag) act.release.push_back(h.trace_idx);
    mir.held.clear();
    act.release.push_back(m.trace_idx);
    releases_ += act.release.size();
    return act;
  }

  auto it = mirror_.find(m.flow);
  if (it == mirror_.end()) {
    // Deltas before any baseline: hold and ask for the full state.
    Mir& mir = mirror_[m.flow];
    mir.state.flow = m.flow;
    mir.held.push_back({m.packet_clock, m.trace_idx});
    mir.resync_pending = true;
    ++resyncs_;
    act.need_resync = true;
    act.resync_flow = m.flow;
    return act;
  }
  Mir& mir = it->second;
  if (mir.resync_pending) {
    mir.held.push_back({m.packet_clock, m.trace_idx});
    return act;
  }
  if (m.packet_clock <= mir.state.clock_tag) return act;  // duplicate, covered
  if (accepts_clock(mir.state.clock_tag, mir.state.lossy, m.packet_clock)) {
    for (const DeltaRecord& d : m.deltas) mir.state.entries[d.key] = d.value;
    mir.state.clock_tag = m.packet_clock;
    mir.state.lossy = false;
    act.release.push_back(m.trace_idx);
    releases_ += 1;
    return act;
  }
  // Clock gap: a delta went missing. Hold and resynchronize before releasing
  // anything further for this flow.
  mir.held.push_back({m.packet_clock, m.trace_idx});
  mir.resync_pending = true;
  ++resyncs_;
  act.need_resync = true;
  act.resync_flow = m.flow;
  return act;
}

OutputLogger::Action OutputLogger::on_resync_response(const TaggedState& snapshot) {
  Action act;
  Mir& mir = mirror_[snapshot.flow];
  mir.state = snapshot;
  mir.resync_pending = false;
  // FIFO delivery means everything held was sent before the snapshot answer,
  // so its effects are all covered by the snapshot's tag.
  std::sort(mir.held.begin(), mir.held.end(),
            [](const Held& a, const Held& b) { return a.clock < b.clock; });
  for (const Held& h : mir.held)
    if (h.clock <= mir.state.clock_tag) act.release.push_back(h.trace_idx);
  mir.held.clear();
  releases_ += act.release.size();
  return act;
}

std::vector<TaggedState> OutputLogger::recovery_snapshots() const {
  std::vector<TaggedState> out;
  out.reserve(mirror_.size());
  for (const auto& [flow, mir] : mirror_) {
    TaggedState ts = mir.state;
    ts.lossy = true;
    out.push_back(std::move(ts));
  }
  return out;
}

void OutputLogger::seed_all(const std::vector<TaggedState>& snapshots) {
  for (const TaggedState& ts : snapshots) {
    Mir& mir = mirror_[ts.flow];
    mir.state = ts;
    mir.resync_pending = false;
    mir.held.clear();
  }
}

const TaggedState* OutputLogger::mirror(const FlowKey& flow) const {
  auto it = mirror_.find(flow);
  return it == mirror_.end() ? nullptr : &it->second.state;
}

std::map<FlowKey, TaggedState> OutputLogger::mirror_states() const {
  std::map<FlowKey, TaggedState> out;
  for (const auto& [flow, mir] : mirror_) out.emplace(flow, mir.state);
  return out;
}

std::vector<std::uint32_t> OutputLogger::held_indices() const {
  std::vector<std::uint32_t> out;
  for (const auto& [flow, m] : mirror_)
    for (const Held& h : m.held) out.push_back(h.trace_idx);
  return out;
}

}  // namespace snf
