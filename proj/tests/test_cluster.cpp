#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "snf/cluster.hpp"
#include "snf/metrics.hpp"

using namespace snf;

namespace {

FlowKey fk(std::uint32_t n) {
  FlowKey k;
  k.src_ip = 0x0A000100u | n;
  k.dst_ip = 0xCB007105u;  // 203.0.113.5
  k.src_port = static_cast<std::uint16_t>(2000 + n);
  k.dst_port = 80;
  k.proto = 6;
  return k;
}

// flows x flowlets x packets-per-flowlet, bursts separated by `burst_gap`
// (> timeout splits), packets inside a burst by `intra_gap`.
std::vector<PacketRecord> burst_trace(std::uint32_t flows, std::uint32_t bursts,
                                      std::uint32_t per_burst, Us burst_gap = 1000,
                                      Us intra_gap = 100, std::uint32_t size = 600) {
  std::vector<PacketRecord> pkts;
  for (std::uint32_t f = 0; f < flows; ++f) {
    Us t = f * 37;
    for (std::uint32_t b = 0; b < bursts; ++b) {
      for (std::uint32_t p = 0; p < per_burst; ++p) {
        PacketRecord pr;
        pr.arrival_ts = t;
        pr.key = fk(f);
        pr.size = size;
        pkts.push_back(pr);
        t += intra_gap;
      }
      t += burst_gap;
    }
  }
  std::stable_sort(pkts.begin(), pkts.end(),
                   [](const PacketRecord& a, const PacketRecord& b) {
                     return a.arrival_ts < b.arrival_ts;
                   });
  for (std::size_t i = 0; i < pkts.size(); ++i)
    pkts[i].trace_idx = static_cast<std::uint32_t>(i);
  return pkts;
}

struct RunOut {
  Counters counters;
  std::vector<std::pair<std::uint32_t, std::string>> verdicts;  // sorted by idx
  std::vector<std::pair<std::uint32_t, std::string>> lost;
  std::map<FlowKey, std::map<std::string, Bytes>> finals;
  std::uint64_t externalized = 0;
  std::uint64_t held = 0;
  std::map<MsgType, SimNet::TypeStats> wire;
};

RunOut run_cluster(const ExperimentConfig& xc, const std::vector<PacketRecord>& pkts,
                   Cluster::PlacementFn place = nullptr) {
  MetricsCollector metrics(xc.cfg, true);
  Cluster c(xc, pkts, metrics);
  if (place) c.set_placement_override(std::move(place));
  c.run();
  RunOut out;
  out.counters = metrics.counters;
  out.verdicts = metrics.verdicts();
  std::sort(out.verdicts.begin(), out.verdicts.end());
  out.lost = metrics.lost();
  out.finals = c.final_flow_states();
  out.externalized = metrics.latency_samples().size();
  out.held = c.held_packets_at_end();
  out.wire = c.wire_stats();
  return out;
}

std::vector<std::pair<std::uint32_t, std::string>> sorted_seq_verdicts(
    const SequentialResult& s) {
  auto v = s.verdicts;
  std::sort(v.begin(), v.end());
  return v;
}

Cluster::PlacementFn alternate_units() {
  return [](const FlowKey&, std::uint64_t flowlet_seq) -> std::uint32_t {
    return flowlet_seq % 2 == 0 ? 1u : 2u;
  };
}

}  // namespace

TEST_CASE("forced migrations are invisible to a per-flow function") {
  auto pkts = burst_trace(3, 4, 3);
  ExperimentConfig xc;
  xc.nf = "lb";
  xc.collect_verdicts = true;

  SequentialResult want = run_sequential(pkts, "lb", xc.nf_config);

  for (StateMode sm :
       {StateMode::Proactive, StateMode::Reactive, StateMode::ExternalStore}) {
    int mode_idx = static_cast<int>(sm);
    CAPTURE(mode_idx);
    xc.state_mode = sm;
    RunOut got = run_cluster(xc, pkts, alternate_units());
    CHECK(got.externalized == pkts.size());
    CHECK(got.lost.empty());
    CHECK(got.held == 0);
    CHECK(got.counters.staleness_violations == 0);
    CHECK(got.verdicts == sorted_seq_verdicts(want));
    CHECK(got.finals == want.final_states);
  }
}

TEST_CASE("state modes pay for migrations differently") {
  auto pkts = burst_trace(3, 4, 3);
  ExperimentConfig xc;
  xc.nf = "lb";

  xc.state_mode = StateMode::Proactive;
  RunOut pro = run_cluster(xc, pkts, alternate_units());
  xc.state_mode = StateMode::Reactive;
  RunOut rea = run_cluster(xc, pkts, alternate_units());
  xc.state_mode = StateMode::ExternalStore;
  RunOut ext = run_cluster(xc, pkts, alternate_units());

  // Every non-first flowlet lands on the other unit: with replication most
  // resolve from an already-pushed copy, without it each one pulls.
  CHECK(pro.counters.proactive_hits > 0);
  CHECK(pro.counters.reactive_pulls < rea.counters.reactive_pulls);
  CHECK(rea.counters.proactive_hits == 0);
  CHECK(rea.counters.reactive_pulls == 9);  // 3 flows x 3 migrations
  CHECK(ext.counters.external_store_reads > 0);

  CHECK(pro.wire.count(MsgType::STATE_PUSH) == 1);
  CHECK(rea.wire.count(MsgType::STATE_PUSH) == 0);
  CHECK(rea.wire.at(MsgType::STATE_PULL_REQ).frames == 9);

  // The work-assignment identity holds everywhere.
  for (const RunOut* r : {&pro, &rea, &ext}) {
    CHECK(r->counters.fresh_inits + r->counters.local_hits +
              r->counters.proactive_hits + r->counters.reactive_pulls ==
          r->counters.allocation_opportunities);
  }
}

TEST_CASE("allocation opportunities count flowlets, not flows") {
  auto pkts = burst_trace(5, 5, 2);
  ExperimentConfig xc;
  xc.nf = "qos";

  xc.mode = AllocMode::Flowlet;
  RunOut fl = run_cluster(xc, pkts);
  CHECK(fl.counters.allocation_opportunities == 25);

  xc.mode = AllocMode::VanillaFlow;
  RunOut va = run_cluster(xc, pkts);
  CHECK(va.counters.allocation_opportunities == 5);

  xc.mode = AllocMode::SmartFlow;
  RunOut sm = run_cluster(xc, pkts);
  CHECK(sm.counters.allocation_opportunities >= 5);
  CHECK(sm.counters.allocation_opportunities <= fl.counters.allocation_opportunities);

  // All three modes deliver everything on a clean run.
  for (const RunOut* r : {&fl, &va, &sm}) {
    CHECK(r->externalized == pkts.size());
    CHECK(r->lost.empty());
    CHECK(r->held == 0);
  }
}

TEST_CASE("rebalanced and pinned flows still match the reference execution") {
  auto pkts = burst_trace(4, 3, 3);
  ExperimentConfig xc;
  xc.nf = "lb";
  xc.collect_verdicts = true;
  SequentialResult want = run_sequential(pkts, "lb", xc.nf_config);

  for (AllocMode m : {AllocMode::VanillaFlow, AllocMode::SmartFlow}) {
    xc.mode = m;
    RunOut got = run_cluster(xc, pkts);
    CHECK(got.verdicts == sorted_seq_verdicts(want));
    CHECK(got.finals == want.final_states);
    CHECK(got.counters.staleness_violations == 0);
  }
}

TEST_CASE("identical runs are identical") {
  auto pkts = burst_trace(4, 3, 2);
  ExperimentConfig xc;
  xc.nf = "nat";
  xc.collect_verdicts = true;
  xc.state_mode = StateMode::Proactive;

  RunOut a = run_cluster(xc, pkts);
  RunOut b = run_cluster(xc, pkts);
  CHECK(a.verdicts == b.verdicts);
  CHECK(a.finals == b.finals);
  CHECK(a.externalized == b.externalized);
  CHECK(a.counters.allocation_opportunities == b.counters.allocation_opportunities);
  CHECK(a.counters.reactive_pulls == b.counters.reactive_pulls);
}

TEST_CASE("a unit failure recovers from the logger mirror") {
  auto pkts = burst_trace(4, 3, 3);
  ExperimentConfig xc;
  xc.nf = "lb";
  xc.collect_verdicts = true;
  xc.fault_tolerant = true;
  xc.failures = {{false, 1, 1525}};  // kill unit 1 mid-trace

  RunOut got = run_cluster(xc, pkts);
  CHECK(got.counters.recovery_events == 1);
  CHECK(got.counters.recovery_snapshot_transfers == 1);
  CHECK(got.counters.staleness_violations == 0);
  CHECK(got.externalized + got.lost.size() == pkts.size());
  CHECK(got.held == 0);

  // Both the packets that died with the unit and the survivors must agree
  // with a reference run that simply skips the dead ones.
  std::set<std::uint32_t> skip;
  for (const auto& [idx, cause] : got.lost) skip.insert(idx);
  SequentialResult want = run_sequential(pkts, "lb", xc.nf_config, skip);
  CHECK(got.finals == want.final_states);

  SUBCASE("without the logger pairing there is no snapshot recovery") {
    xc.fault_tolerant = false;
    RunOut bare = run_cluster(xc, pkts);
    CHECK(bare.counters.recovery_events == 1);
    CHECK(bare.counters.recovery_snapshot_transfers == 0);
  }
}

TEST_CASE("a logger failure loses only its parked packets") {
  auto pkts = burst_trace(3, 3, 3);
  ExperimentConfig xc;
  xc.nf = "lb";
  xc.collect_verdicts = true;
  xc.fault_tolerant = true;
  xc.failures = {{true, 1, 1100}};  // kill unit 1's output logger

  RunOut got = run_cluster(xc, pkts);
  CHECK(got.counters.recovery_events == 1);
  CHECK(got.counters.staleness_violations == 0);
  CHECK(got.externalized + got.lost.size() == pkts.size());
  for (const auto& [idx, cause] : got.lost) CHECK(cause == "logger-failed");

  std::set<std::uint32_t> skip;
  for (const auto& [idx, cause] : got.lost) skip.insert(idx);
  SequentialResult want = run_sequential(pkts, "lb", xc.nf_config, skip);
  CHECK(got.finals == want.final_states);
}

TEST_CASE("the sequential reference executor is self-consistent") {
  auto pkts = burst_trace(3, 2, 2);
  NfConfig nfc = NfConfig::defaults();

  SequentialResult all = run_sequential(pkts, "lb", nfc);
  CHECK(all.verdicts.size() == pkts.size());
  CHECK(all.final_states.size() == 3);  // one entry per flow

  // Skipping a packet removes exactly its verdict and its state effect.
  SequentialResult skipped = run_sequential(pkts, "lb", nfc, {0});
  CHECK(skipped.verdicts.size() == pkts.size() - 1);
  for (const auto& [idx, text] : skipped.verdicts) CHECK(idx != 0);

  // The packet counter for flow 0 is one lower in the skipped run.
  // (Stored big-endian in the last 8 value bytes.)
  const auto& full_lb = all.final_states.at(fk(0));
  const auto& skip_lb = skipped.final_states.at(fk(0));
  REQUIRE(full_lb.size() == 1);
  REQUIRE(skip_lb.size() == 1);
  const Bytes& fv = full_lb.begin()->second;
  const Bytes& sv = skip_lb.begin()->second;
  REQUIRE(fv.size() == 12);
  CHECK(fv.back() == sv.back() + 1);
}
