#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <string>
#include <vector>

#include "snf/fault.hpp"

using namespace snf;

namespace {

FlowKey fk(std::uint32_t n) {
  FlowKey k;
  k.src_ip = 0x0A000000u | n;
  k.dst_ip = 0xC6336401u;
  k.src_port = 1000;
  k.dst_port = 80;
  k.proto = 17;
  return k;
}

DeltaLogMsg baseline_msg(const FlowKey& f, std::uint64_t clock, std::uint32_t trace,
                         std::map<std::string, Bytes> entries = {}, bool lossy = false) {
  DeltaLogMsg m;
  m.flow = f;
  m.packet_clock = clock;
  m.unit = 1;
  m.trace_idx = trace;
  m.baseline = true;
  m.snapshot.flow = f;
  m.snapshot.clock_tag = clock;
  m.snapshot.origin_unit = 1;
  m.snapshot.lossy = lossy;
  m.snapshot.entries = std::move(entries);
  return m;
}

DeltaLogMsg delta_msg(const FlowKey& f, std::uint64_t clock, std::uint32_t trace,
                      std::vector<DeltaRecord> deltas = {}) {
  DeltaLogMsg m;
  m.flow = f;
  m.packet_clock = clock;
  m.unit = 1;
  m.trace_idx = trace;
  m.deltas = std::move(deltas);
  return m;
}

using Rel = std::vector<std::uint32_t>;

}  // namespace

TEST_CASE("in-order stream releases every packet immediately") {
  OutputLogger log(1);
  FlowKey f = fk(1);

  auto a0 = log.on_delta_log(baseline_msg(f, 1, 100, {{"k", Bytes{1}}}));
  CHECK(a0.release == Rel{100});
  CHECK_FALSE(a0.need_resync);

  auto a1 = log.on_delta_log(delta_msg(f, 2, 101, {{f, "k", Bytes{2}, 2}}));
  CHECK(a1.release == Rel{101});

  // Packets that wrote nothing still advance the mirror and release.
  auto a2 = log.on_delta_log(delta_msg(f, 3, 102));
  CHECK(a2.release == Rel{102});

  const TaggedState* m = log.mirror(f);
  REQUIRE(m != nullptr);
  CHECK(m->clock_tag == 3);
  CHECK(m->entries.at("k") == Bytes{2});
  CHECK(log.releases() == 3);
  CHECK(log.resyncs_requested() == 0);
  CHECK(log.held_indices().empty());
}

TEST_CASE("duplicate or stale clocks are ignored without a resync") {
  OutputLogger log(1);
  FlowKey f = fk(1);
  log.on_delta_log(baseline_msg(f, 3, 0));

  auto dup = log.on_delta_log(delta_msg(f, 3, 1));
  CHECK(dup.release.empty());
  CHECK_FALSE(dup.need_resync);
  auto old = log.on_delta_log(delta_msg(f, 2, 2));
  CHECK(old.release.empty());
  CHECK_FALSE(old.need_resync);
  CHECK(log.releases() == 1);
  CHECK(log.mirror(f)->clock_tag == 3);
}

TEST_CASE("a clock gap holds packets and asks for one snapshot") {
  OutputLogger log(1);
  FlowKey f = fk(1);
  log.on_delta_log(baseline_msg(f, 1, 0, {{"k", Bytes{1}}}));

  // Clock 2 went missing; 3 cannot apply.
  auto gap = log.on_delta_log(delta_msg(f, 3, 10, {{f, "k", Bytes{3}, 3}}));
  CHECK(gap.release.empty());
  CHECK(gap.need_resync);
  CHECK(gap.resync_flow == f);
  CHECK(log.resyncs_requested() == 1);

  // Later packets pile up behind the same resync; no second request.
  auto next = log.on_delta_log(delta_msg(f, 4, 11));
  CHECK(next.release.empty());
  CHECK_FALSE(next.need_resync);
  CHECK(log.resyncs_requested() == 1);
  CHECK(log.held_indices() == Rel{10, 11});

  // The mirror must not have applied the gapped delta.
  CHECK(log.mirror(f)->clock_tag == 1);
  CHECK(log.mirror(f)->entries.at("k") == Bytes{1});

  SUBCASE("the snapshot answer releases everything it covers, clock order") {
    TaggedState snap;
    snap.flow = f;
    snap.clock_tag = 4;
    snap.entries = {{"k", Bytes{4}}};
    auto act = log.on_resync_response(snap);
    CHECK(act.release == Rel{10, 11});
    CHECK(log.mirror(f)->clock_tag == 4);
    CHECK(log.mirror(f)->entries.at("k") == Bytes{4});
    CHECK(log.held_indices().empty());

    // The stream is healthy again: clock 5 applies directly.
    CHECK(log.on_delta_log(delta_msg(f, 5, 12)).release == Rel{12});
  }

  SUBCASE("holds above the snapshot tag are not released") {
    TaggedState snap;
    snap.flow = f;
    snap.clock_tag = 3;
    auto act = log.on_resync_response(snap);
    CHECK(act.release == Rel{10});  // clock 4 was not covered
    CHECK(log.held_indices().empty());
  }

  SUBCASE("a fresh baseline also ends the pending resync") {
    auto act = log.on_delta_log(baseline_msg(f, 4, 12));
    // Held clocks 3 and 4 are covered by the new tag, then the baseline's own
    // packet releases.
    CHECK(act.release == Rel{10, 11, 12});
    CHECK_FALSE(act.need_resync);
    CHECK(log.on_delta_log(delta_msg(f, 5, 13)).release == Rel{13});
  }
}

TEST_CASE("resync releases sort by clock even if holds arrived shuffled") {
  OutputLogger log(1);
  FlowKey f = fk(1);
  log.on_delta_log(baseline_msg(f, 1, 0));
  log.on_delta_log(delta_msg(f, 4, 40));  // gap -> held
  log.on_delta_log(delta_msg(f, 3, 30));  // held while pending (out of order)
  TaggedState snap;
  snap.flow = f;
  snap.clock_tag = 4;
  CHECK(log.on_resync_response(snap).release == Rel{30, 40});
}

TEST_CASE("deltas arriving before any baseline hold and resync") {
  OutputLogger log(1);
  FlowKey f = fk(1);
  auto act = log.on_delta_log(delta_msg(f, 5, 7, {{f, "k", Bytes{5}, 5}}));
  CHECK(act.release.empty());
  CHECK(act.need_resync);
  CHECK(act.resync_flow == f);
  CHECK(log.mirror_flows() == 1);
  CHECK(log.held_indices() == Rel{7});

  TaggedState snap;
  snap.flow = f;
  snap.clock_tag = 5;
  snap.entries = {{"k", Bytes{5}}};
  CHECK(log.on_resync_response(snap).release == Rel{7});
}

TEST_CASE("a lossy mirror accepts one forward jump") {
  OutputLogger log(1);
  FlowKey f = fk(1);
  log.on_delta_log(baseline_msg(f, 5, 0, {}, /*lossy=*/true));

  auto jump = log.on_delta_log(delta_msg(f, 9, 1, {{f, "k", Bytes{9}, 9}}));
  CHECK(jump.release == Rel{1});
  CHECK(log.mirror(f)->clock_tag == 9);
  CHECK_FALSE(log.mirror(f)->lossy);  // strictness resumes

  auto gap = log.on_delta_log(delta_msg(f, 11, 2));
  CHECK(gap.release.empty());
  CHECK(gap.need_resync);
}

TEST_CASE("flows are isolated from each other's gaps") {
  OutputLogger log(1);
  FlowKey a = fk(1), b = fk(2);
  log.on_delta_log(baseline_msg(a, 1, 0));
  log.on_delta_log(baseline_msg(b, 1, 1));
  auto gap = log.on_delta_log(delta_msg(a, 5, 2));
  CHECK(gap.need_resync);
  // Flow b keeps flowing.
  CHECK(log.on_delta_log(delta_msg(b, 2, 3)).release == Rel{3});
  CHECK(log.held_indices() == Rel{2});
  CHECK(log.mirror_flows() == 2);
}

TEST_CASE("recovery snapshots are lossy-marked copies of the mirror") {
  OutputLogger log(1);
  FlowKey a = fk(1), b = fk(2);
  log.on_delta_log(baseline_msg(a, 2, 0, {{"x", Bytes{1, 2}}}));
  log.on_delta_log(baseline_msg(b, 7, 1));

  auto snaps = log.recovery_snapshots();
  REQUIRE(snaps.size() == 2);
  for (const auto& ts : snaps) {
    CHECK(ts.lossy);  // the adopter must tolerate the in-flight hole
    if (ts.flow == a) {
      CHECK(ts.clock_tag == 2);
      CHECK(ts.entries.at("x") == Bytes{1, 2});
    } else {
      CHECK(ts.flow == b);
      CHECK(ts.clock_tag == 7);
    }
  }
  // Taking snapshots does not disturb the live mirror.
  CHECK_FALSE(log.mirror(a)->lossy);
  CHECK(log.on_delta_log(delta_msg(a, 3, 2)).release == Rel{2});
}

TEST_CASE("a replacement logger seeds its mirror from unit snapshots") {
  OutputLogger log(2);
  FlowKey a = fk(1), b = fk(2);
  TaggedState sa;
  sa.flow = a;
  sa.clock_tag = 4;
  sa.entries = {{"k", Bytes{4}}};
  TaggedState sb;
  sb.flow = b;
  sb.clock_tag = 9;
  log.seed_all({sa, sb});

  CHECK(log.mirror_flows() == 2);
  REQUIRE(log.mirror(a) != nullptr);
  CHECK(log.mirror(a)->clock_tag == 4);
  CHECK(log.held_indices().empty());

  // Seeded flows continue in-order with no resync.
  CHECK(log.on_delta_log(delta_msg(a, 5, 50)).release == Rel{50});
  CHECK(log.on_delta_log(delta_msg(b, 10, 51)).release == Rel{51});
  CHECK(log.resyncs_requested() == 0);
}
