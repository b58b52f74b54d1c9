#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <thread>

#include "snf/transport.hpp"

using namespace snf;

namespace {

std::mt19937_64 rng(0x5eed);

FlowKey random_key() {
  return {static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng()),
          static_cast<std::uint16_t>(rng()), static_cast<std::uint16_t>(rng()),
          static_cast<std::uint8_t>(rng())};
}

Bytes random_bytes(std::size_t max_len) {
  Bytes b(rng() % (max_len + 1));
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

TaggedState random_state() {
  TaggedState ts;
  ts.flow = random_key();
  ts.clock_tag = rng();
  ts.origin_unit = static_cast<std::uint32_t>(rng());
  ts.lossy = rng() % 2;
  int n = rng() % 5;
  for (int i = 0; i < n; ++i)
    ts.entries["k" + std::to_string(rng() % 100)] = random_bytes(64);
  return ts;
}

}  // namespace

TEST_CASE("frame layout is length-prefixed big-endian") {
  Bytes payload{0xAA, 0xBB, 0xCC};
  Bytes wire = encode_frame(MsgType::PACKET, payload);
  REQUIRE(wire.size() == 8);
  // length covers type byte + payload = 4.
  CHECK(wire[0] == 0x00);
  CHECK(wire[1] == 0x00);
  CHECK(wire[2] == 0x00);
  CHECK(wire[3] == 0x04);
  CHECK(wire[4] == 0x01);  // PACKET
  CHECK(wire[5] == 0xAA);
  CHECK(wire[6] == 0xBB);
  CHECK(wire[7] == 0xCC);

  Bytes empty_wire = encode_frame(MsgType::LOAD_REPORT, {});
  REQUIRE(empty_wire.size() == 5);
  CHECK(empty_wire[3] == 0x01);
  CHECK(empty_wire[4] == 0x06);
}

TEST_CASE("frame decode rejects garbage") {
  Bytes good = encode_frame(MsgType::STATE_PUSH, {1, 2, 3});
  Frame f = decode_frame(good);
  CHECK(f.type == MsgType::STATE_PUSH);
  CHECK(f.payload == Bytes{1, 2, 3});

  // Unknown type byte.
  Bytes bad = good;
  bad[4] = 0xFF;
  CHECK_THROWS_AS(decode_frame(bad), DecodeError);
  bad[4] = 0x00;
  CHECK_THROWS_AS(decode_frame(bad), DecodeError);

  // Truncations.
  Bytes short1(good.begin(), good.begin() + 3);
  CHECK_THROWS_AS(decode_frame(short1), DecodeError);
  Bytes short2(good.begin(), good.end() - 1);
  CHECK_THROWS_AS(decode_frame(short2), DecodeError);
}

TEST_CASE("frame reader reassembles frames from arbitrary chunks") {
  std::vector<Frame> sent;
  Bytes stream;
  for (int i = 0; i < 50; ++i) {
    MsgType t = static_cast<MsgType>(1 + rng() % 9);
    Bytes payload = random_bytes(200);
    Bytes wire = encode_frame(t, payload);
    stream.insert(stream.end(), wire.begin(), wire.end());
    sent.push_back({t, std::move(payload)});
  }

  FrameReader reader;
  std::vector<Frame> got;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    std::size_t n = std::min<std::size_t>(1 + rng() % 7, stream.size() - pos);
    auto frames = reader.feed(stream.data() + pos, n);
    got.insert(got.end(), frames.begin(), frames.end());
    pos += n;
  }
  REQUIRE(got.size() == sent.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].type == sent[i].type);
    CHECK(got[i].payload == sent[i].payload);
  }
  CHECK(reader.buffered() == 0);
}

TEST_CASE("packet metadata header is 33 bytes with fixed layout") {
  FlowKey k{0x0A000001u, 0xC0000201u, 0x1389, 0x0050, 6};
  PacketMeta m;
  m.logical_clock = 1;
  m.prev_unit.reset();
  m.flowlet_id = 2;

  WireWriter w;
  encode_packet_meta(w, k, m);
  Bytes b = w.take();
  REQUIRE(b.size() == 33);
  // src_ip
  CHECK(b[0] == 0x0A);
  CHECK(b[3] == 0x01);
  // dst_ip
  CHECK(b[4] == 0xC0);
  // src_port 0x1389
  CHECK(b[8] == 0x13);
  CHECK(b[9] == 0x89);
  // dst_port 0x0050
  CHECK(b[10] == 0x00);
  CHECK(b[11] == 0x50);
  // proto
  CHECK(b[12] == 6);
  // clock 1 -> last byte of the 8-byte slot
  for (int i = 13; i < 20; ++i) CHECK(b[i] == 0x00);
  CHECK(b[20] == 0x01);
  // absent prev_unit -> FF FF FF FF
  CHECK(b[21] == 0xFF);
  CHECK(b[22] == 0xFF);
  CHECK(b[23] == 0xFF);
  CHECK(b[24] == 0xFF);
  // flowlet id 2
  CHECK(b[32] == 0x02);

  WireReader r(b);
  FlowKey k2;
  PacketMeta m2;
  decode_packet_meta(r, k2, m2);
  CHECK(k2 == k);
  CHECK(m2.logical_clock == 1);
  CHECK_FALSE(m2.prev_unit.has_value());
  CHECK(m2.flowlet_id == 2);
}

TEST_CASE("every message type round-trips exactly") {
  for (int iter = 0; iter < 300; ++iter) {
    {
      PacketRecord p;
      p.arrival_ts = rng();
      p.key = random_key();
      p.size = static_cast<std::uint32_t>(rng());
      p.payload = random_bytes(100);
      p.trace_idx = static_cast<std::uint32_t>(rng());
      p.meta.logical_clock = rng();
      if (rng() % 2) p.meta.prev_unit = UnitId{static_cast<std::uint32_t>(rng() % 1000)};
      p.meta.flowlet_id = rng();
      PacketRecord q = decode_packet_msg(encode_packet_msg(p));
      CHECK(q.arrival_ts == p.arrival_ts);
      CHECK(q.key == p.key);
      CHECK(q.size == p.size);
      CHECK(q.payload == p.payload);
      CHECK(q.trace_idx == p.trace_idx);
      CHECK(q.meta.logical_clock == p.meta.logical_clock);
      CHECK(q.meta.prev_unit.has_value() == p.meta.prev_unit.has_value());
      if (p.meta.prev_unit) CHECK(q.meta.prev_unit->id == p.meta.prev_unit->id);
      CHECK(q.meta.flowlet_id == p.meta.flowlet_id);
    }
    {
      TaggedState ts = random_state();
      CHECK(decode_state_push(encode_state_push(ts)) == ts);
      CHECK(decode_state_pull_resp(encode_state_pull_resp(ts)) == ts);
    }
    {
      StatePullReq m{random_key(), rng(), static_cast<std::uint32_t>(rng()),
                     static_cast<std::uint32_t>(rng())};
      CHECK(decode_state_pull_req(encode_state_pull_req(m)) == m);
    }
    {
      DeltaLogMsg m;
      m.flow = random_key();
      m.packet_clock = rng();
      m.unit = static_cast<std::uint32_t>(rng());
      m.trace_idx = static_cast<std::uint32_t>(rng());
      m.baseline = rng() % 2;
      if (m.baseline) {
        m.snapshot = random_state();
      } else {
        // Every delta in one message belongs to the message's flow and clock;
        // the codec re-stamps them from the header rather than resending them.
        int n = rng() % 4;
        for (int i = 0; i < n; ++i)
          m.deltas.push_back(
              {m.flow, "d" + std::to_string(i), random_bytes(32), m.packet_clock});
      }
      CHECK(decode_delta_log(encode_delta_log(m)) == m);
    }
    {
      LoadReportMsg m{static_cast<std::uint32_t>(rng()), rng(), rng()};
      CHECK(decode_load_report(encode_load_report(m)) == m);
    }
    {
      CapacityReqMsg m{static_cast<std::uint32_t>(rng()),
                       static_cast<double>(rng() % 1000000) / 3.0};
      CHECK(decode_capacity_req(encode_capacity_req(m)) == m);
    }
    {
      CapacityGrantMsg m;
      m.controller = static_cast<std::uint32_t>(rng());
      int n = rng() % 4;
      for (int i = 0; i < n; ++i)
        m.allocations.emplace_back(static_cast<std::uint32_t>(rng() % 100),
                                   static_cast<double>(1 + rng() % 100) / 100.0);
      m.shortfall_bps = static_cast<double>(rng() % 1000);
      CHECK(decode_capacity_grant(encode_capacity_grant(m)) == m);
    }
    {
      RecoveryPullMsg m;
      m.role = rng() % 2;
      m.requester = static_cast<std::uint32_t>(rng());
      if (m.role == 0) {
        int n = rng() % 4;
        for (int i = 0; i < n; ++i) m.flows.push_back(random_key());
      } else {
        int n = rng() % 3;
        for (int i = 0; i < n; ++i) m.snapshots.push_back(random_state());
      }
      CHECK(decode_recovery_pull(encode_recovery_pull(m)) == m);
    }
  }
}

TEST_CASE("truncated payloads raise decode errors, not crashes") {
  TaggedState ts = random_state();
  ts.entries["key"] = {1, 2, 3, 4};
  Bytes full = encode_state_push(ts);
  for (std::size_t cut = 0; cut < full.size(); ++cut) {
    Bytes part(full.begin(), full.begin() + cut);
    CHECK_THROWS_AS(decode_state_push(part), DecodeError);
  }
}

TEST_CASE("node addresses partition by kind") {
  CHECK(NodeAddr::unit(7).kind() == NodeKind::Unit);
  CHECK(NodeAddr::unit(7).id() == 7);
  CHECK(NodeAddr::controller(2).kind() == NodeKind::Controller);
  CHECK(NodeAddr::controller(2).id() == 2);
  CHECK(NodeAddr::logger(7).kind() == NodeKind::Logger);
  CHECK(NodeAddr::logger(7).id() == 7);
  CHECK(NodeAddr::store().kind() == NodeKind::Store);
  CHECK(NodeAddr::unit(7) != NodeAddr::logger(7));
}

TEST_CASE("simulated links are FIFO with fixed latency") {
  EventQueue evq;
  SimNet net(evq, 50);
  std::vector<std::pair<Us, int>> deliveries;
  net.attach(NodeAddr::unit(2), [&](NodeAddr, Frame f) {
    deliveries.emplace_back(evq.now(), static_cast<int>(f.payload[0]));
  });
  net.send(NodeAddr::unit(1), NodeAddr::unit(2), MsgType::STATE_PUSH, {1});
  net.send(NodeAddr::unit(1), NodeAddr::unit(2), MsgType::STATE_PUSH, {2});
  evq.run();
  REQUIRE(deliveries.size() == 2);
  CHECK(deliveries[0] == std::pair<Us, int>{50, 1});
  CHECK(deliveries[1] == std::pair<Us, int>{50, 2});

  // Per-pair override.
  net.set_pair_latency(NodeAddr::unit(3), NodeAddr::unit(2), 7);
  net.send(NodeAddr::unit(3), NodeAddr::unit(2), MsgType::STATE_PUSH, {3});
  evq.run();
  CHECK(deliveries.back().first == 50 + 7);
}

TEST_CASE("frames to unknown nodes are counted, drop predicate drops") {
  EventQueue evq;
  SimNet net(evq, 10);
  int got = 0;
  net.attach(NodeAddr::unit(1), [&](NodeAddr, Frame) { ++got; });
  net.send(NodeAddr::unit(1), NodeAddr::unit(9), MsgType::PACKET, {});
  evq.run();
  CHECK(net.undeliverable_frames() == 1);

  net.set_drop_fn([](NodeAddr, NodeAddr, MsgType t, std::uint64_t) {
    return t == MsgType::PACKET;
  });
  net.send(NodeAddr::unit(2), NodeAddr::unit(1), MsgType::PACKET, {});
  net.send(NodeAddr::unit(2), NodeAddr::unit(1), MsgType::STATE_PUSH, {});
  evq.run();
  CHECK(got == 1);
  CHECK(net.dropped_frames() == 1);

  auto stats = net.sent_stats();
  CHECK(stats.at(MsgType::PACKET).frames == 2);
  CHECK(stats.at(MsgType::STATE_PUSH).frames == 1);
}

TEST_CASE("tap observes the exact encoded frame bytes") {
  EventQueue evq;
  SimNet net(evq, 10);
  net.attach(NodeAddr::unit(1), [&](NodeAddr, Frame) {});
  Bytes tapped;
  net.set_tap([&](NodeAddr, NodeAddr, const Bytes& frame) { tapped = frame; });
  net.send(NodeAddr::unit(2), NodeAddr::unit(1), MsgType::STATE_PUSH, {9, 9});
  CHECK(tapped == encode_frame(MsgType::STATE_PUSH, {9, 9}));
}

TEST_CASE("socket transport moves frames byte-for-byte") {
  TcpListener listener(0);
  std::uint16_t port = listener.port();

  std::thread server([&] {
    TcpSocket conn = listener.accept_one();
    // Echo three frames back.
    for (int i = 0; i < 3; ++i) {
      auto f = conn.recv_frame();
      REQUIRE(f.has_value());
      conn.send_frame(f->type, f->payload);
    }
  });

  TcpSocket client = TcpSocket::connect_to("127.0.0.1", port);
  std::vector<Frame> sent;
  for (int i = 0; i < 3; ++i) {
    MsgType t = static_cast<MsgType>(1 + rng() % 9);
    Bytes payload = random_bytes(5000);
    client.send_frame(t, payload);
    sent.push_back({t, std::move(payload)});
  }
  for (int i = 0; i < 3; ++i) {
    auto f = client.recv_frame();
    REQUIRE(f.has_value());
    CHECK(f->type == sent[i].type);
    CHECK(f->payload == sent[i].payload);
  }
  client.close();
  server.join();
}
