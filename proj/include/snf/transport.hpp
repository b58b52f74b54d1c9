#pragma once
// Wire contract and the two interchangeable carriers: an in-simulator network
// with per-(src,dst) FIFO latency links, and a blocking TCP transport that
// moves the exact same frames.
//
// Frame layout: u32 big-endian length, then 1 byte message type, then payload
// (`length` covers type byte + payload). Packet metadata travels as a 33-byte
// big-endian header: src_ip(4) dst_ip(4) src_port(2) dst_port(2) proto(1)
// logical_clock(8) prev_unit(4, 0xFFFFFFFF = none) flowlet_id(8).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "snf/core.hpp"
#include "snf/runtime.hpp"
#include "snf/sim.hpp"

namespace snf {

enum class MsgType : std::uint8_t {
  PACKET = 1,
  STATE_PUSH = 2,
  STATE_PULL_REQ = 3,
  STATE_PULL_RESP = 4,
  DELTA_LOG = 5,
  LOAD_REPORT = 6,
  CAPACITY_REQ = 7,
  CAPACITY_GRANT = 8,
  RECOVERY_PULL = 9,
};

const char* to_string(MsgType t);

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- primitive big-endian writer/reader ---

class WireWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);  // IEEE-754 bits, big-endian
  void bytes(const Bytes& b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str16(const std::string& s);   // u16 length + bytes
  void blob32(const Bytes& b);        // u32 length + bytes
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

class WireReader {
 public:
  WireReader(const std::uint8_t* data, std::size_t len) : p_(data), end_(data + len) {}
  explicit WireReader(const Bytes& b) : WireReader(b.data(), b.size()) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str16();
  Bytes blob32();
  bool done() const { return p_ == end_; }
  void expect_done() const;

 private:
  void need(std::size_t n) const;
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

// --- frame ---

Bytes encode_frame(MsgType type, const Bytes& payload);

struct Frame {
  MsgType type;
  Bytes payload;
};

// Decodes one complete frame; throws DecodeError on truncation/bad type.
Frame decode_frame(const Bytes& wire);

// Incremental decoder for stream transports: feed arbitrary chunks, collect
// complete frames as they form.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame = 1 << 26) : max_frame_(max_frame) {}
  std::vector<Frame> feed(const std::uint8_t* data, std::size_t len);
  std::size_t buffered() const { return buf_.size(); }

 private:
  std::size_t max_frame_;
  Bytes buf_;
};

// --- message payloads ---

void encode_flow_key(WireWriter& w, const FlowKey& k);
FlowKey decode_flow_key(WireReader& r);

void encode_packet_meta(WireWriter& w, const FlowKey& k, const PacketMeta& m);
// 33-byte header split back into its parts.
void decode_packet_meta(WireReader& r, FlowKey& k, PacketMeta& m);

// PACKET: meta header + arrival_ts u64 + size u32 + trace_idx u32 + payload
// blob. arrival_ts and trace_idx are harness bookkeeping so receivers can
// account latency per input packet.
Bytes encode_packet_msg(const PacketRecord& p);
PacketRecord decode_packet_msg(const Bytes& payload);

// Tagged snapshot body, shared by STATE_PUSH / STATE_PULL_RESP / recovery.
void encode_tagged_state(WireWriter& w, const TaggedState& ts);
TaggedState decode_tagged_state(WireReader& r);

Bytes encode_state_push(const TaggedState& ts);
TaggedState decode_state_push(const Bytes& payload);

struct StatePullReq {
  FlowKey flow;
  std::uint64_t want_clock = 0;   // clock of the packet waiting on the state
  std::uint32_t requester = 0;    // unit to answer
  std::uint32_t prev_hint = kNoUnit;  // where an external store can fetch from
  bool operator==(const StatePullReq&) const = default;
};
Bytes encode_state_pull_req(const StatePullReq& m);
StatePullReq decode_state_pull_req(const Bytes& payload);

Bytes encode_state_pull_resp(const TaggedState& ts);
TaggedState decode_state_pull_resp(const Bytes& payload);

// DELTA_LOG: either the puts of one processed packet, or (baseline flag) a
// full snapshot seeding the logger's mirror when a flow first appears at a
// unit.
struct DeltaLogMsg {
  FlowKey flow;
  std::uint64_t packet_clock = 0;
  std::uint32_t unit = 0;
  std::uint32_t trace_idx = 0;  // packet being released
  bool baseline = false;
  TaggedState snapshot;               // when baseline
  std::vector<DeltaRecord> deltas;    // otherwise (may be empty)
  bool operator==(const DeltaLogMsg&) const = default;
};
Bytes encode_delta_log(const DeltaLogMsg& m);
DeltaLogMsg decode_delta_log(const Bytes& payload);

struct LoadReportMsg {
  std::uint32_t unit = 0;
  std::uint64_t bucket_start_us = 0;
  std::uint64_t bytes = 0;
  bool operator==(const LoadReportMsg&) const = default;
};
Bytes encode_load_report(const LoadReportMsg& m);
LoadReportMsg decode_load_report(const Bytes& payload);

struct CapacityReqMsg {
  std::uint32_t controller = 0;
  double demand_bps = 0;
  bool operator==(const CapacityReqMsg&) const = default;
};
Bytes encode_capacity_req(const CapacityReqMsg& m);
CapacityReqMsg decode_capacity_req(const Bytes& payload);

struct CapacityGrantMsg {
  std::uint32_t controller = 0;
  std::vector<std::pair<std::uint32_t, double>> allocations;  // unit, fraction
  double shortfall_bps = 0;
  bool operator==(const CapacityGrantMsg&) const = default;
};
Bytes encode_capacity_grant(const CapacityGrantMsg& m);
CapacityGrantMsg decode_capacity_grant(const Bytes& payload);

// RECOVERY_PULL round trip: role 0 requests (empty flow list = everything the
// responder holds), role 1 answers with tagged snapshots.
struct RecoveryPullMsg {
  std::uint8_t role = 0;  // 0 = request, 1 = response
  std::uint32_t requester = 0;
  std::vector<FlowKey> flows;         // role 0
  std::vector<TaggedState> snapshots; // role 1
  bool operator==(const RecoveryPullMsg&) const = default;
};
Bytes encode_recovery_pull(const RecoveryPullMsg& m);
RecoveryPullMsg decode_recovery_pull(const Bytes& payload);

// --- node addressing ---

enum class NodeKind : std::uint8_t { Unit = 0, Controller = 1, Logger = 2, Store = 3 };

struct NodeAddr {
  std::uint32_t raw = 0;
  static NodeAddr unit(std::uint32_t id) { return {id}; }
  static NodeAddr controller(std::uint32_t id) { return {0x10000000u | id}; }
  static NodeAddr logger(std::uint32_t unit_id) { return {0x20000000u | unit_id}; }
  static NodeAddr store() { return {0x30000000u}; }
  NodeKind kind() const { return static_cast<NodeKind>(raw >> 28); }
  std::uint32_t id() const { return raw & 0x0FFFFFFFu; }
  auto operator<=>(const NodeAddr&) const = default;
};

std::string to_string(NodeAddr a);

// --- simulated carrier ---

// Delivers frames between registered nodes over per-(src,dst) FIFO links with
// a fixed one-way latency (per-pair overrides for experiments). Frames to
// unknown or removed nodes are counted and dropped.
class SimNet {
 public:
  using Handler = std::function<void(NodeAddr src, Frame frame)>;

  SimNet(EventQueue& evq, Us default_latency_us)
      : evq_(evq), latency_(default_latency_us) {}

  void attach(NodeAddr addr, Handler h) { nodes_[addr] = std::move(h); }
  void detach(NodeAddr addr) { nodes_.erase(addr); }
  bool attached(NodeAddr addr) const { return nodes_.count(addr) != 0; }

  void set_pair_latency(NodeAddr src, NodeAddr dst, Us latency_us) {
    pair_latency_[{src, dst}] = latency_us;
  }
  Us latency(NodeAddr src, NodeAddr dst) const;

  // Drop predicate for fault experiments; return true to drop the frame.
  using DropFn = std::function<bool(NodeAddr src, NodeAddr dst, MsgType, std::uint64_t seq)>;
  void set_drop_fn(DropFn fn) { drop_ = std::move(fn); }

  // Observes every encoded frame as it is sent (before the drop predicate),
  // so a test can compare the simulated carrier's bytes with a socket's.
  using TapFn = std::function<void(NodeAddr src, NodeAddr dst, const Bytes& frame)>;
  void set_tap(TapFn fn) { tap_ = std::move(fn); }

  void send(NodeAddr src, NodeAddr dst, MsgType type, Bytes payload);

  struct TypeStats {
    std::uint64_t frames = 0;
    std::uint64_t bytes = 0;  // encoded frame bytes including length prefix
  };
  const std::map<MsgType, TypeStats>& sent_stats() const { return sent_; }
  std::uint64_t dropped_frames() const { return dropped_; }
  std::uint64_t undeliverable_frames() const { return undeliverable_; }

 private:
  EventQueue& evq_;
  Us latency_;
  std::map<NodeAddr, Handler> nodes_;
  std::map<std::pair<NodeAddr, NodeAddr>, Us> pair_latency_;
  DropFn drop_;
  TapFn tap_;
  std::map<MsgType, TypeStats> sent_;
  std::uint64_t dropped_ = 0;
  std::uint64_t undeliverable_ = 0;
  std::uint64_t send_seq_ = 0;
};

// --- socket carrier (blocking, localhost experiments and the codec gate) ---

class TcpSocket {
 public:
  TcpSocket() = default;
  explicit TcpSocket(int fd) : fd_(fd) {}
  TcpSocket(const TcpSocket&) = delete;
  TcpSocket& operator=(const TcpSocket&) = delete;
  TcpSocket(TcpSocket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  TcpSocket& operator=(TcpSocket&& o) noexcept;
  ~TcpSocket();

  static TcpSocket connect_to(const std::string& host, std::uint16_t port);
  void send_frame(MsgType type, const Bytes& payload);
  // Blocks for one complete frame; nullopt on orderly peer close.
  std::optional<Frame> recv_frame();
  int fd() const { return fd_; }
  void close();

 private:
  void send_all(const std::uint8_t* data, std::size_t len);
  int fd_ = -1;
  FrameReader reader_;
  std::vector<Frame> ready_;
};

class TcpListener {
 public:
  // Binds 127.0.0.1:port (0 = ephemeral); throws std::runtime_error on failure.
  explicit TcpListener(std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  std::uint16_t port() const { return port_; }
  TcpSocket accept_one();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace snf
