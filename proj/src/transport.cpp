#include "snf/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace snf {

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::PACKET: return "PACKET";
    case MsgType::STATE_PUSH: return "STATE_PUSH";
    case MsgType::STATE_PULL_REQ: return "STATE_PULL_REQ";
    case MsgType::STATE_PULL_RESP: return "STATE_PULL_RESP";
    case MsgType::DELTA_LOG: return "DELTA_LOG";
    case MsgType::LOAD_REPORT: return "LOAD_REPORT";
    case MsgType::CAPACITY_REQ: return "CAPACITY_REQ";
    case MsgType::CAPACITY_GRANT: return "CAPACITY_GRANT";
    case MsgType::RECOVERY_PULL: return "RECOVERY_PULL";
  }
  return "?";
}

// --- writer/reader ---

void WireWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  buf_.push_back(static_cast<std::uint8_t>(v));
}
void WireWriter::u32(std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}
void WireWriter::u64(std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}
void WireWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  u64(bits);
}
void WireWriter::str16(const std::string& s) {
  if (s.size() > UINT16_MAX) throw std::length_error("str16 too long");
  u16(static_cast<std::uint16_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}
void WireWriter::blob32(const Bytes& b) {
  u32(static_cast<std::uint32_t>(b.size()));
  bytes(b);
}

void WireReader::need(std::size_t n) const {
  if (static_cast<std::size_t>(end_ - p_) < n) throw DecodeError("truncated message");
}
std::uint8_t WireReader::u8() {
  need(1);
  return *p_++;
}
std::uint16_t WireReader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(p_[0] << 8 | p_[1]);
  p_ += 2;
  return v;
}
std::uint32_t WireReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | p_[i];
  p_ += 4;
  return v;
}
std::uint64_t WireReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | p_[i];
  p_ += 8;
  return v;
}
double WireReader::f64() {
  std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}
std::string WireReader::str16() {
  std::uint16_t n = u16();
  need(n);
  std::string s(reinterpret_cast<const char*>(p_), n);
  p_ += n;
  return s;
}
Bytes WireReader::blob32() {
  std::uint32_t n = u32();
  need(n);
  Bytes b(p_, p_ + n);
  p_ += n;
  return b;
}
void WireReader::expect_done() const {
  if (!done()) throw DecodeError("trailing bytes in message");
}

// --- frame ---

Bytes encode_frame(MsgType type, const Bytes& payload) {
  Bytes out;
  out.reserve(5 + payload.size());
  std::uint32_t len = static_cast<std::uint32_t>(1 + payload.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(len >> s));
  out.push_back(static_cast<std::uint8_t>(type));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

static MsgType check_type(std::uint8_t raw) {
  if (raw < 1 || raw > 9) throw DecodeError("unknown message type");
  return static_cast<MsgType>(raw);
}

Frame decode_frame(const Bytes& wire) {
  if (wire.size() < 5) throw DecodeError("short frame");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len = len << 8 | wire[i];
  if (len < 1 || wire.size() != 4u + len) throw DecodeError("frame length mismatch");
  Frame f;
  f.type = check_type(wire[4]);
  f.payload.assign(wire.begin() + 5, wire.end());
  return f;
}

std::vector<Frame> FrameReader::feed(const std::uint8_t* data, std::size_t len) {
  buf_.insert(buf_.end(), data, data + len);
  std::vector<Frame> out;
  std::size_t off = 0;
  while (buf_.size() - off >= 4) {
    std::uint32_t flen = 0;
    for (int i = 0; i < 4; ++i) flen = flen << 8 | buf_[off + i];
    if (flen < 1 || flen > max_frame_) throw DecodeError("bad frame length");
    if (buf_.size() - off < 4u + flen) break;
    Frame f;
    f.type = check_type(buf_[off + 4]);
    f.payload.assign(buf_.begin() + off + 5, buf_.begin() + off + 4 + flen);
    out.push_back(std::move(f));
    off += 4u + flen;
  }
  buf_.erase(buf_.begin(), buf_.begin() + off);
  return out;
}

// --- message bodies ---

void encode_flow_key(WireWriter& w, const FlowKey& k) {
  w.u32(k.src_ip);
  w.u32(k.dst_ip);
  w.u16(k.src_port);
  w.u16(k.dst_port);
  w.u8(k.proto);
}

FlowKey decode_flow_key(WireReader& r) {
  FlowKey k;
  k.src_ip = r.u32();
  k.dst_ip = r.u32();
  k.src_port = r.u16();
  k.dst_port = r.u16();
  k.proto = r.u8();
  return k;
}

void encode_packet_meta(WireWriter& w, const FlowKey& k, const PacketMeta& m) {
  encode_flow_key(w, k);
  w.u64(m.logical_clock);
  w.u32(m.prev_unit ? m.prev_unit->id : kNoUnit);
  w.u64(m.flowlet_id);
}

void decode_packet_meta(WireReader& r, FlowKey& k, PacketMeta& m) {
  k = decode_flow_key(r);
  m.logical_clock = r.u64();
  std::uint32_t prev = r.u32();
  m.prev_unit = prev == kNoUnit ? std::nullopt : std::make_optional(UnitId{prev});
  m.flowlet_id = r.u64();
}

Bytes encode_packet_msg(const PacketRecord& p) {
  WireWriter w;
  encode_packet_meta(w, p.key, p.meta);
  w.u64(p.arrival_ts);
  w.u32(p.size);
  w.u32(p.trace_idx);
  w.blob32(p.payload);
  return w.take();
}

PacketRecord decode_packet_msg(const Bytes& payload) {
  WireReader r(payload);
  PacketRecord p;
  decode_packet_meta(r, p.key, p.meta);
  p.arrival_ts = r.u64();
  p.size = r.u32();
  p.trace_idx = r.u32();
  p.payload = r.blob32();
  r.expect_done();
  return p;
}

void encode_tagged_state(WireWriter& w, const TaggedState& ts) {
  encode_flow_key(w, ts.flow);
  w.u64(ts.clock_tag);
  w.u32(ts.origin_unit);
  w.u8(ts.lossy ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ts.entries.size()));
  for (const auto& [k, v] : ts.entries) {
    w.str16(k);
    w.blob32(v);
  }
}

TaggedState decode_tagged_state(WireReader& r) {
  TaggedState ts;
  ts.flow = decode_flow_key(r);
  ts.clock_tag = r.u64();
  ts.origin_unit = r.u32();
  ts.lossy = r.u8() != 0;
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = r.str16();
    ts.entries[k] = r.blob32();
  }
  return ts;
}

Bytes encode_state_push(const TaggedState& ts) {
  WireWriter w;
  encode_tagged_state(w, ts);
  return w.take();
}

TaggedState decode_state_push(const Bytes& payload) {
  WireReader r(payload);
  TaggedState ts = decode_tagged_state(r);
  r.expect_done();
  return ts;
}

Bytes encode_state_pull_req(const StatePullReq& m) {
  WireWriter w;
  encode_flow_key(w, m.flow);
  w.u64(m.want_clock);
  w.u32(m.requester);
  w.u32(m.prev_hint);
  return w.take();
}

StatePullReq decode_state_pull_req(const Bytes& payload) {
  WireReader r(payload);
  StatePullReq m;
  m.flow = decode_flow_key(r);
  m.want_clock = r.u64();
  m.requester = r.u32();
  m.prev_hint = r.u32();
  r.expect_done();
  return m;
}

Bytes encode_state_pull_resp(const TaggedState& ts) { return encode_state_push(ts); }

TaggedState decode_state_pull_resp(const Bytes& payload) {
  return decode_state_push(payload);
}

Bytes encode_delta_log(const DeltaLogMsg& m) {
  WireWriter w;
  encode_flow_key(w, m.flow);
  w.u64(m.packet_clock);
  w.u32(m.unit);
  w.u32(m.trace_idx);
  w.u8(m.baseline ? 1 : 0);
  if (m.baseline) {
    encode_tagged_state(w, m.snapshot);
  } else {
    w.u32(static_cast<std::uint32_t>(m.deltas.size()));
    for (const DeltaRecord& d : m.deltas) {
      w.str16(d.key);
      w.blob32(d.value);
    }
  }
  return w.take();
}

DeltaLogMsg decode_delta_log(const Bytes& payload) {
  WireReader r(payload);
  DeltaLogMsg m;
  m.flow = decode_flow_key(r);
  m.packet_clock = r.u64();
  m.unit = r.u32();
  m.trace_idx = r.u32();
  m.baseline = r.u8() != 0;
  if (m.baseline) {
    m.snapshot = decode_tagged_state(r);
  } else {
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      DeltaRecord d;
      d.flow = m.flow;
      d.packet_clock = m.packet_clock;
      d.key = r.str16();
      d.value = r.blob32();
      m.deltas.push_back(std::move(d));
    }
  }
  r.expect_done();
  return m;
}

Bytes encode_load_report(const LoadReportMsg& m) {
  WireWriter w;
  w.u32(m.unit);
  w.u64(m.bucket_start_us);
  w.u64(m.bytes);
  return w.take();
}

LoadReportMsg decode_load_report(const Bytes& payload) {
  WireReader r(payload);
  LoadReportMsg m;
  m.unit = r.u32();
  m.bucket_start_us = r.u64();
  m.bytes = r.u64();
  r.expect_done();
  return m;
}

Bytes encode_capacity_req(const CapacityReqMsg& m) {
  WireWriter w;
  w.u32(m.controller);
  w.f64(m.demand_bps);
  return w.take();
}

CapacityReqMsg decode_capacity_req(const Bytes& payload) {
  WireReader r(payload);
  CapacityReqMsg m;
  m.controller = r.u32();
  m.demand_bps = r.f64();
  r.expect_done();
  return m;
}

Bytes encode_capacity_grant(const CapacityGrantMsg& m) {
  WireWriter w;
  w.u32(m.controller);
  w.u32(static_cast<std::uint32_t>(m.allocations.size()));
  for (const auto& [unit, frac] : m.allocations) {
    w.u32(unit);
    w.f64(frac);
  }
  w.f64(m.shortfall_bps);
  return w.take();
}

CapacityGrantMsg decode_capacity_grant(const Bytes& payload) {
  WireReader r(payload);
  CapacityGrantMsg m;
  m.controller = r.u32();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t unit = r.u32();
    double frac = r.f64();
    m.allocations.emplace_back(unit, frac);
  }
  m.shortfall_bps = r.f64();
  r.expect_done();
  return m;
}

Bytes encode_recovery_pull(const RecoveryPullMsg& m) {
  WireWriter w;
  w.u8(m.role);
  w.u32(m.requester);
  if (m.role == 0) {
    w.u32(static_cast<std::uint32_t>(m.flows.size()));
    for (const FlowKey& f : m.flows) encode_flow_key(w, f);
  } else {
    w.u32(static_cast<std::uint32_t>(m.snapshots.size()));
    for (const TaggedState& ts : m.snapshots) encode_tagged_state(w, ts);
  }
  return w.take();
}

RecoveryPullMsg decode_recovery_pull(const Bytes& payload) {
  WireReader r(payload);
  RecoveryPullMsg m;
  m.role = r.u8();
  if (m.role > 1) throw DecodeError("bad recovery role");
  m.requester = r.u32();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    if (m.role == 0)
      m.flows.push_back(decode_flow_key(r));
    else
      m.snapshots.push_back(decode_tagged_state(r));
  }
  r.expect_done();
  return m;
}

// --- node addressing / SimNet ---

std::string to_string(NodeAddr a) {
  const char* kind = "?";
  switch (a.kind()) {
    case NodeKind::Unit: kind = "unit"; break;
    case NodeKind::Controller: kind = "ctl"; break;
    case NodeKind::Logger: kind = "ol"; break;
    case NodeKind::Store: kind = "store"; break;
  }
  return std::string(kind) + std::to_string(a.id());
}

Us SimNet::latency(NodeAddr src, NodeAddr dst) const {
  auto it = pair_latency_.find({src, dst});
  return it == pair_latency_.end() ? latency_ : it->second;
}

void SimNet::send(NodeAddr src, NodeAddr dst, MsgType type, Bytes payload) {
  Bytes wire = encode_frame(type, payload);
  TypeStats& st = sent_[type];
  st.frames += 1;
  st.bytes += wire.size();
  if (tap_) tap_(src, dst, wire);
  std::uint64_t seq = send_seq_++;
  if (drop_ && drop_(src, dst, type, seq)) {
    ++dropped_;
    return;
  }
  Us at = evq_.now() + latency(src, dst);
  // Frames are re-decoded at delivery, so the carrier moves bytes, not refs.
  evq_.schedule(at, [this, src, dst, wire = std::move(wire)]() {
    auto it = nodes_.find(dst);
    if (it == nodes_.end()) {
      ++undeliverable_;
      return;
    }
    it->second(src, decode_frame(wire));
  });
}

// --- sockets ---

TcpSocket& TcpSocket::operator=(TcpSocket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

TcpSocket::~TcpSocket() { close(); }

void TcpSocket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpSocket TcpSocket::connect_to(const std::string& host, std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("bad address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw std::runtime_error("connect() failed");
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return TcpSocket(fd);
}

void TcpSocket::send_all(const std::uint8_t* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    ssize_t n = ::send(fd_, data + off, len - off, 0);
    if (n <= 0) throw std::runtime_error("send() failed");
    off += static_cast<std::size_t>(n);
  }
}

void TcpSocket::send_frame(MsgType type, const Bytes& payload) {
  Bytes wire = encode_frame(type, payload);
  send_all(wire.data(), wire.size());
}

std::optional<Frame> TcpSocket::recv_frame() {
  while (ready_.empty()) {
    std::uint8_t buf[4096];
    ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) return std::nullopt;
    if (n < 0) throw std::runtime_error("recv() failed");
    auto frames = reader_.feed(buf, static_cast<std::size_t>(n));
    ready_.insert(ready_.end(), std::make_move_iterator(frames.begin()),
                  std::make_move_iterator(frames.end()));
  }
  Frame f = std::move(ready_.front());
  ready_.erase(ready_.begin());
  return f;
}

TcpListener::TcpListener(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd_, 8) != 0) {
    ::close(fd_);
    throw std::runtime_error("bind/listen failed");
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

TcpSocket TcpListener::accept_one() {
  int cfd = ::accept(fd_, nullptr, nullptr);
  if (cfd < 0) throw std::runtime_error("accept() failed");
  int one = 1;
  ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return TcpSocket(cfd);
}

}  // namespace snf
