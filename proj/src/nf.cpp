#include "snf/nf.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "snf/aho_corasick.hpp"

namespace snf {
namespace {

// Fixed-width big-endian state value helpers (state values travel between
// units byte-for-byte, so the layout must not depend on host order).
void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}
void put_u32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}
void put_u64(Bytes& b, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}
void put_f64(Bytes& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(b, bits);
}
std::uint16_t get_u16(const Bytes& b, std::size_t off) {
  return static_cast<std::uint16_t>(b.at(off) << 8 | b.at(off + 1));
}
std::uint32_t get_u32(const Bytes& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = v << 8 | b.at(off + i);
  return v;
}
std::uint64_t get_u64(const Bytes& b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = v << 8 | b.at(off + i);
  return v;
}
double get_f64(const Bytes& b, std::size_t off) {
  std::uint64_t bits = get_u64(b, off);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// --- NAT: source NAT with a lowest-free-port allocator. The allocator's used
// set is unit-local but reseeded from every mapping that migrates in, so a
// unit that inherited a flow never reissues its port. Concurrent fresh
// allocations on units that have never exchanged state can still collide;
// deployments that need a globally unique pool should pin NAT flowlets to a
// shared lineage (the experiment traces do).
class NatNf : public NetworkFunction {
 public:
  explicit NatNf(const NfConfig& cfg) : cfg_(cfg) {}
  std::string name() const override { return "nat"; }

  Verdict process(PacketContext& ctx) override {
    const PacketRecord& p = ctx.pkt;
    if (p.key.dst_ip == cfg_.nat_external_ip) return inbound(ctx);
    std::string fwd_key = "nat:f:" + to_string(p.key);
    if (auto v = ctx.state.get(fwd_key)) {
      std::uint16_t port = get_u16(*v, 0);
      used_.insert(port);
      return {true, fmt("nat:ext=%s:%u", format_ipv4(cfg_.nat_external_ip).c_str(), port)};
    }
    std::uint16_t port;
    if (!allocate(port)) return {false, "nat:exhausted"};
    Bytes fwd;
    put_u16(fwd, port);
    ctx.state.put(fwd_key, fwd);
    Bytes rev;
    put_u32(rev, p.key.src_ip);
    put_u16(rev, p.key.src_port);
    ctx.state.put(rev_key(port, p.key.dst_ip, p.key.dst_port, p.key.proto), rev);
    return {true, fmt("nat:ext=%s:%u", format_ipv4(cfg_.nat_external_ip).c_str(), port)};
  }

  void on_state_adopted(const TaggedState& ts) override {
    for (const auto& [k, v] : ts.entries)
      if (k.rfind("nat:f:", 0) == 0 && v.size() >= 2) used_.insert(get_u16(v, 0));
  }

  void on_flow_retire(const FlowKey&, const TaggedState& final_state) override {
    for (const auto& [k, v] : final_state.entries)
      if (k.rfind("nat:f:", 0) == 0 && v.size() >= 2) used_.erase(get_u16(v, 0));
  }

 private:
  static std::string rev_key(std::uint16_t port, std::uint32_t peer_ip,
                             std::uint16_t peer_port, std::uint8_t proto) {
    return fmt("nat:r:%u:%u:%u:%u", port, peer_ip, peer_port, proto);
  }

  Verdict inbound(PacketContext& ctx) {
    const PacketRecord& p = ctx.pkt;
    auto v = ctx.state.get(rev_key(p.key.dst_port, p.key.src_ip, p.key.src_port, p.key.proto));
    if (!v || v->size() < 6) return {false, "nat:no-mapping"};
    std::uint32_t ip = get_u32(*v, 0);
    std::uint16_t port = get_u16(*v, 4);
    return {true, fmt("nat:int=%s:%u", format_ipv4(ip).c_str(), port)};
  }

  bool allocate(std::uint16_t& out) {
    for (std::uint32_t p = cfg_.nat_port_lo; p <= cfg_.nat_port_hi; ++p) {
      if (!used_.count(static_cast<std::uint16_t>(p))) {
        out = static_cast<std::uint16_t>(p);
        used_.insert(out);
        return true;
      }
    }
    return false;
  }

  NfConfig cfg_;
  std::set<std::uint16_t> used_;
};

// --- Load balancer: backend pinned by flow hash at first sight, plus a
// per-flow packet counter that must survive migration.
class LbNf : public NetworkFunction {
 public:
  explicit LbNf(const NfConfig& cfg) : cfg_(cfg) {
    if (cfg_.lb_backends.empty()) throw std::invalid_argument("lb: no backends");
  }
  std::string name() const override { return "lb"; }

  Verdict process(PacketContext& ctx) override {
    const PacketRecord& p = ctx.pkt;
    std::string key = "lb:" + to_string(p.key);
    std::uint32_t server;
    std::uint64_t count;
    if (auto v = ctx.state.get(key)) {
      server = get_u32(*v, 0);
      count = get_u64(*v, 4) + 1;
    } else {
      server = static_cast<std::uint32_t>(hash_flow_key(p.key) % cfg_.lb_backends.size());
      count = 1;
    }
    Bytes b;
    put_u32(b, server);
    put_u64(b, count);
    ctx.state.put(key, b);
    return {true, fmt("lb:server=%u:%s n=%" PRIu64, server,
                      cfg_.lb_backends[server].c_str(), count)};
  }

 private:
  NfConfig cfg_;
};

// --- Signature matcher: streams payload bytes through a shared automaton,
// carrying the cursor (node + stream offset) in flow state so matches that
// straddle packet boundaries are still found after a migration.
class IdsNf : public NetworkFunction {
 public:
  explicit IdsNf(const NfConfig& cfg)
      : ac_(AcAutomaton::build(cfg.ids_patterns)) {}
  std::string name() const override { return "ids"; }

  Verdict process(PacketContext& ctx) override {
    const PacketRecord& p = ctx.pkt;
    std::string key = "ids:" + to_string(p.key);
    std::uint32_t node = ac_.root();
    std::uint64_t off = 0;
    if (auto v = ctx.state.get(key)) {
      node = get_u32(*v, 0);
      off = get_u64(*v, 4);
    }
    std::vector<AcAutomaton::Match> matches;
    node = ac_.scan(node, p.payload.data(), p.payload.size(), off, matches);
    off += p.payload.size();
    Bytes b;
    put_u32(b, node);
    put_u64(b, off);
    ctx.state.put(key, b);
    if (matches.empty()) return {true, "ids:clean"};
    std::string text = "ids:alert";
    std::size_t shown = std::min<std::size_t>(matches.size(), 8);
    for (std::size_t i = 0; i < shown; ++i)
      text += fmt("%c%u@%" PRIu64, i ? ',' : '[', matches[i].pattern,
                  matches[i].end_offset);
    text += "]";
    if (matches.size() > shown) text += fmt("+%zu", matches.size() - shown);
    return {true, text};
  }

 private:
  AcAutomaton ac_;
};

// --- UDP whitelister: inside-initiated traffic opens a pinhole keyed by the
// canonical (sorted-endpoint) pair; outside traffic passes only through an
// existing pinhole. The pinhole entry is owned by the initiating flow and
// found by the reverse direction through the unit-global key index.
class UdpWhitelistNf : public NetworkFunction {
 public:
  explicit UdpWhitelistNf(const NfConfig& cfg) : cfg_(cfg) {}
  std::string name() const override { return "udpwl"; }

  Verdict process(PacketContext& ctx) override {
    const PacketRecord& p = ctx.pkt;
    std::string key = canon_key(p.key);
    bool inside = match_inside(p.key.src_ip);
    if (inside) {
      ctx.state.put(key, Bytes{1});
      return {true, "wl:allow"};
    }
    if (ctx.state.get(key)) return {true, "wl:allow"};
    return {false, "wl:drop"};
  }

 private:
  bool match_inside(std::uint32_t ip) const {
    if (cfg_.wl_inside_bits <= 0) return true;
    std::uint32_t mask = cfg_.wl_inside_bits >= 32
                             ? 0xFFFFFFFFu
                             : ~((1u << (32 - cfg_.wl_inside_bits)) - 1u);
    return (ip & mask) == (cfg_.wl_inside_ip & mask);
  }

  static std::string canon_key(const FlowKey& k) {
    std::uint64_t a = (static_cast<std::uint64_t>(k.src_ip) << 16) | k.src_port;
    std::uint64_t b = (static_cast<std::uint64_t>(k.dst_ip) << 16) | k.dst_port;
    if (a > b) std::swap(a, b);
    return fmt("wl:%" PRIx64 "-%" PRIx64 "/%u", a, b, k.proto);
  }

  NfConfig cfg_;
};

// --- Token-bucket policer: tokens refill at rate r up to bucket size s,
// tokens = min(s, tokens + r * dt); a packet conforms when its size fits.
class QosPolicerNf : public NetworkFunction {
 public:
  explicit QosPolicerNf(const NfConfig& cfg) : cfg_(cfg) {}
  std::string name() const override { return "qos"; }

  Verdict process(PacketContext& ctx) override {
    const PacketRecord& p = ctx.pkt;
    std::string key = "qos:" + to_string(p.key);
    double tokens = cfg_.policer_bucket_bytes;
    std::uint64_t last = p.arrival_ts;
    if (auto v = ctx.state.get(key)) {
      tokens = get_f64(*v, 0);
      last = get_u64(*v, 8);
      double dt = static_cast<double>(p.arrival_ts - last) / 1e6;
      tokens = std::min(cfg_.policer_bucket_bytes,
                        tokens + cfg_.policer_rate_bytes_per_sec * dt);
      last = p.arrival_ts;
    }
    bool conform = static_cast<double>(p.size) <= tokens;
    if (conform) tokens -= static_cast<double>(p.size);
    Bytes b;
    put_f64(b, tokens);
    put_u64(b, last);
    ctx.state.put(key, b);
    return {conform, conform ? "qos:conform" : "qos:exceed"};
  }

 private:
  NfConfig cfg_;
};

}  // namespace

NfConfig NfConfig::defaults() {
  NfConfig c;
  c.nat_external_ip = parse_ipv4("192.0.2.1");
  c.lb_backends = {"10.100.0.1", "10.100.0.2", "10.100.0.3", "10.100.0.4"};
  c.ids_patterns = {"attack", "malware", "exploit"};
  c.wl_inside_ip = parse_ipv4("10.0.0.0");
  c.wl_inside_bits = 8;
  return c;
}

NfConfig NfConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open nf config: " + path);
  NfConfig c = defaults();
  bool patterns_cleared = false;
  bool backends_cleared = false;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line;
    if (auto pos = s.find('#'); pos != std::string::npos) s.erase(pos);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.pop_back();
    std::size_t start = s.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    s = s.substr(start);
    if (s.front() == '[') {
      if (s.back() != ']') throw std::runtime_error(fmt("nf config line %d: bad section", lineno));
      section = s.substr(1, s.size() - 2);
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(fmt("nf config line %d: expected key=value", lineno));
    std::string key = s.substr(0, eq), val = s.substr(eq + 1);
    auto fail = [&]() -> std::runtime_error {
      return std::runtime_error(fmt("nf config line %d: unknown key '%s' in [%s]",
                                    lineno, key.c_str(), section.c_str()));
    };
    if (section == "nat") {
      if (key == "external_ip") c.nat_external_ip = parse_ipv4(val);
      else if (key == "port_lo") c.nat_port_lo = static_cast<std::uint16_t>(std::stoul(val));
      else if (key == "port_hi") c.nat_port_hi = static_cast<std::uint16_t>(std::stoul(val));
      else throw fail();
    } else if (section == "lb") {
      if (key == "backends") {
        if (!backends_cleared) { c.lb_backends.clear(); backends_cleared = true; }
        std::stringstream ss(val);
        std::string item;
        while (std::getline(ss, item, ',')) c.lb_backends.push_back(item);
      } else throw fail();
    } else if (section == "ids") {
      if (key == "pattern") {
        if (!patterns_cleared) { c.ids_patterns.clear(); patterns_cleared = true; }
        c.ids_patterns.push_back(val);
      } else throw fail();
    } else if (section == "policer") {
      if (key == "rate_bytes_per_sec") c.policer_rate_bytes_per_sec = std::stod(val);
      else if (key == "bucket_bytes") c.policer_bucket_bytes = std::stod(val);
      else throw fail();
    } else if (section == "whitelist") {
      if (key == "inside") {
        auto slash = val.find('/');
        if (slash == std::string::npos) throw std::runtime_error(
            fmt("nf config line %d: inside wants addr/bits", lineno));
        c.wl_inside_ip = parse_ipv4(val.substr(0, slash));
        c.wl_inside_bits = std::stoi(val.substr(slash + 1));
      } else throw fail();
    } else {
      throw std::runtime_error(fmt("nf config line %d: unknown section [%s]",
                                   lineno, section.c_str()));
    }
  }
  return c;
}

std::vector<std::string> nf_names() { return {"nat", "lb", "ids", "udpwl", "qos"}; }

std::unique_ptr<NetworkFunction> make_nf(const std::string& name, const NfConfig& cfg) {
  if (name == "nat") return std::make_unique<NatNf>(cfg);
  if (name == "lb") return std::make_unique<LbNf>(cfg);
  if (name == "ids") return std::make_unique<IdsNf>(cfg);
  if (name == "udpwl") return std::make_unique<UdpWhitelistNf>(cfg);
  if (name == "qos") return std::make_unique<QosPolicerNf>(cfg);
  throw std::invalid_argument("unknown nf: " + name);
}

}  // namespace snf
