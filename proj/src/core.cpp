#include "snf/core.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace snf {

std::uint64_t hash_flow_key(const FlowKey& k) {
  std::array<std::uint8_t, 13> buf{};
  buf[0] = static_cast<std::uint8_t>(k.src_ip >> 24);
  buf[1] = static_cast<std::uint8_t>(k.src_ip >> 16);
  buf[2] = static_cast<std::uint8_t>(k.src_ip >> 8);
  buf[3] = static_cast<std::uint8_t>(k.src_ip);
  buf[4] = static_cast<std::uint8_t>(k.dst_ip >> 24);
  buf[5] = static_cast<std::uint8_t>(k.dst_ip >> 16);
  buf[6] = static_cast<std::uint8_t>(k.dst_ip >> 8);
  buf[7] = static_cast<std::uint8_t>(k.dst_ip);
  buf[8] = static_cast<std::uint8_t>(k.src_port >> 8);
  buf[9] = static_cast<std::uint8_t>(k.src_port);
  buf[10] = static_cast<std::uint8_t>(k.dst_port >> 8);
  buf[11] = static_cast<std::uint8_t>(k.dst_port);
  buf[12] = k.proto;
  std::uint64_t h = 14695981039346656037ull;
  for (std::uint8_t b : buf) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_string(const FlowKey& k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%u>%s:%u/%u", format_ipv4(k.src_ip).c_str(),
                k.src_port, format_ipv4(k.dst_ip).c_str(), k.dst_port, k.proto);
  return buf;
}

std::uint32_t parse_ipv4(const std::string& s) {
  std::uint32_t out = 0;
  std::size_t pos = 0;
  for (int octet = 0; octet < 4; ++octet) {
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9')
      throw std::invalid_argument("bad ipv4: " + s);
    std::uint32_t v = 0;
    std::size_t digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      v = v * 10 + static_cast<std::uint32_t>(s[pos] - '0');
      ++pos;
      if (++digits > 3 || v > 255) throw std::invalid_argument("bad ipv4: " + s);
    }
    out = (out << 8) | v;
    if (octet < 3) {
      if (pos >= s.size() || s[pos] != '.') throw std::invalid_argument("bad ipv4: " + s);
      ++pos;
    }
  }
  if (pos != s.size()) throw std::invalid_argument("bad ipv4: " + s);
  return out;
}

std::string format_ipv4(std::uint32_t ip) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", ip >> 24, (ip >> 16) & 0xFF,
                (ip >> 8) & 0xFF, ip & 0xFF);
  return buf;
}

void Config::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw std::invalid_argument(std::string("config: ") + name + " must be > 0");
  };
  positive(static_cast<double>(flowlet_timeout_us), "flowlet_timeout_us");
  positive(static_cast<double>(size_threshold_bytes), "size_threshold_bytes");
  if (alpha < 0 || alpha > 1) throw std::invalid_argument("config: alpha must be in [0,1]");
  positive(replication_k, "replication_k");
  positive(bw_max_bps, "bw_max_bps");
  if (ewma_delta < 0 || ewma_delta > 1)
    throw std::invalid_argument("config: ewma_delta must be in [0,1]");
  positive(static_cast<double>(bucket_width_us), "bucket_width_us");
  positive(bucket_count, "bucket_count");
  positive(static_cast<double>(epoch_us), "epoch_us");
  if (scaleup_threshold <= 0 || scaleup_threshold > 1)
    throw std::invalid_argument("config: scaleup_threshold must be in (0,1]");
  positive(static_cast<double>(unit_idle_retire_us), "unit_idle_retire_us");
  positive(demand_seed_bps, "demand_seed_bps");
  positive(static_cast<double>(flow_idle_retire_us), "flow_idle_retire_us");
  positive(static_cast<double>(pull_timeout_us), "pull_timeout_us");
  positive(static_cast<double>(link_latency_us), "link_latency_us");
}

Us service_time_us(std::uint32_t size_bytes, double bw_max_bps) {
  double us = static_cast<double>(size_bytes) * 8.0 * 1e6 / bw_max_bps;
  auto r = static_cast<Us>(std::llround(us));
  return r < 1 ? 1 : r;
}

}  // namespace snf
