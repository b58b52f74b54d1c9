#include "snf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace snf {

namespace {

[[noreturn]] void trace_error(const std::string& name, std::size_t line,
                              const std::string& what) {
  throw std::runtime_error(name + ":" + std::to_string(line) + ": " + what);
}

std::uint64_t parse_u64_field(const std::string& s, const std::string& name,
                              std::size_t line, const char* field) {
  if (s.empty()) trace_error(name, line, std::string("empty ") + field);
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9')
      trace_error(name, line, std::string("bad ") + field + " '" + s + "'");
    std::uint64_t d = static_cast<std::uint64_t>(c - '0');
    if (v > (UINT64_MAX - d) / 10)
      trace_error(name, line, std::string("overflowing ") + field + " '" + s + "'");
    v = v * 10 + d;
  }
  return v;
}

int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::vector<TraceRecord> parse_trace(std::istream& in, const std::string& name) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  Us prev_ts = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 7 && fields.size() != 8)
      trace_error(name, lineno,
                  "expected 7 or 8 comma-separated fields, got " +
                      std::to_string(fields.size()));

    TraceRecord rec;
    rec.ts_us = parse_u64_field(fields[0], name, lineno, "ts_us");
    if (!out.empty() && rec.ts_us < prev_ts)
      trace_error(name, lineno, "timestamps must be non-decreasing");
    prev_ts = rec.ts_us;

    try {
      rec.key.src_ip = parse_ipv4(fields[1]);
      rec.key.dst_ip = parse_ipv4(fields[2]);
    } catch (const std::exception& e) {
      trace_error(name, lineno, e.what());
    }
    std::uint64_t sp = parse_u64_field(fields[3], name, lineno, "src_port");
    std::uint64_t dp = parse_u64_field(fields[4], name, lineno, "dst_port");
    if (sp > 65535) trace_error(name, lineno, "src_port out of range");
    if (dp > 65535) trace_error(name, lineno, "dst_port out of range");
    rec.key.src_port = static_cast<std::uint16_t>(sp);
    rec.key.dst_port = static_cast<std::uint16_t>(dp);
    std::uint64_t proto = parse_u64_field(fields[5], name, lineno, "proto");
    if (proto > 255) trace_error(name, lineno, "proto out of range");
    rec.key.proto = static_cast<std::uint8_t>(proto);
    std::uint64_t size = parse_u64_field(fields[6], name, lineno, "size_bytes");
    if (size == 0 || size > 65535) trace_error(name, lineno, "size_bytes out of range");
    rec.size_bytes = static_cast<std::uint32_t>(size);

    if (fields.size() == 8 && !fields[7].empty()) {
      const std::string& hex = fields[7];
      if (hex.size() % 2 != 0) trace_error(name, lineno, "payload_hex has odd length");
      rec.payload.reserve(hex.size() / 2);
      for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hex_nibble(hex[i]);
        int lo = hex_nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) trace_error(name, lineno, "payload_hex not hexadecimal");
        rec.payload.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file '" + path + "'");
  return parse_trace(in, path);
}

void save_trace(const std::vector<TraceRecord>& recs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path + "'");
  for (const TraceRecord& r : recs) {
    out << r.ts_us << ',' << format_ipv4(r.key.src_ip) << ',' << format_ipv4(r.key.dst_ip)
        << ',' << r.key.src_port << ',' << r.key.dst_port << ','
        << static_cast<unsigned>(r.key.proto) << ',' << r.size_bytes;
    if (!r.payload.empty()) {
      out << ',';
      static const char* hexd = "0123456789abcdef";
      for (std::uint8_t b : r.payload) out << hexd[b >> 4] << hexd[b & 0xF];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("error writing trace file '" + path + "'");
}

std::vector<TraceRecord> generate_synthetic_trace(const SynthSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::vector<TraceRecord> recs;
  for (std::uint32_t f = 0; f < spec.flow_count; ++f) {
    bool heavy = spec.heavy_every && ((f + 1) % spec.heavy_every == 0);
    FlowKey key;
    key.src_ip = (10u << 24) | ((f >> 8) << 8) | (f & 0xFF);
    key.dst_ip = (203u << 24) | (0u << 16) | (113u << 8) | (f % 250 + 1);
    key.src_port = static_cast<std::uint16_t>(40000 + f % 20000);
    key.dst_port = 443;
    key.proto = (f % 2 == 0) ? 6 : 17;

    Us t = static_cast<Us>(f) * spec.flow_stagger_us;
    std::uint32_t burst_n = heavy ? spec.heavy_burst_packets : spec.packets_per_burst;
    std::uint32_t size = heavy ? spec.heavy_payload_bytes : spec.payload_bytes;
    for (std::uint32_t b = 0; b < spec.bursts_per_flow; ++b) {
      for (std::uint32_t p = 0; p < burst_n; ++p) {
        TraceRecord rec;
        rec.ts_us = t;
        rec.key = key;
        rec.size_bytes = size;
        recs.push_back(rec);
        Us jitter = spec.gap_jitter_us ? rng() % (spec.gap_jitter_us + 1) : 0;
        t += spec.intra_gap_us + jitter;
      }
      Us jitter = spec.gap_jitter_us ? rng() % (spec.gap_jitter_us + 1) : 0;
      t += spec.burst_gap_us + jitter;
    }
  }
  std::stable_sort(recs.begin(), recs.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.ts_us < b.ts_us;
                   });
  return recs;
}

std::vector<PacketRecord> to_packets(const std::vector<TraceRecord>& recs,
                                     double time_scale) {
  if (!(time_scale > 0)) throw std::invalid_argument("time_scale must be > 0");
  std::vector<PacketRecord> out;
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    PacketRecord p;
    p.arrival_ts = static_cast<Us>(
        std::llround(static_cast<double>(recs[i].ts_us) / time_scale));
    p.key = recs[i].key;
    p.size = recs[i].size_bytes;
    p.payload = recs[i].payload;
    p.trace_idx = static_cast<std::uint32_t>(i);
    out.push_back(std::move(p));
  }
  return out;
}

LatencyStats latency_stats(const std::vector<MetricsCollector::Sample>& samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::vector<std::uint64_t> v;
  v.reserve(samples.size());
  double sum = 0;
  for (const auto& smp : samples) {
    v.push_back(smp.latency_us);
    sum += static_cast<double>(smp.latency_us);
  }
  s.mean = sum / static_cast<double>(samples.size());
  s.p1 = percentile(v, 1);
  s.p25 = percentile(v, 25);
  s.p50 = percentile(v, 50);
  s.p75 = percentile(v, 75);
  s.p99 = percentile(v, 99);
  return s;
}

namespace {

// Time-weighted average active unit count within [from, to) given the unit
// count step function described by `events` ((ts, delta), ts ascending).
double avg_units_in(const std::vector<std::pair<Us, int>>& events, Us from, Us to) {
  if (to <= from) return 0;
  double area = 0;
  int count = 0;
  Us cursor = from;
  for (const auto& [ts, delta] : events) {
    if (ts <= from) {
      count += delta;
      continue;
    }
    if (ts >= to) break;
    area += static_cast<double>(count) * static_cast<double>(ts - cursor);
    count += delta;
    cursor = ts;
  }
  area += static_cast<double>(count) * static_cast<double>(to - cursor);
  return area / static_cast<double>(to - from);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& xc,
                         const std::vector<TraceRecord>& trace) {
  xc.validate();
  MetricsCollector metrics(xc.cfg, xc.collect_verdicts);
  std::vector<PacketRecord> packets = to_packets(trace, xc.time_scale);
  Cluster cluster(xc, packets, metrics);
  cluster.run();

  RunResult rr;
  rr.final_states = cluster.final_flow_states();
  rr.verdicts = metrics.verdicts();
  rr.lost = metrics.lost();
  rr.latency_samples = metrics.latency_samples();
  rr.active_units = cluster.active_unit_ids();
  rr.held_packets_at_end = cluster.held_packets_at_end();

  MetricsReport& r = rr.report;
  r.mode = to_string(xc.mode);
  r.state_mode = to_string(xc.state_mode);
  r.replicator = xc.replicator == ReplicatorMode::Deterministic ? "deterministic"
                                                                : "weighted-random";
  r.nf = xc.nf_factory ? "custom" : xc.nf;
  r.seed = xc.seed;
  r.packets = metrics.total_packets();
  r.externalized = rr.latency_samples.size();
  r.lost = rr.lost.size();
  r.total_bytes = metrics.total_arrived_bytes();
  r.duration_us =
      cluster.end_time() > metrics.first_arrival()
          ? cluster.end_time() - metrics.first_arrival()
          : 0;
  r.latency = latency_stats(rr.latency_samples);
  r.counters = metrics.counters;
  r.peak_units = cluster.peak_units();
  r.end_time_us = cluster.end_time();

  // Epoch table.
  const Us epoch_us = xc.cfg.epoch_us;
  std::uint64_t last_epoch = 0;
  for (const auto& [e, b] : metrics.epoch_demand_bytes()) last_epoch = std::max(last_epoch, e);
  for (const auto& [ue, b] : metrics.unit_epoch_offered())
    last_epoch = std::max(last_epoch, ue.second);
  std::map<std::uint64_t, std::uint64_t> offered_by_epoch;
  for (const auto& [ue, b] : metrics.unit_epoch_offered()) offered_by_epoch[ue.second] += b;
  std::uint64_t demand_sum = 0;
  for (std::uint64_t e = 0; e <= last_epoch; ++e) {
    EpochRow row;
    row.epoch = e;
    row.start_us = e * epoch_us;
    auto dit = metrics.epoch_demand_bytes().find(e);
    std::uint64_t dbytes = dit == metrics.epoch_demand_bytes().end() ? 0 : dit->second;
    demand_sum += dbytes;
    row.demand_bps = static_cast<double>(dbytes) * 8.0 * 1e6 / static_cast<double>(epoch_us);
    auto oit = offered_by_epoch.find(e);
    std::uint64_t obytes = oit == offered_by_epoch.end() ? 0 : oit->second;
    row.offered_bps = static_cast<double>(obytes) * 8.0 * 1e6 / static_cast<double>(epoch_us);
    row.active_units =
        avg_units_in(metrics.unit_count_events(), row.start_us, row.start_us + epoch_us);
    row.provisioned_bps = row.active_units * xc.cfg.bw_max_bps;
    row.utilization = row.provisioned_bps > 0 ? row.offered_bps / row.provisioned_bps : 0;
    r.epochs.push_back(row);
  }
  std::uint64_t total = metrics.total_arrived_bytes();
  r.demand_conservation_error =
      demand_sum > total ? demand_sum - total : total - demand_sum;

  // Unit-epoch utilization histogram.
  double epoch_capacity_bits = xc.cfg.bw_max_bps * static_cast<double>(epoch_us) / 1e6;
  for (const auto& [ue, bytes] : metrics.unit_epoch_offered()) {
    double util = static_cast<double>(bytes) * 8.0 / epoch_capacity_bits;
    int bin = util >= 1.0 ? 10 : static_cast<int>(util * 10.0);
    r.utilization_histogram[static_cast<std::size_t>(bin)] += 1;
  }

  Us span = metrics.last_arrival() > metrics.first_arrival()
                ? metrics.last_arrival() - metrics.first_arrival()
                : 1;
  r.replication_overhead_bps =
      static_cast<double>(metrics.replication_push_bytes()) * 8.0 * 1e6 /
      static_cast<double>(span);

  for (const auto& [type, st] : cluster.wire_stats())
    r.wire[to_string(type)] = {st.frames, st.bytes};

  if (r.packets > 0) {
    double pkts_per_us = static_cast<double>(r.packets) / static_cast<double>(span);
    double mean_size = static_cast<double>(r.total_bytes) / static_cast<double>(r.packets);
    double replay_pkts = pkts_per_us * static_cast<double>(xc.checkpoint_interval_us) / 2.0;
    r.replay_recovery_baseline_us =
        2.0 * static_cast<double>(xc.cfg.link_latency_us) +
        replay_pkts * static_cast<double>(service_time_us(
                          static_cast<std::uint32_t>(mean_size), xc.cfg.bw_max_bps));
  }
  return rr;
}

std::string render_report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mode"] = r.mode;
  j["state_mode"] = r.state_mode;
  j["replicator"] = r.replicator;
  j["nf"] = r.nf;
  j["seed"] = r.seed;
  j["packets"] = r.packets;
  j["externalized"] = r.externalized;
  j["lost"] = r.lost;
  j["total_bytes"] = r.total_bytes;
  j["duration_us"] = r.duration_us;
  j["end_time_us"] = r.end_time_us;
  j["peak_units"] = r.peak_units;
  j["demand_conservation_error"] = r.demand_conservation_error;
  j["replication_overhead_bps"] = r.replication_overhead_bps;
  j["replay_recovery_baseline_us"] = r.replay_recovery_baseline_us;

  nlohmann::json lat;
  lat["count"] = r.latency.count;
  lat["mean_us"] = r.latency.mean;
  lat["p1_us"] = r.latency.p1;
  lat["p25_us"] = r.latency.p25;
  lat["p50_us"] = r.latency.p50;
  lat["p75_us"] = r.latency.p75;
  lat["p99_us"] = r.latency.p99;
  j["latency"] = lat;

  nlohmann::json hist = nlohmann::json::array();
  for (std::uint64_t b : r.utilization_histogram) hist.push_back(b);
  j["utilization_histogram"] = hist;

  const Counters& c = r.counters;
  nlohmann::json cj;
  cj["allocation_opportunities"] = c.allocation_opportunities;
  cj["proactive_hits"] = c.proactive_hits;
  cj["reactive_pulls"] = c.reactive_pulls;
  cj["fresh_inits"] = c.fresh_inits;
  cj["local_hits"] = c.local_hits;
  cj["stall_waits"] = c.stall_waits;
  cj["size_forks"] = c.size_forks;
  cj["timeout_flowlets"] = c.timeout_flowlets;
  cj["external_store_reads"] = c.external_store_reads;
  cj["external_store_fetches"] = c.external_store_fetches;
  cj["pull_timeouts"] = c.pull_timeouts;
  cj["lost_packets"] = c.lost_packets;
  cj["dropped_releases"] = c.dropped_releases;
  cj["staleness_violations"] = c.staleness_violations;
  cj["launches"] = c.launches;
  cj["retires"] = c.retires;
  cj["recovery_events"] = c.recovery_events;
  cj["recovery_snapshot_transfers"] = c.recovery_snapshot_transfers;
  cj["logger_resyncs"] = c.logger_resyncs;
  cj["failover_closes"] = c.failover_closes;
  cj["recovery_time_us_last"] = c.recovery_time_us_last;
  cj["recovery_time_us_max"] = c.recovery_time_us_max;
  j["counters"] = cj;

  nlohmann::json wj;
  for (const auto& [type, fb] : r.wire) {
    nlohmann::json e;
    e["frames"] = fb.first;
    e["bytes"] = fb.second;
    wj[type] = e;
  }
  j["wire"] = wj;

  return j.dump(2) + "\n";
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string render_epochs_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "epoch,start_us,demand_bps,offered_bps,provisioned_bps,active_units,"
         "utilization\n";
  for (const EpochRow& e : r.epochs) {
    out << e.epoch << ',' << e.start_us << ',' << fmt_double(e.demand_bps) << ','
        << fmt_double(e.offered_bps) << ',' << fmt_double(e.provisioned_bps) << ','
        << fmt_double(e.active_units) << ',' << fmt_double(e.utilization) << '\n';
  }
  return out.str();
}

std::string render_latency_csv(const std::vector<MetricsCollector::Sample>& samples) {
  std::vector<MetricsCollector::Sample> sorted = samples;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.trace_idx < b.trace_idx; });
  std::ostringstream out;
  out << "trace_idx,latency_us\n";
  for (const auto& s : sorted) out << s.trace_idx << ',' << s.latency_us << '\n';
  return out.str();
}

void write_report_files(const RunResult& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(out_dir + "/" + name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + out_dir + "/" + name + "'");
    f << body;
    if (!f) throw std::runtime_error("error writing '" + out_dir + "/" + name + "'");
  };
  write("report.json", render_report_json(r.report));
  write("epochs.csv", render_epochs_csv(r.report));
  write("latency.csv", render_latency_csv(r.latency_samples));
}

ModeComparison compare_reports(const MetricsReport& a, const MetricsReport& b) {
  auto ratio = [](double x, double y) { return y != 0 ? x / y : 0.0; };
  ModeComparison m;
  m.opportunity_ratio =
      ratio(static_cast<double>(a.counters.allocation_opportunities),
            static_cast<double>(b.counters.allocation_opportunities));
  m.p50_ratio = ratio(static_cast<double>(a.latency.p50),
                      static_cast<double>(b.latency.p50));
  m.p99_ratio = ratio(static_cast<double>(a.latency.p99),
                      static_cast<double>(b.latency.p99));
  m.pull_ratio = ratio(static_cast<double>(a.counters.reactive_pulls),
                       static_cast<double>(b.counters.reactive_pulls));
  return m;
}

}  // namespace snf
