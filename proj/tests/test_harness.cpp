#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "snf/harness.hpp"
#include "snf/metrics.hpp"

using namespace snf;

namespace {

std::vector<TraceRecord> parse_str(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in, "test");
}

std::string parse_error(const std::string& text) {
  try {
    parse_str(text);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return "";
}

SynthSpec mini_spec() {
  SynthSpec s;
  s.seed = 7;
  s.flow_count = 6;
  s.bursts_per_flow = 3;
  s.packets_per_burst = 4;
  s.payload_bytes = 900;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("nearest-rank percentiles") {
  CHECK(percentile({1, 2, 3}, 50) == 2);
  CHECK(percentile({3, 1, 2}, 50) == 2);  // input order is irrelevant
  CHECK(percentile({1, 2, 3}, 100) == 3);
  CHECK(percentile({1, 2, 3}, 1) == 1);
  CHECK(percentile({5}, 1) == 5);
  CHECK(percentile({5}, 99) == 5);

  std::vector<std::uint64_t> v(100);
  std::iota(v.begin(), v.end(), 1);  // 1..100
  std::shuffle(v.begin(), v.end(), std::mt19937_64(3));
  CHECK(percentile(v, 99) == 99);
  CHECK(percentile(v, 50) == 50);
  CHECK(percentile(v, 25) == 25);
  CHECK(percentile(v, 0) == 1);  // rank clamps to the smallest sample

  CHECK_THROWS_AS(percentile({}, 50), std::invalid_argument);
}

TEST_CASE("trace parsing accepts the documented grammar") {
  auto recs = parse_str(
      "# comment line\n"
      "\n"
      "0,10.0.0.1,203.0.113.5,1234,80,6,1500\n"
      "250,10.0.0.2,203.0.113.5,5678,443,17,200,deadBEEF\n"
      "250,10.0.0.1,203.0.113.5,1234,80,6,60\r\n");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].ts_us == 0);
  CHECK(recs[0].key.src_ip == parse_ipv4("10.0.0.1"));
  CHECK(recs[0].key.dst_port == 80);
  CHECK(recs[0].key.proto == 6);
  CHECK(recs[0].size_bytes == 1500);
  CHECK(recs[0].payload.empty());
  CHECK(recs[1].payload == Bytes{0xde, 0xad, 0xbe, 0xef});
  CHECK(recs[2].size_bytes == 60);  // CRLF tolerated
}

TEST_CASE("trace parsing rejects malformed rows with file and line") {
  const std::string good = "0,10.0.0.1,203.0.113.5,1234,80,6,1500\n";

  CHECK(parse_error(good + "1,2,3\n").find("test:2:") != std::string::npos);
  CHECK(parse_error("abc,10.0.0.1,203.0.113.5,1,2,6,100\n").find("ts_us") !=
        std::string::npos);
  CHECK(parse_error(good + good + "5,10.0.0.1,203.0.113.5,1234,80,6,1500\n") == "");
  // Time travels backwards on line 3.
  std::string back = good + "9,10.0.0.1,203.0.113.5,1234,80,6,1500\n" +
                     "5,10.0.0.1,203.0.113.5,1234,80,6,1500\n";
  CHECK(parse_error(back).find("test:3:") != std::string::npos);
  CHECK(parse_error(back).find("non-decreasing") != std::string::npos);

  CHECK(parse_error("0,999.0.0.1,203.0.113.5,1,2,6,100\n") != "");
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,70000,80,6,100\n").find("src_port") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,80,70000,6,100\n").find("dst_port") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,1,2,256,100\n").find("proto") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,1,2,6,0\n").find("size_bytes") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,1,2,6,100000\n").find("size_bytes") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,1,2,6,100,abc\n").find("odd") !=
        std::string::npos);
  CHECK(parse_error("0,10.0.0.1,203.0.113.5,1,2,6,100,zz\n").find("hex") !=
        std::string::npos);
}

TEST_CASE("traces survive a save/load round trip") {
  auto recs = generate_synthetic_trace(mini_spec());
  recs[1].payload = {0x01, 0xAB};
  auto path = (std::filesystem::temp_directory_path() / "harness_rt.csv").string();
  save_trace(recs, path);
  CHECK(load_trace(path) == recs);
  CHECK_THROWS_AS(load_trace("/nonexistent/nowhere.csv"), std::runtime_error);
}

TEST_CASE("synthetic workloads are deterministic and well-formed") {
  SynthSpec spec = mini_spec();
  auto a = generate_synthetic_trace(spec);
  auto b = generate_synthetic_trace(spec);
  CHECK(a == b);
  CHECK(a.size() == 6u * 3u * 4u);

  // Timestamps are globally sorted.
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].ts_us >= a[i - 1].ts_us);

  // Exactly flow_count distinct 5-tuples.
  std::set<FlowKey> keys;
  for (const auto& r : a) keys.insert(r.key);
  CHECK(keys.size() == 6);

  SUBCASE("a different seed moves the jitter") {
    spec.seed = 8;
    CHECK(generate_synthetic_trace(spec) != a);
  }

  SUBCASE("heavy flows send bigger, longer bursts") {
    spec.heavy_every = 3;  // flows 3 and 6 (1-based)
    spec.heavy_burst_packets = 9;
    spec.heavy_payload_bytes = 1400;
    auto h = generate_synthetic_trace(spec);
    CHECK(h.size() == 4u * 3u * 4u + 2u * 3u * 9u);
    std::map<FlowKey, std::uint32_t> size_of;
    for (const auto& r : h) size_of[r.key] = r.size_bytes;
    std::uint64_t heavy_flows = 0;
    for (const auto& [k, sz] : size_of)
      if (sz == 1400) ++heavy_flows;
    CHECK(heavy_flows == 2);
  }
}

TEST_CASE("trace rows become simulator packets") {
  auto recs = parse_str(
      "100,10.0.0.1,203.0.113.5,1234,80,6,1500,aa\n"
      "205,10.0.0.2,203.0.113.5,5678,443,17,200\n");

  SUBCASE("identity scale") {
    auto pkts = to_packets(recs, 1.0);
    REQUIRE(pkts.size() == 2);
    CHECK(pkts[0].arrival_ts == 100);
    CHECK(pkts[0].trace_idx == 0);
    CHECK(pkts[0].payload == Bytes{0xaa});
    CHECK(pkts[1].arrival_ts == 205);
    CHECK(pkts[1].trace_idx == 1);
    CHECK(pkts[1].size == 200);
  }

  SUBCASE("time compression divides and rounds to nearest") {
    auto pkts = to_packets(recs, 2.0);
    CHECK(pkts[0].arrival_ts == 50);
    CHECK(pkts[1].arrival_ts == 103);  // 102.5 rounds away from zero
  }

  SUBCASE("nonpositive scales are rejected") {
    CHECK_THROWS_AS(to_packets(recs, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(to_packets(recs, -1.0), std::invalid_argument);
  }
}

TEST_CASE("latency summary statistics") {
  CHECK(latency_stats({}).count == 0);
  std::vector<MetricsCollector::Sample> s = {{0, 40}, {1, 10}, {2, 30}, {3, 20}};
  LatencyStats st = latency_stats(s);
  CHECK(st.count == 4);
  CHECK(st.mean == doctest::Approx(25.0));
  CHECK(st.p50 == 20);
  CHECK(st.p99 == 40);
  CHECK(st.p1 == 10);
}

TEST_CASE("rendered artifacts are deterministic and parseable") {
  // A small but complete end-to-end run.
  ExperimentConfig xc;
  xc.nf = "lb";
  xc.collect_verdicts = true;
  xc.seed = 11;
  auto trace = generate_synthetic_trace(mini_spec());

  RunResult r1 = run_experiment(xc, trace);
  RunResult r2 = run_experiment(xc, trace);

  CHECK(r1.report.packets == trace.size());
  CHECK(r1.report.externalized == trace.size());  // clean run loses nothing
  CHECK(r1.report.lost == 0);
  CHECK(r1.held_packets_at_end == 0);
  CHECK(r1.report.demand_conservation_error == 0);
  CHECK(r1.report.duration_us > 0);
  CHECK_FALSE(r1.report.epochs.empty());
  CHECK_FALSE(r1.final_states.empty());
  CHECK(r1.verdicts.size() == trace.size());
  CHECK(r1.report.wire.count("PACKET") == 1);
  std::uint64_t hist_total = 0;
  for (std::uint64_t h : r1.report.utilization_histogram) hist_total += h;
  CHECK(hist_total > 0);

  // Same config + seed -> byte-identical artifacts.
  CHECK(render_report_json(r1.report) == render_report_json(r2.report));
  CHECK(render_epochs_csv(r1.report) == render_epochs_csv(r2.report));
  CHECK(render_latency_csv(r1.latency_samples) ==
        render_latency_csv(r2.latency_samples));

  SUBCASE("the json artifact parses back with the same numbers") {
    nlohmann::json j = nlohmann::json::parse(render_report_json(r1.report));
    CHECK(j["mode"] == "flowlet");
    CHECK(j["packets"].get<std::uint64_t>() == trace.size());
    CHECK(j["latency"]["count"].get<std::uint64_t>() == r1.report.latency.count);
    CHECK(j["counters"]["allocation_opportunities"].get<std::uint64_t>() ==
          r1.report.counters.allocation_opportunities);
    CHECK(j["utilization_histogram"].size() == 11);
  }

  SUBCASE("written files match the in-memory renders") {
    auto dir = std::filesystem::temp_directory_path() / "harness_report_test";
    std::filesystem::remove_all(dir);
    write_report_files(r1, dir.string());
    CHECK(slurp(dir / "report.json") == render_report_json(r1.report));
    CHECK(slurp(dir / "epochs.csv") == render_epochs_csv(r1.report));
    CHECK(slurp(dir / "latency.csv") == render_latency_csv(r1.latency_samples));
    std::string csv = slurp(dir / "epochs.csv");
    CHECK(csv.rfind("epoch,start_us,demand_bps,offered_bps,provisioned_bps,"
                    "active_units,utilization\n", 0) == 0);
  }

  SUBCASE("latency csv is sorted by trace index") {
    std::string csv = render_latency_csv(r1.latency_samples);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "trace_idx,latency_us");
    long prev = -1;
    while (std::getline(in, line)) {
      long idx = std::stol(line.substr(0, line.find(',')));
      CHECK(idx > prev);
      prev = idx;
    }
  }
}

TEST_CASE("report comparison ratios") {
  MetricsReport a, b;
  a.counters.allocation_opportunities = 240;
  b.counters.allocation_opportunities = 30;
  a.latency.p50 = 58;
  b.latency.p50 = 116;
  a.latency.p99 = 150;
  b.latency.p99 = 300;
  a.counters.reactive_pulls = 5;
  b.counters.reactive_pulls = 20;

  ModeComparison m = compare_reports(a, b);
  CHECK(m.opportunity_ratio == doctest::Approx(8.0));
  CHECK(m.p50_ratio == doctest::Approx(0.5));
  CHECK(m.p99_ratio == doctest::Approx(0.5));
  CHECK(m.pull_ratio == doctest::Approx(0.25));

  MetricsReport zero;
  ModeComparison z = compare_reports(a, zero);
  CHECK(z.opportunity_ratio == 0);  // undefined ratios collapse to zero
}
