// Command-line front end: run one experiment, compare assignment modes,
// sweep a knob, generate synthetic traces, or validate a trace file.
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "snf/harness.hpp"

namespace {

using namespace snf;

FailureInjection parse_failure(const std::string& s, bool logger) {
  auto at = s.find('@');
  if (at == std::string::npos || at == 0 || at + 1 == s.size())
    throw CLI::ValidationError("failure", "expected <unit-id>@<time-us>, got '" + s + "'");
  FailureInjection inj;
  inj.logger = logger;
  try {
    inj.unit = static_cast<std::uint32_t>(std::stoul(s.substr(0, at)));
    inj.at_us = std::stoull(s.substr(at + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("failure", "expected <unit-id>@<time-us>, got '" + s + "'");
  }
  return inj;
}

AllocMode parse_mode(const std::string& s) {
  if (s == "flowlet") return AllocMode::Flowlet;
  if (s == "vanilla") return AllocMode::VanillaFlow;
  if (s == "smart") return AllocMode::SmartFlow;
  throw CLI::ValidationError("mode", "must be flowlet, vanilla, or smart");
}

StateMode parse_state_mode(const std::string& s) {
  if (s == "proactive") return StateMode::Proactive;
  if (s == "reactive") return StateMode::Reactive;
  if (s == "external") return StateMode::ExternalStore;
  throw CLI::ValidationError("state-mode", "must be proactive, reactive, or external");
}

ReplicatorMode parse_replicator(const std::string& s) {
  if (s == "deterministic") return ReplicatorMode::Deterministic;
  if (s == "weighted") return ReplicatorMode::WeightedRandom;
  throw CLI::ValidationError("replicator", "must be deterministic or weighted");
}

// Sectioned key=value experiment file; explicit command-line flags override it.
void load_experiment_file(const std::string& path, ExperimentConfig& xc) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::string line, section = "";
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) -> void {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t h = line.find('#');
    if (h != std::string::npos) line.erase(h);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    line.erase(0, first);
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "core" && section != "experiment" && section != "failures")
        fail("unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    try {
      if (section == "core") {
        Config& c = xc.cfg;
        if (key == "flowlet_timeout_us") c.flowlet_timeout_us = std::stoull(val);
        else if (key == "size_threshold_bytes") c.size_threshold_bytes = std::stoull(val);
        else if (key == "alpha") c.alpha = std::stod(val);
        else if (key == "replication_k") c.replication_k = std::stoul(val);
        else if (key == "bw_max_bps") c.bw_max_bps = std::stod(val);
        else if (key == "ewma_delta") c.ewma_delta = std::stod(val);
        else if (key == "bucket_width_us") c.bucket_width_us = std::stoull(val);
        else if (key == "bucket_count") c.bucket_count = std::stoul(val);
        else if (key == "epoch_us") c.epoch_us = std::stoull(val);
        else if (key == "scaleup_threshold") c.scaleup_threshold = std::stod(val);
        else if (key == "unit_idle_retire_us") c.unit_idle_retire_us = std::stoull(val);
        else if (key == "demand_seed_bps") c.demand_seed_bps = std::stod(val);
        else if (key == "flow_idle_retire_us") c.flow_idle_retire_us = std::stoull(val);
        else if (key == "pull_timeout_us") c.pull_timeout_us = std::stoull(val);
        else if (key == "launch_delay_us") c.launch_delay_us = std::stoull(val);
        else if (key == "link_latency_us") c.link_latency_us = std::stoull(val);
        else fail("unknown [core] key '" + key + "'");
      } else if (section == "experiment") {
        if (key == "mode") xc.mode = parse_mode(val);
        else if (key == "state_mode") xc.state_mode = parse_state_mode(val);
        else if (key == "replicator") xc.replicator = parse_replicator(val);
        else if (key == "seed") xc.seed = std::stoull(val);
        else if (key == "controllers") xc.controller_count = std::stoul(val);
        else if (key == "time_scale") xc.time_scale = std::stod(val);
        else if (key == "smart_interval_us") xc.smart_interval_us = std::stoull(val);
        else if (key == "checkpoint_interval_us") xc.checkpoint_interval_us = std::stoull(val);
        else if (key == "fault_tolerant") xc.fault_tolerant = (val == "true" || val == "1");
        else if (key == "collect_verdicts") xc.collect_verdicts = (val == "true" || val == "1");
        else if (key == "nf") xc.nf = val;
        else if (key == "trace") xc.trace_path = val;
        else fail("unknown [experiment] key '" + key + "'");
      } else if (section == "failures") {
        if (key == "unit") xc.failures.push_back(parse_failure(val, false));
        else if (key == "logger") xc.failures.push_back(parse_failure(val, true));
        else fail("unknown [failures] key '" + key + "'");
      } else {
        fail("key '" + key + "' outside any section");
      }
    } catch (const CLI::ValidationError& e) {
      fail(e.what());
    } catch (const std::invalid_argument&) {
      fail("bad value '" + val + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
      fail("value '" + val + "' out of range for key '" + key + "'");
    }
  }
}

void print_summary(const RunResult& rr) {
  const MetricsReport& r = rr.report;
  std::printf("mode=%s state=%s replicator=%s nf=%s seed=%llu\n", r.mode.c_str(),
              r.state_mode.c_str(), r.replicator.c_str(), r.nf.c_str(),
              static_cast<unsigned long long>(r.seed));
  std::printf("packets=%llu externalized=%llu lost=%llu bytes=%llu duration_us=%llu\n",
              static_cast<unsigned long long>(r.packets),
              static_cast<unsigned long long>(r.externalized),
              static_cast<unsigned long long>(r.lost),
              static_cast<unsigned long long>(r.total_bytes),
              static_cast<unsigned long long>(r.duration_us));
  std::printf("latency_us p1=%llu p25=%llu p50=%llu p75=%llu p99=%llu mean=%.1f\n",
              static_cast<unsigned long long>(r.latency.p1),
              static_cast<unsigned long long>(r.latency.p25),
              static_cast<unsigned long long>(r.latency.p50),
              static_cast<unsigned long long>(r.latency.p75),
              static_cast<unsigned long long>(r.latency.p99), r.latency.mean);
  const Counters& c = r.counters;
  std::printf(
      "opportunities=%llu fresh=%llu local=%llu proactive=%llu pulls=%llu stalls=%llu\n",
      static_cast<unsigned long long>(c.allocation_opportunities),
      static_cast<unsigned long long>(c.fresh_inits),
      static_cast<unsigned long long>(c.local_hits),
      static_cast<unsigned long long>(c.proactive_hits),
      static_cast<unsigned long long>(c.reactive_pulls),
      static_cast<unsigned long long>(c.stall_waits));
  std::printf("size_forks=%llu timeouts=%llu launches=%llu retires=%llu peak_units=%llu\n",
              static_cast<unsigned long long>(c.size_forks),
              static_cast<unsigned long long>(c.timeout_flowlets),
              static_cast<unsigned long long>(c.launches),
              static_cast<unsigned long long>(c.retires),
              static_cast<unsigned long long>(r.peak_units));
  if (c.recovery_events) {
    std::printf(
        "recoveries=%llu snapshot_transfers=%llu recovery_us_last=%llu replay_baseline_us=%.1f\n",
        static_cast<unsigned long long>(c.recovery_events),
        static_cast<unsigned long long>(c.recovery_snapshot_transfers),
        static_cast<unsigned long long>(c.recovery_time_us_last),
        r.replay_recovery_baseline_us);
  }
  std::printf("replication_overhead_bps=%.1f\n", r.replication_overhead_bps);
}

struct CommonOpts {
  ExperimentConfig xc;      // final config: file values, then explicit flags
  ExperimentConfig staged;  // command-line bindings land here during parse
  std::string trace_path;
  std::string config_path;
  std::string out_dir;
  std::string mode_s, state_s, repl_s;
  std::vector<std::string> fail_units, fail_loggers;
  std::string nf_config_path;
  CLI::Option *fail_unit_opt = nullptr, *fail_logger_opt = nullptr;
  // For every option the user passed explicitly, copy staged -> final.
  std::vector<std::pair<CLI::Option*, std::function<void()>>> overrides;
};

void add_common_options(CLI::App* cmd, CommonOpts& o) {
  auto ov = [&o](CLI::Option* opt, std::function<void()> apply) {
    o.overrides.emplace_back(opt, std::move(apply));
  };
  // Binds a flag to the staging config; when present it overrides the file.
  auto bind = [&](const std::string& flag, auto& staged_field, auto& final_field,
                  const char* help) {
    auto* opt = cmd->add_option(flag, staged_field, help);
    ov(opt, [&staged_field, &final_field] { final_field = staged_field; });
    return opt;
  };

  cmd->add_option("--config", o.config_path,
                  "experiment file ([core]/[experiment]/[failures] key=value); "
                  "explicit flags override it");
  auto* t = cmd->add_option("--trace", o.trace_path, "input trace csv");
  ov(t, [&o] { o.xc.trace_path = o.trace_path; });

  auto* m = cmd->add_option("--mode", o.mode_s, "flowlet|vanilla|smart");
  ov(m, [&o] { o.xc.mode = parse_mode(o.mode_s); });
  auto* sm = cmd->add_option("--state-mode", o.state_s, "proactive|reactive|external");
  ov(sm, [&o] { o.xc.state_mode = parse_state_mode(o.state_s); });
  auto* rp = cmd->add_option("--replicator", o.repl_s, "deterministic|weighted");
  ov(rp, [&o] { o.xc.replicator = parse_replicator(o.repl_s); });

  bind("--seed", o.staged.seed, o.xc.seed, "experiment seed");
  bind("--controllers", o.staged.controller_count, o.xc.controller_count,
       "controller count");
  bind("--time-scale", o.staged.time_scale, o.xc.time_scale,
       "divide trace timestamps by this factor");
  bind("--smart-interval-us", o.staged.smart_interval_us, o.xc.smart_interval_us,
       "smart mode rebalance period");
  bind("--checkpoint-interval-us", o.staged.checkpoint_interval_us,
       o.xc.checkpoint_interval_us,
       "checkpoint period assumed for the replay-recovery baseline");
  auto* ft = cmd->add_flag("--fault-tolerant", o.staged.fault_tolerant,
                           "attach an output logger to every unit");
  ov(ft, [&o] { o.xc.fault_tolerant = o.staged.fault_tolerant; });
  auto* cv = cmd->add_flag("--collect-verdicts", o.staged.collect_verdicts,
                           "record per-packet verdict strings");
  ov(cv, [&o] { o.xc.collect_verdicts = o.staged.collect_verdicts; });
  auto* nf = cmd->add_option("--nf", o.staged.nf, "nat|lb|ids|udpwl|qos");
  ov(nf, [&o] { o.xc.nf = o.staged.nf; });
  cmd->add_option("--nf-config", o.nf_config_path, "network function config file");

  Config& s = o.staged.cfg;
  Config& f = o.xc.cfg;
  bind("--flowlet-timeout-us", s.flowlet_timeout_us, f.flowlet_timeout_us,
       "flowlet inactivity gap (T)");
  bind("--size-threshold-bytes", s.size_threshold_bytes, f.size_threshold_bytes,
       "flowlet byte budget (B)");
  bind("--alpha", s.alpha, f.alpha, "locality weight in assignment scoring");
  bind("--replication-k", s.replication_k, f.replication_k,
       "proactive replica count (K)");
  bind("--bw-max-bps", s.bw_max_bps, f.bw_max_bps, "per-unit capacity");
  bind("--ewma-delta", s.ewma_delta, f.ewma_delta, "demand estimator smoothing");
  bind("--bucket-width-us", s.bucket_width_us, f.bucket_width_us,
       "load tracker bucket width");
  bind("--bucket-count", s.bucket_count, f.bucket_count, "load tracker bucket count");
  bind("--epoch-us", s.epoch_us, f.epoch_us, "reporting/resource epoch");
  bind("--scaleup-threshold", s.scaleup_threshold, f.scaleup_threshold,
       "utilization that triggers launch");
  bind("--unit-idle-retire-us", s.unit_idle_retire_us, f.unit_idle_retire_us,
       "idle horizon before retire");
  bind("--demand-seed-bps", s.demand_seed_bps, f.demand_seed_bps,
       "estimate before any completion");
  bind("--flow-idle-retire-us", s.flow_idle_retire_us, f.flow_idle_retire_us,
       "flow bookkeeping horizon");
  bind("--pull-timeout-us", s.pull_timeout_us, f.pull_timeout_us,
       "reactive pull escalation deadline");
  bind("--launch-delay-us", s.launch_delay_us, f.launch_delay_us,
       "unit spin-up latency");
  bind("--link-latency-us", s.link_latency_us, f.link_latency_us,
       "one-way node-to-node latency");

  o.fail_unit_opt = cmd->add_option(
      "--fail-unit", o.fail_units, "<unit-id>@<time-us>, kill a unit (repeatable)");
  o.fail_logger_opt =
      cmd->add_option("--fail-logger", o.fail_loggers,
                      "<unit-id>@<time-us>, kill a unit's logger (repeatable)");
  cmd->add_option("--out-dir", o.out_dir, "write report.json/epochs.csv/latency.csv here");
}

// Resolution order: built-in defaults, then the config file, then every flag
// the user actually passed. Explicit failure flags replace file failures.
void finalize_config(CommonOpts& o) {
  if (!o.config_path.empty()) load_experiment_file(o.config_path, o.xc);
  if (!o.nf_config_path.empty()) o.xc.nf_config = NfConfig::from_file(o.nf_config_path);
  for (auto& [opt, apply] : o.overrides)
    if (opt->count()) apply();
  if (o.fail_unit_opt->count() || o.fail_logger_opt->count()) {
    o.xc.failures.clear();
    for (const std::string& s : o.fail_units)
      o.xc.failures.push_back(parse_failure(s, false));
    for (const std::string& s : o.fail_loggers)
      o.xc.failures.push_back(parse_failure(s, true));
  }
}

int cmd_run(CommonOpts& o) {
  finalize_config(o);
  if (o.xc.trace_path.empty()) {
    std::cerr << "error: --trace (or [experiment] trace=) is required\n";
    return 1;
  }
  std::vector<TraceRecord> trace = load_trace(o.xc.trace_path);
  RunResult rr = run_experiment(o.xc, trace);
  print_summary(rr);
  if (!o.out_dir.empty()) {
    write_report_files(rr, o.out_dir);
    std::printf("wrote %s/report.json, epochs.csv, latency.csv\n", o.out_dir.c_str());
  }
  return 0;
}

int cmd_compare(CommonOpts& o) {
  finalize_config(o);
  if (o.xc.trace_path.empty()) {
    std::cerr << "error: --trace (or [experiment] trace=) is required\n";
    return 1;
  }
  std::vector<TraceRecord> trace = load_trace(o.xc.trace_path);
  std::vector<std::pair<AllocMode, const char*>> modes = {
      {AllocMode::Flowlet, "flowlet"},
      {AllocMode::VanillaFlow, "vanilla"},
      {AllocMode::SmartFlow, "smart"},
  };
  std::map<std::string, MetricsReport> reports;
  for (auto& [mode, name] : modes) {
    ExperimentConfig xc = o.xc;
    xc.mode = mode;
    RunResult rr = run_experiment(xc, trace);
    reports[name] = rr.report;
    std::printf("%-8s opportunities=%-8llu p50_us=%-6llu p99_us=%-6llu pulls=%-6llu "
                "peak_units=%llu\n",
                name,
                static_cast<unsigned long long>(
                    rr.report.counters.allocation_opportunities),
                static_cast<unsigned long long>(rr.report.latency.p50),
                static_cast<unsigned long long>(rr.report.latency.p99),
                static_cast<unsigned long long>(rr.report.counters.reactive_pulls),
                static_cast<unsigned long long>(rr.report.peak_units));
    if (!o.out_dir.empty()) write_report_files(rr, o.out_dir + "/" + name);
  }
  ModeComparison fv = compare_reports(reports["flowlet"], reports["vanilla"]);
  ModeComparison fs = compare_reports(reports["flowlet"], reports["smart"]);
  std::printf("flowlet/vanilla: opportunities=%.2fx p50=%.2fx p99=%.2fx\n",
              fv.opportunity_ratio, fv.p50_ratio, fv.p99_ratio);
  std::printf("flowlet/smart:   opportunities=%.2fx p50=%.2fx p99=%.2fx\n",
              fs.opportunity_ratio, fs.p50_ratio, fs.p99_ratio);
  return 0;
}

int cmd_sweep(CommonOpts& o, const std::string& param,
              const std::vector<double>& values) {
  finalize_config(o);
  if (o.xc.trace_path.empty()) {
    std::cerr << "error: --trace (or [experiment] trace=) is required\n";
    return 1;
  }
  std::vector<TraceRecord> trace = load_trace(o.xc.trace_path);
  std::printf("%-14s %-14s %-8s %-8s %-8s %-10s\n", "param", "value", "p50_us",
              "p99_us", "pulls", "opportunities");
  for (double v : values) {
    ExperimentConfig xc = o.xc;
    if (param == "timeout") xc.cfg.flowlet_timeout_us = static_cast<Us>(v);
    else if (param == "size-threshold")
      xc.cfg.size_threshold_bytes = static_cast<std::uint64_t>(v);
    else if (param == "replication-k")
      xc.cfg.replication_k = static_cast<std::uint32_t>(v);
    else if (param == "alpha") xc.cfg.alpha = v;
    else {
      std::cerr << "error: --param must be timeout, size-threshold, replication-k, "
                   "or alpha\n";
      return 1;
    }
    RunResult rr = run_experiment(xc, trace);
    std::printf("%-14s %-14g %-8llu %-8llu %-8llu %-10llu\n", param.c_str(), v,
                static_cast<unsigned long long>(rr.report.latency.p50),
                static_cast<unsigned long long>(rr.report.latency.p99),
                static_cast<unsigned long long>(rr.report.counters.reactive_pulls),
                static_cast<unsigned long long>(
                    rr.report.counters.allocation_opportunities));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serverless network-function platform experiment driver"};
  app.require_subcommand(1);

  CommonOpts run_o, cmp_o, sweep_o;
  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment");
  add_common_options(run_cmd, run_o);

  CLI::App* cmp_cmd =
      app.add_subcommand("compare", "run flowlet/vanilla/smart over one trace");
  add_common_options(cmp_cmd, cmp_o);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "sweep one knob over values");
  add_common_options(sweep_cmd, sweep_o);
  std::string sweep_param;
  std::vector<double> sweep_values;
  sweep_cmd->add_option("--param", sweep_param,
                        "timeout|size-threshold|replication-k|alpha")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "values to sweep")
      ->required()
      ->delimiter(',');

  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic trace");
  SynthSpec spec;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output trace path")->required();
  synth_cmd->add_option("--seed", spec.seed, "generator seed");
  synth_cmd->add_option("--flows", spec.flow_count, "flow count");
  synth_cmd->add_option("--bursts", spec.bursts_per_flow, "bursts per flow");
  synth_cmd->add_option("--packets-per-burst", spec.packets_per_burst,
                        "packets in each burst");
  synth_cmd->add_option("--payload-bytes", spec.payload_bytes, "packet size");
  synth_cmd->add_option("--burst-gap-us", spec.burst_gap_us, "gap between bursts");
  synth_cmd->add_option("--intra-gap-us", spec.intra_gap_us, "gap inside a burst");
  synth_cmd->add_option("--jitter-us", spec.gap_jitter_us, "uniform gap jitter");
  synth_cmd->add_option("--stagger-us", spec.flow_stagger_us, "flow start stagger");
  synth_cmd->add_option("--heavy-every", spec.heavy_every,
                        "every Nth flow sends heavy bursts (0 = off)");
  synth_cmd->add_option("--heavy-burst-packets", spec.heavy_burst_packets,
                        "packets per heavy burst");
  synth_cmd->add_option("--heavy-payload-bytes", spec.heavy_payload_bytes,
                        "heavy packet size");

  CLI::App* val_cmd = app.add_subcommand("validate-trace", "parse and summarize a trace");
  std::string val_path;
  val_cmd->add_option("--trace", val_path, "trace to validate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run_cmd) return cmd_run(run_o);
    if (*cmp_cmd) return cmd_compare(cmp_o);
    if (*sweep_cmd) return cmd_sweep(sweep_o, sweep_param, sweep_values);
    if (*synth_cmd) {
      std::vector<snf::TraceRecord> recs = snf::generate_synthetic_trace(spec);
      snf::save_trace(recs, synth_out);
      std::printf("wrote %zu packets to %s\n", recs.size(), synth_out.c_str());
      return 0;
    }
    if (*val_cmd) {
      std::vector<snf::TraceRecord> recs = snf::load_trace(val_path);
      std::set<snf::FlowKey> flows;
      std::uint64_t bytes = 0;
      for (const auto& r : recs) {
        flows.insert(r.key);
        bytes += r.size_bytes;
      }
      std::printf("ok: %zu packets, %zu flows, %llu bytes, %llu us\n", recs.size(),
                  flows.size(), static_cast<unsigned long long>(bytes),
                  static_cast<unsigned long long>(
                      recs.empty() ? 0 : recs.back().ts_us - recs.front().ts_us));
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
