#include "snf/cluster.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <stdexcept>

namespace snf {

const char* to_string(AllocMode m) {
  switch (m) {
    case AllocMode::Flowlet: return "flowlet";
    case AllocMode::VanillaFlow: return "vanilla";
    case AllocMode::SmartFlow: return "smart";
  }
  return "?";
}

const char* to_string(StateMode m) {
  switch (m) {
    case StateMode::Proactive: return "proactive";
    case StateMode::Reactive: return "reactive";
    case StateMode::ExternalStore: return "external";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  cfg.validate();
  if (mode == AllocMode::SmartFlow && smart_interval_us == 0)
    throw std::invalid_argument("experiment: smart_interval_us must be > 0");
  if (!(time_scale > 0)) throw std::invalid_argument("experiment: time_scale must be > 0");
  if (controller_count < 1)
    throw std::invalid_argument("experiment: controller_count must be >= 1");
  if (!failures.empty() && controller_count != 1)
    throw std::invalid_argument("experiment: failure injection needs controller_count == 1");
  if (!nf_factory) {
    auto names = nf_names();
    if (std::find(names.begin(), names.end(), nf) == names.end())
      throw std::invalid_argument("experiment: unknown nf '" + nf + "'");
  }
}

namespace {
// Internal close reasons extend the packet-visible ones with administrative
// closes that must not pollute the timeout/size counters.
enum class CloseReason { Timeout, SizeFork, Failover, EndOfRun };
}  // namespace

struct Cluster::Impl {
  ExperimentConfig xc;
  Config cfg;
  MetricsCollector& metrics;
  EventQueue evq;
  SimNet net;
  ResourceManager rm;
  std::mt19937_64 rng;
  std::vector<PacketRecord> trace;
  PlacementFn placement;
  Us horizon = 0;
  Us end_time = 0;
  std::uint64_t peak_units = 0;
  std::uint64_t held_at_end = 0;
  std::map<std::uint32_t, std::uint32_t> remap_failed;  // failed unit -> replacement
  std::map<std::uint32_t, Us> fail_time;
  std::map<std::pair<FlowKey, std::uint32_t>, int> pushes_in_flight;

  // ---------- nodes ----------

  struct FlowRt {
    std::uint64_t cur_flowlet = 0;
    bool ready = false;
    bool pulling = false;
    bool stalled = false;
    bool pending_classify = false;
    bool baseline_pending = false;
    std::uint64_t want_clock = 0;
    std::uint32_t prev_unit = kNoUnit;
    std::uint64_t pull_nonce = 0;
    Us last_flow_rx = 0;
    std::deque<PacketRecord> held;
  };

  struct UnitNode {
    std::uint32_t id = 0;
    bool alive = true;
    bool failed = false;  // crashed (state lost), as opposed to drained
    Us ready_at = 0;
    Us busy_until = 0;
    StateStore store;
    std::unique_ptr<NetworkFunction> nf;
    std::map<FlowKey, FlowRt> flows;
    std::map<FlowKey, std::vector<StatePullReq>> parked;
    std::map<FlowKey, std::uint64_t> pushed_tag;
    bool recovering = false;
    std::uint32_t recover_from = kNoUnit;
    std::uint64_t bucket_idx = UINT64_MAX;
    std::uint64_t bucket_bytes = 0;
    Us last_rx = 0;
  };
  std::map<std::uint32_t, std::unique_ptr<UnitNode>> units;

  struct LoggerNode {
    std::unique_ptr<OutputLogger> ol;
    bool alive = true;
  };
  std::map<std::uint32_t, LoggerNode> loggers;  // by unit id

  struct StoreNode {
    std::map<FlowKey, TaggedState> data;
    std::map<FlowKey, std::vector<StatePullReq>> parked;
  } store_node;

  struct FlowCtl {
    std::uint64_t next_clock = 1;
    std::uint32_t cur_unit = 0;  // 0 = no open flowlet
    std::uint32_t prev_unit = kNoUnit;
    std::uint64_t cur_flowlet = 0;
    std::uint64_t flowlet_seq = 0;  // flowlets this flow has had so far
    std::set<std::uint32_t> holders;
    Us last_pkt = 0;
    bool seen = false;
    // flow-granular baselines
    std::uint32_t pinned_unit = 0;
    std::uint32_t move_to = 0;
    std::uint64_t window_bytes = 0;
    double est_bps = 0;
  };

  struct UnitCtl {
    std::unique_ptr<LoadTracker> tracker;
    double committed = 0;
    std::uint64_t live = 0;
    Us last_traffic = 0;
    double capacity = 0;
  };

  struct ControllerNode {
    std::uint32_t id = 0;
    FlowletTable wgm;
    std::map<FlowKey, FlowCtl> flows;
    std::map<std::uint32_t, UnitCtl> units;
    std::map<std::uint32_t, std::vector<LeaseAllocation>> lease_by_unit;
    std::uint64_t epoch_bytes = 0;
    explicit ControllerNode(const Config& c) : wgm(c) {}
  };
  std::vector<std::unique_ptr<ControllerNode>> controllers;
  std::uint64_t next_flowlet_id = 1;

  // ---------- construction ----------

  Impl(const ExperimentConfig& xc_in, std::vector<PacketRecord> trace_in,
       MetricsCollector& m)
      : xc(xc_in),
        cfg(xc_in.cfg),
        metrics(m),
        net(evq, xc_in.cfg.link_latency_us),
        rm(xc_in.cfg.bw_max_bps),
        rng(xc_in.seed ^ 0x9e3779b97f4a7c15ull),
        trace(std::move(trace_in)) {
    xc.validate();
    for (std::uint32_t c = 1; c <= xc.controller_count; ++c) {
      auto ctl = std::make_unique<ControllerNode>(cfg);
      ctl->id = c;
      controllers.push_back(std::move(ctl));
      std::uint32_t cid = c;
      net.attach(NodeAddr::controller(c), [this, cid](NodeAddr src, Frame f) {
        on_controller_frame(cid, src, f);
      });
    }
    if (xc.state_mode == StateMode::ExternalStore)
      net.attach(NodeAddr::store(),
                 [this](NodeAddr src, Frame f) { on_store_frame(src, f); });
    net.attach(rm_addr(), [this](NodeAddr src, Frame f) { on_rm_frame(src, f); });

    Us last_ts = trace.empty() ? 0 : trace.back().arrival_ts;
    horizon = last_ts + cfg.unit_idle_retire_us + 4 * cfg.epoch_us +
              16 * cfg.flowlet_timeout_us + 64 * cfg.link_latency_us +
              4 * cfg.pull_timeout_us;
  }

  // ---------- helpers ----------

  // The resource manager answers capacity requests at its own address.
  static NodeAddr rm_addr() { return NodeAddr{0x30000001u}; }

  ControllerNode& controller_of(const FlowKey& k) {
    if (controllers.size() == 1) return *controllers[0];
    return *controllers[hash_flow_key(k) % controllers.size()];
  }

  std::uint32_t remap(std::uint32_t unit) const {
    auto it = remap_failed.find(unit);
    while (it != remap_failed.end()) {
      unit = it->second;
      it = remap_failed.find(unit);
    }
    return unit;
  }

  bool unit_alive(std::uint32_t id) const {
    auto it = units.find(id);
    return it != units.end() && it->second->alive;
  }

  std::vector<std::uint32_t> active_unit_ids_sorted() const {
    std::vector<std::uint32_t> out;
    for (const auto& [id, u] : units)
      if (u->alive) out.push_back(id);
    return out;
  }

  std::unique_ptr<NetworkFunction> fresh_nf() {
    if (xc.nf_factory) return xc.nf_factory();
    return make_nf(xc.nf, xc.nf_config);
  }

  void spawn_unit_node(std::uint32_t id) {
    if (units.count(id)) return;
    auto u = std::make_unique<UnitNode>();
    u->id = id;
    u->ready_at = evq.now() + cfg.launch_delay_us;
    u->nf = fresh_nf();
    u->last_rx = evq.now();
    units[id] = std::move(u);
    net.attach(NodeAddr::unit(id), [this, id](NodeAddr src, Frame f) {
      on_unit_frame(id, src, f);
    });
    if (xc.fault_tolerant) {
      LoggerNode ln;
      ln.ol = std::make_unique<OutputLogger>(id);
      loggers[id] = std::move(ln);
      net.attach(NodeAddr::logger(id), [this, id](NodeAddr src, Frame f) {
        on_logger_frame(id, src, f);
      });
    }
    metrics.counters.launches += 1;
    metrics.on_unit_count_change(evq.now(), +1);
    std::uint64_t active = 0;
    for (const auto& [uid, un] : units)
      if (un->alive) ++active;
    peak_units = std::max(peak_units, active);
    schedule_unit_sweep(id);
  }

  void schedule_unit_sweep(std::uint32_t id) {
    Us at = evq.now() + cfg.epoch_us;
    if (at > horizon) return;
    evq.schedule(at, [this, id]() {
      auto it = units.find(id);
      if (it == units.end() || !it->second->alive) return;
      unit_idle_sweep(*it->second);
      schedule_unit_sweep(id);
    });
  }

  void unit_idle_sweep(UnitNode& u) {
    // Retire per-flow state idle past the horizon, giving the NF a chance to
    // release derived resources (NAT ports).
    Us now = evq.now();
    std::vector<FlowKey> victims;
    for (const FlowKey& flow : u.store.primary_flows()) {
      auto it = u.flows.find(flow);
      Us last = it != u.flows.end() ? it->second.last_flow_rx : 0;
      if (now > last && now - last > cfg.flow_idle_retire_us) victims.push_back(flow);
    }
    for (const FlowKey& flow : victims) {
      auto it = u.flows.find(flow);
      if (it != u.flows.end() && (!it->second.held.empty() || it->second.pulling))
        continue;
      u.nf->on_flow_retire(flow, u.store.snapshot(flow, u.id));
      u.store.drop_flow(flow);
      u.flows.erase(flow);
      u.pushed_tag.erase(flow);
    }
  }

  // Grants capacity through the resource manager and materializes any newly
  // launched unit nodes. Returns the id of the first unit in the grant.
  std::uint32_t grant_capacity(ControllerNode& C, double demand_bps) {
    CapacityLease lease = rm.request_capacity(C.id, demand_bps);
    std::uint32_t first = 0;
    for (const LeaseAllocation& a : lease.allocations) {
      if (!first) first = a.unit;
      spawn_unit_node(a.unit);
      UnitCtl& v = C.units[a.unit];
      if (!v.tracker)
        v.tracker = std::make_unique<LoadTracker>(cfg.bucket_width_us, cfg.bucket_count);
      v.capacity += a.fraction * cfg.bw_max_bps;
      v.last_traffic = evq.now();
      C.lease_by_unit[a.unit].push_back(a);
    }
    return first;
  }

  void release_unit(ControllerNode& C, std::uint32_t id) {
    auto lit = C.lease_by_unit.find(id);
    if (lit != C.lease_by_unit.end()) {
      rm.release_capacity(C.id, lit->second);
      C.lease_by_unit.erase(lit);
    }
    C.units.erase(id);
    if (rm.leased_fraction(id) == 0) shutdown_unit_node(id);
  }

  void shutdown_unit_node(std::uint32_t id) {
    auto it = units.find(id);
    if (it == units.end() || !it->second->alive) return;
    it->second->alive = false;
    net.detach(NodeAddr::unit(id));
    metrics.counters.retires += 1;
    metrics.on_unit_count_change(evq.now(), -1);
  }

  // ---------- controller: packet path ----------

  void on_arrival(PacketRecord pkt) {
    ControllerNode& C = controller_of(pkt.key);
    Us now = evq.now();
    metrics.on_arrival(pkt.trace_idx, now, pkt.size);
    C.epoch_bytes += pkt.size;
    FlowCtl& f = C.flows[pkt.key];

    std::uint32_t route = 0;
    bool boundary = false;
    switch (xc.mode) {
      case AllocMode::Flowlet: {
        FlowletDecision d = C.wgm.observe_packet(pkt, now);
        if (!d.is_new) {
          route = f.cur_unit;
        } else {
          boundary = true;
          close_open_flowlet(C, pkt.key, f,
                             d.reason == StartReason::SizeFork ? CloseReason::SizeFork
                                                               : CloseReason::Timeout);
          double est = C.wgm.estimate_demand(pkt.key);
          route = choose_unit(C, f, pkt.key, est);
          C.wgm.start_flowlet(pkt.key, pkt, now, d.reason, UnitId{route}, est,
                              next_flowlet_id);
          f.cur_flowlet = next_flowlet_id++;
          f.flowlet_seq += 1;
          f.cur_unit = route;
          UnitCtl& v = C.units[route];
          v.committed += est;
          v.live += 1;
          metrics.counters.allocation_opportunities += 1;
        }
        break;
      }
      case AllocMode::VanillaFlow: {
        if (!f.seen) {
          boundary = true;
          f.est_bps = cfg.demand_seed_bps;
          route = choose_unit(C, f, pkt.key, f.est_bps);
          f.pinned_unit = route;
          f.cur_flowlet = next_flowlet_id++;
          f.flowlet_seq += 1;
          C.units[route].committed += f.est_bps;
          C.units[route].live += 1;
          metrics.counters.allocation_opportunities += 1;
        } else {
          route = f.pinned_unit;
        }
        break;
      }
      case AllocMode::SmartFlow: {
        if (!f.seen) {
          boundary = true;
          f.est_bps = cfg.demand_seed_bps;
          route = choose_unit(C, f, pkt.key, f.est_bps);
          f.pinned_unit = route;
          f.cur_flowlet = next_flowlet_id++;
          f.flowlet_seq += 1;
          C.units[route].live += 1;
          C.units[route].committed += f.est_bps;
          metrics.counters.allocation_opportunities += 1;
        } else if (f.move_to && f.move_to != f.pinned_unit) {
          boundary = true;
          f.prev_unit = f.pinned_unit;
          auto pit = C.units.find(f.pinned_unit);
          if (pit != C.units.end() && pit->second.live > 0) pit->second.live -= 1;
          f.pinned_unit = f.move_to;
          f.move_to = 0;
          C.units[f.pinned_unit].live += 1;
          f.cur_flowlet = next_flowlet_id++;
          f.flowlet_seq += 1;
          metrics.counters.allocation_opportunities += 1;
          route = f.pinned_unit;
        } else {
          route = f.pinned_unit;
        }
        f.window_bytes += pkt.size;
        break;
      }
    }
    f.seen = true;
    f.last_pkt = now;
    if (xc.mode != AllocMode::Flowlet) f.cur_unit = f.pinned_unit;

    pkt.meta.logical_clock = f.next_clock++;
    pkt.meta.flowlet_id = f.cur_flowlet;
    pkt.meta.prev_unit = f.prev_unit == kNoUnit
                             ? std::nullopt
                             : std::make_optional(UnitId{remap(f.prev_unit)});
    (void)boundary;

    auto vit = C.units.find(route);
    if (vit != C.units.end()) vit->second.last_traffic = now;
    net.send(NodeAddr::controller(C.id), NodeAddr::unit(route), MsgType::PACKET,
             encode_packet_msg(pkt));

    if (xc.mode == AllocMode::Flowlet) {
      // Closes the flowlet promptly when the gap elapses with no traffic, so
      // estimator updates and capacity release do not wait for a late packet.
      std::uint32_t cid = C.id;
      FlowKey key = pkt.key;
      std::uint64_t flid = f.cur_flowlet;
      evq.schedule(now + cfg.flowlet_timeout_us + 1, [this, cid, key, flid, now]() {
        ControllerNode& Cc = *controllers[cid - 1];
        auto fit = Cc.flows.find(key);
        if (fit == Cc.flows.end() || fit->second.cur_flowlet != flid ||
            fit->second.cur_unit == 0)
          return;
        const FlowletState* cur = Cc.wgm.current(key);
        if (!cur || cur->last_pkt_ts != now) return;  // traffic since, or gone
        close_open_flowlet(Cc, key, fit->second, CloseReason::Timeout);
      });
    }
  }

  std::uint32_t choose_unit(ControllerNode& C, FlowCtl& f, const FlowKey& key,
                            double est) {
    if (placement) {
      std::uint32_t want = placement(key, f.flowlet_seq);
      if (want) {
        while (!units.count(want)) {
          std::uint32_t got = grant_capacity(C, cfg.bw_max_bps);
          if (got > want + 64) throw std::logic_error("placement override: bad unit id");
        }
        UnitCtl& v = C.units[want];
        if (!v.tracker)
          v.tracker = std::make_unique<LoadTracker>(cfg.bucket_width_us, cfg.bucket_count);
        if (v.capacity == 0) v.capacity = cfg.bw_max_bps;
        return want;
      }
    }
    std::vector<UnitView> views;
    views.reserve(C.units.size());
    Us now = evq.now();
    for (const auto& [id, v] : C.units) {
      if (!unit_alive(id)) continue;
      views.push_back(
          {id, v.capacity, v.tracker ? v.tracker->load_bps(now) : 0.0, v.committed});
    }
    std::set<std::uint32_t> holders;
    if (f.prev_unit != kNoUnit) {
      std::uint32_t p = remap(f.prev_unit);
      if (unit_alive(p)) holders.insert(p);
    }
    if (xc.state_mode == StateMode::Proactive)
      for (std::uint32_t h : f.holders)
        if (unit_alive(h)) holders.insert(h);
    AssignResult r = assign_flowlet(est, views, holders, cfg, 0);
    if (r.launched) return grant_capacity(C, cfg.bw_max_bps);
    return r.unit;
  }

  void close_open_flowlet(ControllerNode& C, const FlowKey& key, FlowCtl& f,
                          CloseReason reason) {
    if (f.cur_unit == 0) return;
    auto closed = C.wgm.close_current(key);
    auto vit = C.units.find(f.cur_unit);
    if (vit != C.units.end() && closed) {
      vit->second.committed -= closed->estimate_bps;
      if (vit->second.committed < 0) vit->second.committed = 0;
      if (vit->second.live > 0) vit->second.live -= 1;
    }
    f.prev_unit = f.cur_unit;
    f.cur_unit = 0;
    switch (reason) {
      case CloseReason::Timeout: metrics.counters.timeout_flowlets += 1; break;
      case CloseReason::SizeFork: metrics.counters.size_forks += 1; break;
      case CloseReason::Failover: metrics.counters.failover_closes += 1; break;
      case CloseReason::EndOfRun: break;
    }
  }

  // ---------- controller: frames & timers ----------

  void on_controller_frame(std::uint32_t cid, NodeAddr src, const Frame& fr) {
    ControllerNode& C = *controllers[cid - 1];
    (void)src;
    switch (fr.type) {
      case MsgType::LOAD_REPORT: {
        LoadReportMsg m = decode_load_report(fr.payload);
        auto it = C.units.find(m.unit);
        if (it != C.units.end() && it->second.tracker)
          it->second.tracker->record(m.bucket_start_us, m.bytes);
        break;
      }
      case MsgType::CAPACITY_GRANT: {
        CapacityGrantMsg g = decode_capacity_grant(fr.payload);
        for (const auto& [unit, fraction] : g.allocations) {
          spawn_unit_node(unit);
          UnitCtl& v = C.units[unit];
          if (!v.tracker)
            v.tracker =
                std::make_unique<LoadTracker>(cfg.bucket_width_us, cfg.bucket_count);
          v.capacity += fraction * cfg.bw_max_bps;
          v.last_traffic = evq.now();
          C.lease_by_unit[unit].push_back({unit, fraction});
        }
        break;
      }
      default:
        break;
    }
  }

  void on_rm_frame(NodeAddr src, const Frame& fr) {
    (void)src;
    if (fr.type != MsgType::CAPACITY_REQ) return;
    CapacityReqMsg m = decode_capacity_req(fr.payload);
    CapacityLease lease = rm.request_capacity(m.controller, m.demand_bps);
    CapacityGrantMsg g;
    g.controller = m.controller;
    for (const LeaseAllocation& a : lease.allocations)
      g.allocations.emplace_back(a.unit, a.fraction);
    g.shortfall_bps = lease.shortfall_bps;
    net.send(rm_addr(), NodeAddr::controller(m.controller), MsgType::CAPACITY_GRANT,
             encode_capacity_grant(g));
  }

  void schedule_controller_timers(std::uint32_t cid) {
    Us at = evq.now() + cfg.epoch_us;
    if (at > horizon) return;
    evq.schedule(at, [this, cid]() {
      controller_epoch(*controllers[cid - 1]);
      schedule_controller_timers(cid);
    });
  }

  void controller_epoch(ControllerNode& C) {
    Us now = evq.now();
    // Capacity negotiation with the resource manager when the epoch's offered
    // load crowds the lease.
    double leased = rm.controller_granted_bps(C.id);
    double demand =
        static_cast<double>(C.epoch_bytes) * 8.0 * 1e6 / static_cast<double>(cfg.epoch_us);
    C.epoch_bytes = 0;
    if (demand > 0.9 * leased && !trace.empty()) {
      double delta = demand * 1.2 - leased;
      if (delta > 0)
        net.send(NodeAddr::controller(C.id), rm_addr(), MsgType::CAPACITY_REQ,
                 encode_capacity_req({C.id, delta}));
    }

    // Launch/retire sweep.
    std::vector<UnitActivity> acts;
    for (const auto& [id, v] : C.units) {
      if (!unit_alive(id)) continue;
      double util = v.tracker ? v.tracker->load_bps(now) / cfg.bw_max_bps : 0.0;
      acts.push_back({id, util, v.last_traffic, v.live});
    }
    ScaleAction act = scale_decision(acts, now, cfg);
    if (act.kind == ScaleAction::Kind::Launch && now + cfg.epoch_us < horizon) {
      grant_capacity(C, cfg.bw_max_bps * act.launch_count);
    } else if (act.kind == ScaleAction::Kind::Retire) {
      release_unit(C, act.retire_unit);
    }

    // Flow bookkeeping retirement.
    C.wgm.retire_idle_flows(now);
    for (auto it = C.flows.begin(); it != C.flows.end();) {
      FlowCtl& f = it->second;
      if (f.cur_unit == 0 && now > f.last_pkt &&
          now - f.last_pkt > cfg.flow_idle_retire_us) {
        if (xc.mode != AllocMode::Flowlet && f.pinned_unit) {
          auto vit = C.units.find(f.pinned_unit);
          if (vit != C.units.end()) {
            vit->second.committed -= f.est_bps;
            if (vit->second.committed < 0) vit->second.committed = 0;
            if (vit->second.live > 0) vit->second.live -= 1;
          }
        }
        it = C.flows.erase(it);
      } else {
        ++it;
      }
    }
  }

  void schedule_smart_timer(std::uint32_t cid) {
    Us at = evq.now() + xc.smart_interval_us;
    if (at > horizon) return;
    evq.schedule(at, [this, cid]() {
      smart_rebalance(*controllers[cid - 1]);
      schedule_smart_timer(cid);
    });
  }

  void smart_rebalance(ControllerNode& C) {
    // Refresh flow rate estimates from the window, then move flows off
    // overloaded units onto the best feasible target.
    double interval_s = static_cast<double>(xc.smart_interval_us) / 1e6;
    std::map<std::uint32_t, double> committed;
    for (auto& [key, f] : C.flows) {
      if (!f.seen || !f.pinned_unit) continue;
      double rate = static_cast<double>(f.window_bytes) * 8.0 / interval_s;
      f.window_bytes = 0;
      f.est_bps = ewma_update(f.est_bps, rate, cfg.ewma_delta);
      committed[f.pinned_unit] += f.est_bps;
    }
    for (auto& [id, v] : C.units) v.committed = committed[id];

    Us now = evq.now();
    for (auto& [uid, over] : committed) {
      if (over <= cfg.bw_max_bps) continue;
      // Largest flows first until the unit fits again.
      std::vector<std::pair<double, FlowKey>> flows_on;
      for (auto& [key, f] : C.flows)
        if (f.pinned_unit == uid && f.move_to == 0) flows_on.push_back({f.est_bps, key});
      std::sort(flows_on.begin(), flows_on.end(),
                [](const auto& a, const auto& b) { return a.first > b.first; });
      double excess = over - cfg.bw_max_bps;
      for (const auto& [est, key] : flows_on) {
        if (excess <= 0) break;
        std::vector<UnitView> views;
        for (const auto& [id, v] : C.units) {
          if (!unit_alive(id) || id == uid) continue;
          views.push_back(
              {id, v.capacity, v.tracker ? v.tracker->load_bps(now) : 0.0, v.committed});
        }
        AssignResult r = assign_flowlet(est, views, {}, cfg, 0);
        std::uint32_t dest = r.launched ? grant_capacity(C, cfg.bw_max_bps) : r.unit;
        FlowCtl& f = C.flows[key];
        f.move_to = dest;
        C.units[dest].committed += est;
        C.units[uid].committed -= est;
        excess -= est;
      }
    }
  }

  // ---------- unit: frames ----------

  void on_unit_frame(std::uint32_t uid, NodeAddr src, const Frame& fr) {
    auto it = units.find(uid);
    if (it == units.end()) return;
    UnitNode& U = *it->second;
    switch (fr.type) {
      case MsgType::PACKET: {
        PacketRecord pkt = decode_packet_msg(fr.payload);
        if (!U.alive) {
          metrics.on_lost(pkt.trace_idx, "unit-failed");
          return;
        }
        on_unit_packet(U, std::move(pkt));
        break;
      }
      case MsgType::STATE_PUSH: {
        TaggedState ts = decode_state_push(fr.payload);
        auto pit = pushes_in_flight.find({ts.flow, uid});
        if (pit != pushes_in_flight.end() && --pit->second <= 0)
          pushes_in_flight.erase(pit);
        if (!U.alive) return;
        U.store.install_replica(ts);
        resolve_stall(U, ts.flow);
        break;
      }
      case MsgType::STATE_PULL_REQ: {
        if (!U.alive) return;
        StatePullReq req = decode_state_pull_req(fr.payload);
        serve_or_park_pull(U, req);
        break;
      }
      case MsgType::STATE_PULL_RESP: {
        if (!U.alive) return;
        TaggedState ts = decode_state_pull_resp(fr.payload);
        on_pull_response(U, ts);
        break;
      }
      case MsgType::RECOVERY_PULL: {
        if (!U.alive) return;
        RecoveryPullMsg m = decode_recovery_pull(fr.payload);
        if (m.role == 0) {
          // A logger asks for fresh snapshots (mirror resync).
          RecoveryPullMsg resp;
          resp.role = 1;
          resp.requester = U.id;
          if (m.flows.empty()) {
            resp.snapshots = U.store.snapshot_all(U.id);
          } else {
            for (const FlowKey& flow : m.flows)
              if (U.store.has_primary(flow))
                resp.snapshots.push_back(U.store.snapshot(flow, U.id));
          }
          net.send(NodeAddr::unit(uid), NodeAddr{m.requester}, MsgType::RECOVERY_PULL,
                   encode_recovery_pull(resp));
        } else {
          on_recovery_snapshots(U, src, m);
        }
        break;
      }
      default:
        break;
    }
  }

  bool push_in_flight(const FlowKey& flow, std::uint32_t uid) const {
    auto it = pushes_in_flight.find({flow, uid});
    return it != pushes_in_flight.end() && it->second > 0;
  }

  void on_unit_packet(UnitNode& U, PacketRecord pkt) {
    Us now = evq.now();
    metrics.on_unit_offered(U.id, now, pkt.size);
    U.last_rx = now;
    FlowRt& fr = U.flows[pkt.key];
    fr.last_flow_rx = now;

    if (fr.cur_flowlet != pkt.meta.flowlet_id) {
      fr.cur_flowlet = pkt.meta.flowlet_id;
      fr.baseline_pending = xc.fault_tolerant;
      fr.prev_unit = pkt.meta.prev_unit ? pkt.meta.prev_unit->id : kNoUnit;
      if (U.recovering) {
        fr.ready = false;
        fr.pending_classify = true;
      } else if (fr.pulling || fr.stalled) {
        // An earlier flowlet's state transfer is still in flight. This
        // flowlet's packets queue behind it; once the transfer lands the
        // state is local (the held packets are clock-contiguous across the
        // flowlet boundary, so one adoption covers them all).
        metrics.counters.local_hits += 1;
      } else {
        init_flowlet(U, fr, pkt);
      }
    }
    if (fr.ready) {
      enqueue_service(U, pkt);
    } else {
      fr.held.push_back(pkt);
    }

    if (xc.state_mode != StateMode::Reactive) {
      // Replicate this flow's state once the inactivity gap reaches half the
      // flowlet timeout.
      std::uint32_t uid = U.id;
      FlowKey key = pkt.key;
      Us seen = now;
      evq.schedule(now + cfg.flowlet_timeout_us / 2, [this, uid, key, seen]() {
        auto uit = units.find(uid);
        if (uit == units.end() || !uit->second->alive) return;
        UnitNode& Un = *uit->second;
        auto fit = Un.flows.find(key);
        if (fit == Un.flows.end() || fit->second.last_flow_rx != seen) return;
        replicate_flow(Un, key);
      });
    }
  }

  void init_flowlet(UnitNode& U, FlowRt& fr, const PacketRecord& pkt) {
    InitOutcome oc = classify_flowlet_init(U.store, U.id, pkt.key, pkt.meta,
                                           push_in_flight(pkt.key, U.id));
    switch (oc.kind) {
      case InitOutcomeKind::Fresh:
        metrics.counters.fresh_inits += 1;
        U.store.admit_fresh(pkt.key);
        U.store.touch(pkt.key, evq.now());
        fr.ready = true;
        break;
      case InitOutcomeKind::LocalHit:
        metrics.counters.local_hits += 1;
        fr.ready = true;
        break;
      case InitOutcomeKind::ProactiveHit: {
        metrics.counters.proactive_hits += 1;
        U.store.adopt_replica(pkt.key);
        U.nf->on_state_adopted(U.store.snapshot(pkt.key, U.id));
        fr.ready = true;
        break;
      }
      case InitOutcomeKind::StallPendingTransfer: {
        metrics.counters.stall_waits += 1;
        fr.ready = false;
        fr.stalled = true;
        fr.want_clock = pkt.meta.logical_clock;
        arm_pull_timeout(U.id, pkt.key, fr.pull_nonce);
        break;
      }
      case InitOutcomeKind::ReactivePull:
        start_pull(U, fr, pkt.key, pkt.meta.logical_clock, oc.pull_from);
        break;
    }
  }

  void start_pull(UnitNode& U, FlowRt& fr, const FlowKey& key, std::uint64_t want,
                  std::uint32_t target) {
    fr.ready = false;  // a stale local copy must not serve packets mid-pull
    fr.pulling = true;
    fr.stalled = false;
    fr.want_clock = want;
    fr.pull_nonce += 1;
    metrics.counters.reactive_pulls += 1;
    StatePullReq req;
    req.flow = key;
    req.want_clock = want;
    req.requester = NodeAddr::unit(U.id).raw;
    req.prev_hint = remap(target);
    if (xc.state_mode == StateMode::ExternalStore) {
      metrics.counters.external_store_reads += 1;
      net.send(NodeAddr::unit(U.id), NodeAddr::store(), MsgType::STATE_PULL_REQ,
               encode_state_pull_req(req));
    } else {
      net.send(NodeAddr::unit(U.id), NodeAddr::unit(remap(target)),
               MsgType::STATE_PULL_REQ, encode_state_pull_req(req));
    }
    arm_pull_timeout(U.id, key, fr.pull_nonce);
  }

  void arm_pull_timeout(std::uint32_t uid, const FlowKey& key, std::uint64_t nonce) {
    evq.schedule(evq.now() + cfg.pull_timeout_us, [this, uid, key, nonce]() {
      auto uit = units.find(uid);
      if (uit == units.end() || !uit->second->alive) return;
      UnitNode& U = *uit->second;
      auto fit = U.flows.find(key);
      if (fit == U.flows.end()) return;
      FlowRt& fr = fit->second;
      if (fr.ready || fr.pull_nonce != nonce || (!fr.pulling && !fr.stalled)) return;
      metrics.counters.pull_timeouts += 1;
      std::uint32_t target = remap(fr.prev_unit);
      if (fr.stalled) {
        // The expected push never landed; fall back to a pull.
        start_pull(U, fr, key, fr.want_clock, fr.prev_unit);
        return;
      }
      if (!unit_alive(target) && xc.fault_tolerant && loggers.count(fr.prev_unit)) {
        // Previous unit is gone: recover this flow from its output logger.
        RecoveryPullMsg m;
        m.role = 0;
        m.requester = NodeAddr::unit(uid).raw;
        m.flows = {key};
        net.send(NodeAddr::unit(uid), NodeAddr::logger(remap_logger(fr.prev_unit)),
                 MsgType::RECOVERY_PULL, encode_recovery_pull(m));
        fr.pull_nonce += 1;
        arm_pull_timeout(uid, key, fr.pull_nonce);
        return;
      }
      // Retry (the target may have been remapped since).
      fr.pull_nonce += 1;
      StatePullReq req;
      req.flow = key;
      req.want_clock = fr.want_clock;
      req.requester = NodeAddr::unit(uid).raw;
      req.prev_hint = target;
      if (xc.state_mode == StateMode::ExternalStore)
        net.send(NodeAddr::unit(uid), NodeAddr::store(), MsgType::STATE_PULL_REQ,
                 encode_state_pull_req(req));
      else
        net.send(NodeAddr::unit(uid), NodeAddr::unit(target), MsgType::STATE_PULL_REQ,
                 encode_state_pull_req(req));
      arm_pull_timeout(uid, key, fr.pull_nonce);
    });
  }

  std::uint32_t remap_logger(std::uint32_t unit) const {
    // Loggers are keyed by their original unit id and survive it.
    return unit;
  }

  void serve_or_park_pull(UnitNode& U, const StatePullReq& req) {
    if (U.store.has_primary(req.flow)) {
      std::uint64_t tag = U.store.tag(req.flow);
      bool lossy = U.store.lossy(req.flow);
      bool servable = (tag + 1 == req.want_clock) || (lossy && tag < req.want_clock);
      if (servable) {
        net.send(NodeAddr::unit(U.id), NodeAddr{req.requester}, MsgType::STATE_PULL_RESP,
                 encode_state_pull_resp(U.store.snapshot(req.flow, U.id)));
        return;
      }
      if (tag + 1 > req.want_clock) {
        // The requester's packet is older than our state; answering lets its
        // clock check reject adoption, and it will re-pull. This only arises
        // from duplicated timeouts; answer with what we have.
        net.send(NodeAddr::unit(U.id), NodeAddr{req.requester}, MsgType::STATE_PULL_RESP,
                 encode_state_pull_resp(U.store.snapshot(req.flow, U.id)));
        return;
      }
    }
    // Not there yet: defer until our copy reaches want_clock - 1.
    U.parked[req.flow].push_back(req);
  }

  void serve_parked(UnitNode& U, const FlowKey& flow) {
    auto it = U.parked.find(flow);
    if (it == U.parked.end() || !U.store.has_primary(flow)) return;
    std::uint64_t tag = U.store.tag(flow);
    bool lossy = U.store.lossy(flow);
    auto& reqs = it->second;
    for (auto rit = reqs.begin(); rit != reqs.end();) {
      if (tag + 1 == rit->want_clock || (lossy && tag < rit->want_clock)) {
        net.send(NodeAddr::unit(U.id), NodeAddr{rit->requester}, MsgType::STATE_PULL_RESP,
                 encode_state_pull_resp(U.store.snapshot(flow, U.id)));
        rit = reqs.erase(rit);
      } else {
        ++rit;
      }
    }
    if (reqs.empty()) U.parked.erase(it);
  }

  void on_pull_response(UnitNode& U, const TaggedState& ts) {
    auto fit = U.flows.find(ts.flow);
    if (fit == U.flows.end() || !fit->second.pulling) {
      U.store.install_replica(ts);
      return;
    }
    FlowRt& fr = fit->second;
    if (accepts_clock(ts.clock_tag, ts.lossy, fr.want_clock)) {
      U.store.adopt_snapshot(ts);
      U.store.touch(ts.flow, evq.now());
      U.nf->on_state_adopted(ts);
      fr.pulling = false;
      fr.ready = true;
      drain_held(U, ts.flow);
      serve_parked(U, ts.flow);
    } else {
      // Stale answer; keep it as a replica and let the timeout retry.
      U.store.install_replica(ts);
    }
  }

  void resolve_stall(UnitNode& U, const FlowKey& flow) {
    auto fit = U.flows.find(flow);
    if (fit == U.flows.end()) return;
    FlowRt& fr = fit->second;
    if (!fr.stalled || fr.ready) return;
    if (U.store.has_replica(flow) &&
        accepts_clock(U.store.replica_tag(flow), U.store.replica_lossy(flow),
                      fr.want_clock)) {
      metrics.counters.proactive_hits += 1;
      U.store.adopt_replica(flow);
      U.store.touch(flow, evq.now());
      U.nf->on_state_adopted(U.store.snapshot(flow, U.id));
      fr.stalled = false;
      fr.ready = true;
      drain_held(U, flow);
      serve_parked(U, flow);
    } else if (!push_in_flight(flow, U.id)) {
      // The push that was in flight is stale; pull instead.
      start_pull(U, fr, flow, fr.want_clock, fr.prev_unit);
    }
  }

  void drain_held(UnitNode& U, const FlowKey& flow) {
    auto fit = U.flows.find(flow);
    if (fit == U.flows.end()) return;
    FlowRt& fr = fit->second;
    while (!fr.held.empty()) {
      PacketRecord pkt = std::move(fr.held.front());
      fr.held.pop_front();
      enqueue_service(U, pkt);
    }
  }

  // ---------- unit: processing ----------

  struct StoreApi final : StateApi {
    StateStore& store;
    const FlowKey& owner;
    std::uint64_t clock;
    StoreApi(StateStore& s, const FlowKey& o, std::uint64_t c)
        : store(s), owner(o), clock(c) {}
    std::optional<Bytes> get(const std::string& key) override { return store.get(key); }
    void put(const std::string& key, Bytes value) override {
      store.put(owner, key, std::move(value), clock);
    }
  };

  void enqueue_service(UnitNode& U, const PacketRecord& pkt) {
    Us start = std::max({U.busy_until, evq.now(), U.ready_at});
    Us done = start + service_time_us(pkt.size, cfg.bw_max_bps);
    U.busy_until = done;
    std::uint32_t uid = U.id;
    evq.schedule(done, [this, uid, pkt]() {
      auto it = units.find(uid);
      if (it == units.end()) return;
      process_packet(*it->second, pkt);
    });
  }

  void process_packet(UnitNode& U, const PacketRecord& pkt) {
    if (!U.alive) {
      metrics.on_lost(pkt.trace_idx, "unit-failed");
      return;
    }
    Us now = evq.now();
    if (!accepts_clock(U.store.tag(pkt.key), U.store.lossy(pkt.key),
                       pkt.meta.logical_clock)) {
      // Last-line guard: a packet must never touch state that has not seen
      // every prior packet of its flow. Anything counted here is a bug.
      metrics.counters.staleness_violations += 1;
      metrics.on_lost(pkt.trace_idx, "staleness");
      return;
    }

    StoreApi api(U.store, pkt.key, pkt.meta.logical_clock);
    PacketContext ctx{pkt, now, api};
    Verdict v = U.nf->process(ctx);
    U.store.mark_applied(pkt.key, pkt.meta.logical_clock);
    U.store.touch(pkt.key, now);
    metrics.on_verdict(pkt.trace_idx, v.text);

    // Drain accounting for the load reports.
    std::uint64_t bidx = now / cfg.bucket_width_us;
    if (bidx != U.bucket_idx) {
      flush_load_bucket(U);
      U.bucket_idx = bidx;
    }
    U.bucket_bytes += pkt.size;

    std::vector<DeltaRecord> deltas = U.store.take_deltas();
    auto fit = U.flows.find(pkt.key);
    bool baseline = fit != U.flows.end() && fit->second.baseline_pending;
    if (xc.fault_tolerant && loggers.count(U.id)) {
      DeltaLogMsg m;
      m.flow = pkt.key;
      m.packet_clock = pkt.meta.logical_clock;
      m.unit = U.id;
      m.trace_idx = pkt.trace_idx;
      m.baseline = baseline;
      if (baseline) {
        m.snapshot = U.store.snapshot(pkt.key, U.id);
        fit->second.baseline_pending = false;
      } else {
        m.deltas = std::move(deltas);
      }
      net.send(NodeAddr::unit(U.id), NodeAddr::logger(U.id), MsgType::DELTA_LOG,
               encode_delta_log(m));
    } else {
      metrics.on_externalized(pkt.trace_idx, now);
    }
    serve_parked(U, pkt.key);
  }

  void flush_load_bucket(UnitNode& U) {
    if (U.bucket_idx == UINT64_MAX || U.bucket_bytes == 0) {
      U.bucket_bytes = 0;
      return;
    }
    LoadReportMsg m;
    m.unit = U.id;
    m.bucket_start_us = U.bucket_idx * cfg.bucket_width_us;
    m.bytes = U.bucket_bytes;
    U.bucket_bytes = 0;
    for (const auto& C : controllers)
      if (C->units.count(U.id))
        net.send(NodeAddr::unit(U.id), NodeAddr::controller(C->id), MsgType::LOAD_REPORT,
                 encode_load_report(m));
  }

  // ---------- replication ----------

  void replicate_flow(UnitNode& U, const FlowKey& key) {
    if (!U.store.has_primary(key)) return;
    std::uint64_t tag = U.store.tag(key);
    auto pit = U.pushed_tag.find(key);
    if (pit != U.pushed_tag.end() && pit->second == tag) return;  // nothing new
    U.pushed_tag[key] = tag;
    TaggedState snap = U.store.snapshot(key, U.id);

    if (xc.state_mode == StateMode::ExternalStore) {
      Bytes payload = encode_state_push(snap);
      metrics.on_replication_push(payload.size() + 5);
      net.send(NodeAddr::unit(U.id), NodeAddr::store(), MsgType::STATE_PUSH, payload);
      return;
    }

    std::vector<std::uint32_t> active = active_unit_ids_sorted();
    std::vector<std::uint32_t> targets =
        choose_replication_targets(active, cfg.replication_k, xc.replicator, rng);
    std::set<std::uint32_t> holder_set(targets.begin(), targets.end());
    holder_set.insert(U.id);
    // The controller tracks who holds copies so assignment can favor them.
    ControllerNode& C = controller_of(key);
    auto cfit = C.flows.find(key);
    if (cfit != C.flows.end()) cfit->second.holders = holder_set;

    for (std::uint32_t t : targets) {
      if (t == U.id) continue;
      Bytes payload = encode_state_push(snap);
      metrics.on_replication_push(payload.size() + 5);
      pushes_in_flight[{key, t}] += 1;
      net.send(NodeAddr::unit(U.id), NodeAddr::unit(t), MsgType::STATE_PUSH, payload);
    }
  }

  // ---------- logger ----------

  void on_logger_frame(std::uint32_t unit_id, NodeAddr src, const Frame& fr) {
    auto it = loggers.find(unit_id);
    if (it == loggers.end() || !it->second.alive) return;
    OutputLogger& ol = *it->second.ol;
    (void)src;
    switch (fr.type) {
      case MsgType::DELTA_LOG: {
        DeltaLogMsg m = decode_delta_log(fr.payload);
        OutputLogger::Action act = ol.on_delta_log(m);
        for (std::uint32_t idx : act.release) metrics.on_externalized(idx, evq.now());
        if (act.need_resync) {
          metrics.counters.logger_resyncs += 1;
          RecoveryPullMsg req;
          req.role = 0;
          req.requester = NodeAddr::logger(unit_id).raw;
          req.flows = {act.resync_flow};
          net.send(NodeAddr::logger(unit_id), NodeAddr::unit(remap(unit_id)),
                   MsgType::RECOVERY_PULL, encode_recovery_pull(req));
        }
        break;
      }
      case MsgType::RECOVERY_PULL: {
        RecoveryPullMsg m = decode_recovery_pull(fr.payload);
        if (m.role == 0) {
          // Someone is recovering our paired unit's flows.
          RecoveryPullMsg resp;
          resp.role = 1;
          resp.requester = NodeAddr::logger(unit_id).raw;
          if (m.flows.empty()) {
            resp.snapshots = ol.recovery_snapshots();
          } else {
            for (const FlowKey& flow : m.flows)
              if (const TaggedState* ts = ol.mirror(flow)) {
                TaggedState copy = *ts;
                copy.lossy = true;
                resp.snapshots.push_back(std::move(copy));
              }
          }
          metrics.counters.recovery_snapshot_transfers += 1;
          net.send(NodeAddr::logger(unit_id), NodeAddr{m.requester}, MsgType::RECOVERY_PULL,
                   encode_recovery_pull(resp));
        } else {
          // Snapshot answers to our own resync requests.
          for (const TaggedState& ts : m.snapshots) {
            OutputLogger::Action act = ol.on_resync_response(ts);
            for (std::uint32_t idx : act.release) metrics.on_externalized(idx, evq.now());
          }
        }
        break;
      }
      default:
        break;
    }
  }

  void on_recovery_snapshots(UnitNode& U, NodeAddr src, const RecoveryPullMsg& m) {
    for (const TaggedState& ts : m.snapshots) {
      U.store.adopt_snapshot(ts);
      U.store.touch(ts.flow, evq.now());
      U.nf->on_state_adopted(ts);
      auto fit = U.flows.find(ts.flow);
      if (fit != U.flows.end() && (fit->second.pulling || fit->second.stalled) &&
          !fit->second.ready) {
        fit->second.pulling = false;
        fit->second.stalled = false;
        fit->second.ready = true;
        drain_held(U, ts.flow);
      }
      serve_parked(U, ts.flow);
    }
    if (U.recovering && src.kind() == NodeKind::Logger && src.id() == U.recover_from) {
      U.recovering = false;
      Us t_fail = fail_time.count(U.recover_from) ? fail_time[U.recover_from] : evq.now();
      std::uint64_t rt = evq.now() - t_fail;
      metrics.counters.recovery_time_us_last = rt;
      metrics.counters.recovery_time_us_max =
          std::max(metrics.counters.recovery_time_us_max, rt);
      // Classify everything that queued up while the snapshots were in flight.
      for (auto& [flow, fr] : U.flows) {
        if (!fr.pending_classify) continue;
        fr.pending_classify = false;
        if (fr.held.empty()) continue;
        PacketRecord first = fr.held.front();
        init_flowlet(U, fr, first);
        if (fr.ready) drain_held(U, flow);
      }
    }
  }

  // ---------- external store ----------

  void on_store_frame(NodeAddr src, const Frame& fr) {
    (void)src;
    switch (fr.type) {
      case MsgType::STATE_PUSH: {
        TaggedState ts = decode_state_push(fr.payload);
        auto it = store_node.data.find(ts.flow);
        if (it == store_node.data.end() || ts.clock_tag > it->second.clock_tag)
          store_node.data[ts.flow] = ts;
        serve_store_parked(ts.flow);
        break;
      }
      case MsgType::STATE_PULL_REQ: {
        StatePullReq req = decode_state_pull_req(fr.payload);
        auto it = store_node.data.find(req.flow);
        if (it != store_node.data.end() &&
            accepts_clock(it->second.clock_tag, it->second.lossy, req.want_clock)) {
          net.send(NodeAddr::store(), NodeAddr{req.requester}, MsgType::STATE_PULL_RESP,
                   encode_state_pull_resp(it->second));
          break;
        }
        // Miss or stale copy: fetch from the unit that last ran the flow.
        store_node.parked[req.flow].push_back(req);
        if (req.prev_hint != kNoUnit && unit_alive(remap(req.prev_hint))) {
          metrics.counters.external_store_fetches += 1;
          StatePullReq fetch;
          fetch.flow = req.flow;
          fetch.want_clock = req.want_clock;
          fetch.requester = NodeAddr::store().raw;
          fetch.prev_hint = req.prev_hint;
          net.send(NodeAddr::store(), NodeAddr::unit(remap(req.prev_hint)),
                   MsgType::STATE_PULL_REQ, encode_state_pull_req(fetch));
        }
        break;
      }
      case MsgType::STATE_PULL_RESP: {
        TaggedState ts = decode_state_pull_resp(fr.payload);
        auto it = store_node.data.find(ts.flow);
        if (it == store_node.data.end() || ts.clock_tag > it->second.clock_tag)
          store_node.data[ts.flow] = ts;
        serve_store_parked(ts.flow);
        break;
      }
      default:
        break;
    }
  }

  void serve_store_parked(const FlowKey& flow) {
    auto pit = store_node.parked.find(flow);
    if (pit == store_node.parked.end()) return;
    auto dit = store_node.data.find(flow);
    if (dit == store_node.data.end()) return;
    auto& reqs = pit->second;
    for (auto rit = reqs.begin(); rit != reqs.end();) {
      if (accepts_clock(dit->second.clock_tag, dit->second.lossy, rit->want_clock)) {
        net.send(NodeAddr::store(), NodeAddr{rit->requester}, MsgType::STATE_PULL_RESP,
                 encode_state_pull_resp(dit->second));
        rit = reqs.erase(rit);
      } else {
        ++rit;
      }
    }
    if (reqs.empty()) store_node.parked.erase(pit);
  }

  // ---------- failures ----------

  void inject_failure(const FailureInjection& inj) {
    evq.schedule(inj.at_us, [this, inj]() {
      if (inj.logger)
        fail_logger(inj.unit);
      else
        fail_unit(inj.unit);
    });
  }

  void fail_unit(std::uint32_t uid) {
    auto it = units.find(uid);
    if (it == units.end() || !it->second->alive) return;
    UnitNode& U = *it->second;
    if (U.recovering)
      throw std::runtime_error("unrecoverable: unit failed while recovering");
    U.alive = false;
    U.failed = true;
    fail_time[uid] = evq.now();
    metrics.counters.recovery_events += 1;
    metrics.on_unit_count_change(evq.now(), -1);

    for (auto& [flow, fr] : U.flows) {
      for (const PacketRecord& pkt : fr.held)
        metrics.on_lost(pkt.trace_idx, "unit-failed");
      fr.held.clear();
      fr.ready = false;
    }
    U.parked.clear();

    ControllerNode& C = *controllers[0];
    // Return the dead unit's lease first so the replacement grant cannot be
    // packed onto the failed unit's spare fraction.
    auto lit = C.lease_by_unit.find(uid);
    if (lit != C.lease_by_unit.end()) {
      rm.release_capacity(C.id, lit->second);
      C.lease_by_unit.erase(lit);
    }
    C.units.erase(uid);
    std::uint32_t repl = grant_capacity(C, cfg.bw_max_bps);
    for (auto& [key, f] : C.flows) {
      if (f.cur_unit == uid) {
        close_open_flowlet(C, key, f, CloseReason::Failover);
        f.prev_unit = repl;
      } else if (f.prev_unit == uid) {
        f.prev_unit = repl;
      }
      f.holders.erase(uid);
      if (xc.mode != AllocMode::Flowlet && f.pinned_unit == uid) {
        f.prev_unit = repl;
        f.pinned_unit = repl;
        f.move_to = 0;
        C.units[repl].live += 1;
        C.units[repl].committed += f.est_bps;
      }
    }
    remap_failed[uid] = repl;

    auto rit = units.find(repl);
    if (xc.fault_tolerant && loggers.count(uid) && loggers[uid].alive &&
        rit != units.end()) {
      rit->second->recovering = true;
      rit->second->recover_from = uid;
      RecoveryPullMsg req;
      req.role = 0;
      req.requester = NodeAddr::unit(repl).raw;
      net.send(NodeAddr::controller(C.id), NodeAddr::logger(uid), MsgType::RECOVERY_PULL,
               encode_recovery_pull(req));
    }
  }

  void fail_logger(std::uint32_t uid) {
    auto it = loggers.find(uid);
    if (it == loggers.end() || !it->second.alive) return;
    // Packets parked for a resync inside the dying logger never externalize.
    for (std::uint32_t idx : it->second.ol->held_indices())
      metrics.on_lost(idx, "logger-failed");
    metrics.counters.recovery_events += 1;
    it->second.ol = std::make_unique<OutputLogger>(uid);
    // The fresh mirror self-heals: the first delta of each flow arrives with
    // an unknown clock, triggering a per-flow resync against the unit.
  }

  // ---------- run ----------

  void run() {
    for (const PacketRecord& pkt : trace) {
      evq.schedule(pkt.arrival_ts, [this, pkt]() { on_arrival(pkt); });
    }
    for (const FailureInjection& inj : xc.failures) inject_failure(inj);
    for (const auto& C : controllers) {
      std::uint32_t cid = C->id;
      evq.schedule(cfg.epoch_us, [this, cid]() {
        controller_epoch(*controllers[cid - 1]);
        schedule_controller_timers(cid);
      });
      if (xc.mode == AllocMode::SmartFlow) {
        evq.schedule(xc.smart_interval_us, [this, cid]() {
          smart_rebalance(*controllers[cid - 1]);
          schedule_smart_timer(cid);
        });
      }
    }
    std::uint64_t ran = evq.run(500'000'000ull);
    if (!evq.empty()) throw std::runtime_error("event budget exhausted");
    (void)ran;

    // Flush any tail load buckets and administratively close what is open.
    for (auto& [id, u] : units)
      if (u->alive) flush_load_bucket(*u);
    for (const auto& C : controllers) {
      std::vector<FlowKey> open;
      for (auto& [key, f] : C->flows)
        if (f.cur_unit != 0) open.push_back(key);
      for (const FlowKey& key : open)
        close_open_flowlet(*C, key, C->flows[key], CloseReason::EndOfRun);
    }
    held_at_end = 0;
    for (const auto& [id, u] : units)
      for (const auto& [flow, fr] : u->flows) held_at_end += fr.held.size();
    end_time = evq.now();
  }

  std::map<FlowKey, std::map<std::string, Bytes>> final_states() const {
    std::map<FlowKey, std::pair<std::uint64_t, std::map<std::string, Bytes>>> best;
    auto offer = [&best](const FlowKey& flow, std::uint64_t tag,
                         const std::map<std::string, Bytes>& entries) {
      auto it = best.find(flow);
      if (it == best.end() || tag > it->second.first) best[flow] = {tag, entries};
    };
    for (const auto& [id, u] : units) {
      // A crashed unit's unexternalized effects are lost; a drained unit
      // externalized everything, so its store still reads true.
      if (u->failed) continue;
      for (const FlowKey& flow : u->store.primary_flows()) {
        TaggedState ts = u->store.snapshot(flow, id);
        offer(flow, ts.clock_tag, ts.entries);
      }
    }
    // The paired logger's mirror is the durable record of everything
    // released; it covers flows whose last home unit crashed.
    for (const auto& [id, ln] : loggers) {
      if (!ln.alive) continue;
      for (const auto& [flow, ts] : ln.ol->mirror_states())
        offer(flow, ts.clock_tag, ts.entries);
    }
    for (const auto& [flow, ts] : store_node.data) offer(flow, ts.clock_tag, ts.entries);
    std::map<FlowKey, std::map<std::string, Bytes>> out;
    for (auto& [flow, pair] : best)
      if (!pair.second.empty()) out[flow] = pair.second;
    return out;
  }
};

Cluster::Cluster(const ExperimentConfig& xc, std::vector<PacketRecord> trace,
                 MetricsCollector& metrics)
    : impl_(std::make_unique<Impl>(xc, std::move(trace), metrics)) {}

Cluster::~Cluster() = default;

void Cluster::set_placement_override(PlacementFn fn) {
  impl_->placement = std::move(fn);
}

void Cluster::set_drop_fn(SimNet::DropFn fn) { impl_->net.set_drop_fn(std::move(fn)); }

void Cluster::run() { impl_->run(); }

std::map<FlowKey, std::map<std::string, Bytes>> Cluster::final_flow_states() const {
  return impl_->final_states();
}

std::vector<std::uint32_t> Cluster::active_unit_ids() const {
  return impl_->active_unit_ids_sorted();
}

const std::map<MsgType, SimNet::TypeStats>& Cluster::wire_stats() const {
  return impl_->net.sent_stats();
}

std::uint64_t Cluster::peak_units() const { return impl_->peak_units; }

Us Cluster::end_time() const { return impl_->end_time; }

const ResourceManager& Cluster::resource_manager() const { return impl_->rm; }

std::uint64_t Cluster::held_packets_at_end() const { return impl_->held_at_end; }

// ---------- sequential oracle ----------

SequentialResult run_sequential(const std::vector<PacketRecord>& trace,
                                const std::string& nf_name, const NfConfig& nf_cfg,
                                const std::set<std::uint32_t>& skip) {
  StateStore store;
  auto nf = make_nf(nf_name, nf_cfg);
  std::map<FlowKey, std::uint64_t> clocks;
  SequentialResult out;

  struct Api final : StateApi {
    StateStore& s;
    const FlowKey* owner = nullptr;
    std::uint64_t clock = 0;
    explicit Api(StateStore& st) : s(st) {}
    std::optional<Bytes> get(const std::string& key) override { return s.get(key); }
    void put(const std::string& key, Bytes value) override {
      s.put(*owner, key, std::move(value), clock);
    }
  } api(store);

  for (const PacketRecord& p : trace) {
    if (skip.count(p.trace_idx)) continue;
    std::uint64_t clock = ++clocks[p.key];
    if (!store.has_primary(p.key)) store.admit_fresh(p.key);
    api.owner = &p.key;
    api.clock = clock;
    PacketContext ctx{p, p.arrival_ts, api};
    Verdict v = nf->process(ctx);
    store.mark_applied(p.key, clock);
    store.take_deltas();
    out.verdicts.emplace_back(p.trace_idx, v.text);
  }
  for (const FlowKey& flow : store.primary_flows()) {
    TaggedState ts = store.snapshot(flow, 0);
    if (!ts.entries.empty()) out.final_states[flow] = ts.entries;
  }
  return out;
}

}  // namespace snf
