#pragma once
// The packaged network functions. Each one keeps every bit of per-flow state
// behind the runtime's put/get API so flowlet migration is transparent to it.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "snf/core.hpp"
#include "snf/runtime.hpp"

namespace snf {

// Narrow state interface handed to an NF while it holds one packet.
class StateApi {
 public:
  virtual ~StateApi() = default;
  virtual std::optional<Bytes> get(const std::string& key) = 0;
  virtual void put(const std::string& key, Bytes value) = 0;
};

struct PacketContext {
  const PacketRecord& pkt;
  Us now;
  StateApi& state;
};

struct Verdict {
  bool forwarded = true;
  std::string text;  // deterministic, comparable across execution paths
  bool operator==(const Verdict&) const = default;
};

class NetworkFunction {
 public:
  virtual ~NetworkFunction() = default;
  virtual std::string name() const = 0;
  virtual Verdict process(PacketContext& ctx) = 0;
  // Called when flow state transfers into this unit (pull response, adopted
  // replica, recovery), letting an NF rebuild unit-local caches (e.g. the NAT
  // port allocator's used set).
  virtual void on_state_adopted(const TaggedState&) {}
  // Called before a flow's state is dropped by idle retirement.
  virtual void on_flow_retire(const FlowKey&, const TaggedState& final_state) {
    (void)final_state;
  }
};

struct NfConfig {
  // NAT
  std::uint32_t nat_external_ip = 0;  // set by defaults()
  std::uint16_t nat_port_lo = 6000;
  std::uint16_t nat_port_hi = 6999;
  // load balancer
  std::vector<std::string> lb_backends;
  // signature matcher
  std::vector<std::string> ids_patterns;
  // token-bucket policer
  double policer_rate_bytes_per_sec = 1.25e6;
  double policer_bucket_bytes = 15000;
  // UDP whitelister: "inside" network allowed to open pinholes
  std::uint32_t wl_inside_ip = 0;
  int wl_inside_bits = 8;

  static NfConfig defaults();
  // Sectioned key=value file; unknown keys are an error.
  static NfConfig from_file(const std::string& path);
};

// Names accepted by make_nf: nat, lb, ids, udpwl, qos.
std::vector<std::string> nf_names();
std::unique_ptr<NetworkFunction> make_nf(const std::string& name, const NfConfig& cfg);

}  // namespace snf
