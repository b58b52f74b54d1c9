#pragma once
// Global resource manager: leases fractional unit capacity to controllers,
// first-fit over ascending unit ids, launching units when the pool runs out
// and retiring ones whose leases drop to zero.

#include <cstdint>
#include <map>
#include <vector>

#include "snf/core.hpp"

namespace snf {

struct LeaseAllocation {
  std::uint32_t unit = 0;
  double fraction = 0;  // of the unit's capacity, in (0, 1]
  bool operator==(const LeaseAllocation&) const = default;
};

struct CapacityLease {
  std::uint32_t controller = 0;
  std::vector<LeaseAllocation> allocations;
  double granted_bps = 0;
  double shortfall_bps = 0;  // > 0 when the pool cap was hit
};

class ResourceManager {
 public:
  // max_units = 0 means the pool can grow without bound.
  explicit ResourceManager(double unit_capacity_bps, std::uint32_t max_units = 0)
      : capacity_bps_(unit_capacity_bps), max_units_(max_units) {}

  // Grants `demand_bps` as unit fractions, filling partially leased units
  // first in ascending id order, then launching fresh units as needed.
  CapacityLease request_capacity(std::uint32_t controller, double demand_bps);

  // Returns part or all of a controller's lease. False when the controller
  // does not hold what it tried to return. Units whose total lease reaches
  // zero are retired from the pool immediately.
  bool release_capacity(std::uint32_t controller, const std::vector<LeaseAllocation>& portion);

  // Sum of all controllers' fractions on the unit (invariant: <= 1 + eps).
  double leased_fraction(std::uint32_t unit) const;
  double controller_granted_bps(std::uint32_t controller) const;
  std::vector<std::uint32_t> active_units() const;
  std::uint64_t total_launched() const { return launched_; }
  std::uint64_t total_retired() const { return retired_; }
  double unit_capacity_bps() const { return capacity_bps_; }

 private:
  static constexpr double kEps = 1e-9;
  double capacity_bps_;
  std::uint32_t max_units_;
  std::uint32_t next_unit_id_ = 1;
  std::uint64_t launched_ = 0;
  std::uint64_t retired_ = 0;
  // unit -> controller -> fraction
  std::map<std::uint32_t, std::map<std::uint32_t, double>> leases_;
};

}  // namespace snf
