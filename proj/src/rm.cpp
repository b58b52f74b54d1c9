#include "snf/rm.hpp"

#include <algorithm>

namespace snf {

CapacityLease ResourceManager::request_capacity(std::uint32_t controller,
                                                double demand_bps) {
  CapacityLease lease;
  lease.controller = controller;
  double remaining = demand_bps;

  auto take = [&](std::uint32_t unit, double free_frac) {
    double want_frac = remaining / capacity_bps_;
    double frac = std::min(free_frac, want_frac);
    if (frac <= kEps) return;
    leases_[unit][controller] += frac;
    lease.allocations.push_back({unit, frac});
    lease.granted_bps += frac * capacity_bps_;
    remaining -= frac * capacity_bps_;
  };

  // Fill holes in already-launched units first, ascending id.
  for (auto& [unit, by_ctl] : leases_) {
    if (remaining <= kEps) break;
    double used = 0;
    for (const auto& [ctl, frac] : by_ctl) used += frac;
    if (used < 1.0 - kEps) take(unit, 1.0 - used);
  }
  // Then launch.
  while (remaining > kEps) {
    if (max_units_ != 0 && leases_.size() >= max_units_) {
      lease.shortfall_bps = remaining;
      break;
    }
    std::uint32_t unit = next_unit_id_++;
    leases_[unit];  // materialize
    ++launched_;
    take(unit, 1.0);
  }
  return lease;
}

bool ResourceManager::release_capacity(std::uint32_t controller,
                                       const std::vector<LeaseAllocation>& portion) {
  // Validate before mutating so a bad release leaves the book unchanged.
  for (const LeaseAllocation& a : portion) {
    auto uit = leases_.find(a.unit);
    if (uit == leases_.end()) return false;
    auto cit = uit->second.find(controller);
    if (cit == uit->second.end() || cit->second + kEps < a.fraction) return false;
  }
  for (const LeaseAllocation& a : portion) {
    auto& by_ctl = leases_[a.unit];
    double& held = by_ctl[controller];
    held -= a.fraction;
    if (held <= kEps) by_ctl.erase(controller);
    if (by_ctl.empty()) {
      leases_.erase(a.unit);
      ++retired_;
    }
  }
  return true;
}

double ResourceManager::leased_fraction(std::uint32_t unit) const {
  auto it = leases_.find(unit);
  if (it == leases_.end()) return 0;
  double sum = 0;
  for (const auto& [ctl, frac] : it->second) sum += frac;
  return sum;
}

double ResourceManager::controller_granted_bps(std::uint32_t controller) const {
  double sum = 0;
  for (const auto& [unit, by_ctl] : leases_) {
    auto it = by_ctl.find(controller);
    if (it != by_ctl.end()) sum += it->second * capacity_bps_;
  }
  return sum;
}

std::vector<std::uint32_t> ResourceManager::active_units() const {
  std::vector<std::uint32_t> out;
  out.reserve(leases_.size());
  for (const auto& [unit, by_ctl] : leases_) out.push_back(unit);
  return out;
}

}  // namespace snf
