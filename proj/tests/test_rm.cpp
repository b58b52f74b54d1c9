#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "snf/rm.hpp"

using namespace snf;

using Allocs = std::vector<LeaseAllocation>;

TEST_CASE("a 2.5x demand spans three units") {
  ResourceManager rm(1e9);
  CapacityLease lease = rm.request_capacity(1, 2.5e9);

  CHECK(lease.controller == 1);
  CHECK(lease.allocations == Allocs{{1, 1.0}, {2, 1.0}, {3, 0.5}});
  CHECK(lease.granted_bps == doctest::Approx(2.5e9));
  CHECK(lease.shortfall_bps == 0);
  CHECK(rm.total_launched() == 3);
  CHECK(rm.active_units() == std::vector<std::uint32_t>{1, 2, 3});
  CHECK(rm.leased_fraction(3) == doctest::Approx(0.5));
  CHECK(rm.controller_granted_bps(1) == doctest::Approx(2.5e9));
}

TEST_CASE("zero demand grants nothing and launches nothing") {
  ResourceManager rm(1e9);
  CapacityLease lease = rm.request_capacity(1, 0);
  CHECK(lease.allocations.empty());
  CHECK(lease.granted_bps == 0);
  CHECK(rm.total_launched() == 0);
  CHECK(rm.active_units().empty());
}

TEST_CASE("small demands share one unit") {
  ResourceManager rm(1e9);
  CapacityLease l1 = rm.request_capacity(1, 0.5e9);
  CapacityLease l2 = rm.request_capacity(2, 0.5e9);
  CHECK(l1.allocations == Allocs{{1, 0.5}});
  CHECK(l2.allocations == Allocs{{1, 0.5}});
  CHECK(rm.leased_fraction(1) == doctest::Approx(1.0));
  CHECK(rm.total_launched() == 1);
  CHECK(rm.active_units() == std::vector<std::uint32_t>{1});
}

TEST_CASE("holes fill in ascending unit order before launching") {
  ResourceManager rm(1e9);
  rm.request_capacity(1, 2.5e9);                       // u1 full, u2 full, u3 half
  CHECK(rm.release_capacity(1, {{1, 0.4}}));           // open a hole on u1
  CapacityLease l = rm.request_capacity(2, 1e9);
  CHECK(l.allocations == Allocs{{1, 0.4}, {3, 0.5}, {4, 0.1}});
  CHECK(l.granted_bps == doctest::Approx(1e9));
  CHECK(rm.leased_fraction(1) == doctest::Approx(1.0));
  CHECK(rm.leased_fraction(3) == doctest::Approx(1.0));
  CHECK(rm.leased_fraction(4) == doctest::Approx(0.1));
}

TEST_CASE("releases are validated before any mutation") {
  ResourceManager rm(1e9);
  rm.request_capacity(1, 1.5e9);  // u1 full, u2 half

  // The wrong controller cannot return someone else's lease.
  CHECK_FALSE(rm.release_capacity(2, {{1, 0.5}}));
  // More than is held is rejected.
  CHECK_FALSE(rm.release_capacity(1, {{2, 0.6}}));
  // Unknown units are rejected, even mixed with valid entries; and because the
  // batch failed validation, the valid entry must remain leased.
  CHECK_FALSE(rm.release_capacity(1, {{1, 0.5}, {9, 0.1}}));
  CHECK(rm.leased_fraction(1) == doctest::Approx(1.0));
  CHECK(rm.leased_fraction(2) == doctest::Approx(0.5));
  CHECK(rm.controller_granted_bps(1) == doctest::Approx(1.5e9));

  // Partial returns are fine.
  CHECK(rm.release_capacity(1, {{2, 0.25}}));
  CHECK(rm.leased_fraction(2) == doctest::Approx(0.25));
}

TEST_CASE("units retire the moment their lease empties") {
  ResourceManager rm(1e9);
  rm.request_capacity(1, 1e9);
  CHECK(rm.active_units() == std::vector<std::uint32_t>{1});
  CHECK(rm.release_capacity(1, {{1, 1.0}}));
  CHECK(rm.active_units().empty());
  CHECK(rm.total_retired() == 1);

  // Retired ids are not reused.
  CapacityLease l = rm.request_capacity(1, 1e9);
  CHECK(l.allocations == Allocs{{2, 1.0}});
}

TEST_CASE("a capped pool reports its shortfall") {
  ResourceManager rm(1e9, 2);
  CapacityLease l = rm.request_capacity(1, 2.5e9);
  CHECK(l.allocations == Allocs{{1, 1.0}, {2, 1.0}});
  CHECK(l.granted_bps == doctest::Approx(2e9));
  CHECK(l.shortfall_bps == doctest::Approx(0.5e9));
  CHECK(rm.total_launched() == 2);

  // Freeing capacity clears the bottleneck for the next request.
  CHECK(rm.release_capacity(1, {{2, 1.0}}));
  CapacityLease l2 = rm.request_capacity(2, 0.5e9);
  CHECK(l2.shortfall_bps == 0);
  CHECK(l2.granted_bps == doctest::Approx(0.5e9));
}

TEST_CASE("random traffic never oversubscribes a unit") {
  std::mt19937_64 rng(2026);
  ResourceManager rm(1e9, 6);  // a tight pool forces shortfall paths
  // controller -> live allocations we may legally return
  std::map<std::uint32_t, Allocs> book;

  for (int step = 0; step < 4000; ++step) {
    std::uint32_t ctl = 1 + rng() % 5;
    if (rng() % 2 == 0) {
      double demand = static_cast<double>(1 + rng() % 40) * 0.05e9;
      CapacityLease l = rm.request_capacity(ctl, demand);
      CHECK(l.granted_bps + l.shortfall_bps == doctest::Approx(demand));
      for (const auto& a : l.allocations) {
        CHECK(a.fraction > 0);
        CHECK(a.fraction <= 1.0 + 1e-9);
        book[ctl].push_back(a);
      }
    } else if (!book[ctl].empty()) {
      std::size_t i = rng() % book[ctl].size();
      LeaseAllocation a = book[ctl][i];
      if (rng() % 3 == 0 && a.fraction > 0.1) {
        // Give back half, keep the rest on the books.
        LeaseAllocation half{a.unit, a.fraction / 2};
        CHECK(rm.release_capacity(ctl, {half}));
        book[ctl][i].fraction -= half.fraction;
      } else {
        CHECK(rm.release_capacity(ctl, {a}));
        book[ctl].erase(book[ctl].begin() + i);
      }
    }

    for (std::uint32_t u : rm.active_units()) {
      CHECK(rm.leased_fraction(u) <= 1.0 + 1e-6);
      CHECK(rm.leased_fraction(u) > 0);
    }
    CHECK(rm.active_units().size() <= 6);
  }

  // The ledger agrees with per-controller sums.
  double total_by_unit = 0;
  for (std::uint32_t u : rm.active_units()) total_by_unit += rm.leased_fraction(u);
  double total_by_ctl = 0;
  for (std::uint32_t c = 1; c <= 5; ++c) total_by_ctl += rm.controller_granted_bps(c);
  CHECK(total_by_ctl == doctest::Approx(total_by_unit * 1e9));
}
