/*******************************************************************************
 * Copyright 2026 The tierplan Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *******************************************************************************/
#include <gtest/gtest.h>

#include <limits>

#include "test_support.hpp"
#include "tierplan/cache_insertion.hpp"
#include "tierplan/machine_sim.hpp"
#include "tierplan/trace.hpp"

namespace tierplan {
namespace {

using namespace testing;

// Transfers of `bytes` take exactly `d` us on either link.
MachineModel link(Bytes bytes, Micros d) {
  MachineModel m;
  m.transfer_fixed_latency_us = 0;
  m.r2d_bandwidth_bytes_per_us = static_cast<double>(bytes) / static_cast<double>(d);
  m.d2r_bandwidth_bytes_per_us = m.r2d_bandwidth_bytes_per_us;
  return m;
}

SimReport run(const GraphProgram& g, const MachineModel& m = {}) { return simulate(g, topo_order(g), m); }

TEST(Simulate, SerialChain) {
  GraphProgram g;
  g.tensors = {tensor("a", kMiB)};
  g.ops = {compute(0, 100, {}, {"a"}), compute(1, 100, {"a"}, {})};
  auto r = run(g);
  EXPECT_EQ(r.makespan_us, 200);
  EXPECT_EQ(r.exposed_comm_us, 0);
  EXPECT_EQ(r.peak_device_bytes, kMiB);
  EXPECT_FALSE(r.oom);
}

// Three ops, each needing its own remote weight loaded by a Prefetch.
GraphProgram three_loads(bool on_demand) {
  GraphProgram g;
  for (int i = 0; i < 3; ++i) {
    const auto w = "w" + std::to_string(i);
    g.tensors.push_back(tensor(w, kMiB, TensorKind::weight, Tier::remote));
    g.ops.push_back(compute(i, 500, {w}, {}));
    g.ops.push_back(cache(10 + i, OpKind::prefetch, w));
    g.control_edges.emplace_back(10 + i, i);
    if (on_demand && i > 0) g.control_edges.emplace_back(i - 1, 10 + i);
  }
  return g;
}

TEST(Simulate, OnDemandTransfersSerialize) {
  const Micros d = 300, cost = 500;
  auto g = three_loads(true);
  auto r = simulate(g, make_schedule(g, {10, 0, 11, 1, 12, 2}), link(kMiB, d));
  EXPECT_EQ(r.makespan_us, 3 * (d + cost));
  EXPECT_EQ(r.exposed_comm_us, 3 * d);
  EXPECT_EQ(r.overlapped_comm_us, 0);
}

TEST(Simulate, PrefetchAheadHidesAllButFirst) {
  const Micros d = 300, cost = 500;
  auto g = three_loads(false);
  auto r = simulate(g, make_schedule(g, {10, 11, 12, 0, 1, 2}), link(kMiB, d));
  EXPECT_EQ(r.makespan_us, d + 3 * cost);
  EXPECT_EQ(r.exposed_comm_us, d);
  EXPECT_EQ(r.overlapped_comm_us, 2 * d);
  EXPECT_EQ(r.dma_busy_us, 3 * d);
}

TEST(Simulate, DetachFreesAndPrefetchReallocates) {
  GraphProgram g;
  g.tensors = {tensor("a", kMiB), tensor("b", kMiB)};
  g.ops = {compute(0, 100, {}, {"a"}), compute(1, 1000, {}, {"b"}), compute(2, 100, {"a", "b"}, {}),
           cache(3, OpKind::store, "a"), cache(4, OpKind::detach, "a"), cache(5, OpKind::prefetch, "a")};
  g.control_edges = {{0, 3}, {3, 4}, {4, 5}, {5, 2}, {4, 1}};
  auto m = link(kMiB, 200);
  auto r = simulate(g, make_schedule(g, {0, 3, 4, 5, 1, 2}), m);
  // a is off device while b is made, so peak is two tensors at the end.
  EXPECT_EQ(r.peak_device_bytes, 2 * kMiB);
  EXPECT_EQ(r.peak_remote_bytes, kMiB);
  // 0 ends at 100, store 100..300, detach at 300, prefetch 300..500 under op 1.
  EXPECT_EQ(r.makespan_us, 300 + 1000 + 100);
  EXPECT_EQ(r.exposed_comm_us, 200);  // op 1 waits on the Store through the Detach
  EXPECT_EQ(r.exposed_comm_us + r.overlapped_comm_us, r.dma_busy_us);
  EXPECT_EQ(r.memory.back().device_bytes, 0U);
}

TEST(Simulate, OomRecordAndHalt) {
  GraphProgram g;
  g.tensors = {tensor("a", 3 * kMiB), tensor("b", 2 * kMiB)};
  g.ops = {compute(0, 10, {}, {"a"}), compute(1, 10, {"a"}, {"b"})};
  MachineModel m;
  m.device_capacity_bytes = 4 * kMiB;
  auto r = run(g, m);
  ASSERT_TRUE(r.oom);
  EXPECT_EQ(r.oom->op_id, OpId{1});
  EXPECT_EQ(r.oom->tensor, "b");
  EXPECT_EQ(r.oom->requested_bytes, 2 * kMiB);
  EXPECT_EQ(r.oom->free_bytes, kMiB);
  EXPECT_EQ(r.oom->largest_free_block, kMiB);
  EXPECT_EQ(r.oom->tier, Tier::device);
}

TEST(Simulate, FragmentationTriggersCompaction) {
  // Four 1 MiB tensors fill the device; freeing the 1st and 3rd leaves 2 MiB
  // free in two holes, so a 2 MiB request needs a compaction.
  GraphProgram g;
  g.tensors = {tensor("a", kMiB), tensor("b", kMiB), tensor("c", kMiB), tensor("d", kMiB),
               tensor("big", 2 * kMiB)};
  g.ops = {compute(0, 10, {}, {"a"}), compute(1, 10, {}, {"b"}), compute(2, 10, {}, {"c"}),
           compute(3, 10, {"a", "c"}, {"d"}), compute(4, 10, {"b", "d"}, {"big"}),
           compute(5, 10, {"big", "b", "d"}, {})};
  g.control_edges = {{0, 1}, {1, 2}};
  MachineModel m;
  m.device_capacity_bytes = 4 * kMiB;
  m.compaction_bandwidth_bytes_per_us = static_cast<double>(kMiB) / 50.0;  // 50 us per MiB
  auto r = run(g, m);
  // a and c die after op 3 but b and d stay live.
  ASSERT_FALSE(r.oom);
  EXPECT_EQ(r.defrag_events, 1);
  EXPECT_GT(r.compaction_bytes_moved, 0U);
  EXPECT_EQ(r.defrag_time_us,
            static_cast<Micros>(std::ceil(static_cast<double>(r.compaction_bytes_moved) / (kMiB / 50.0))));
  EXPECT_EQ(r.makespan_us, 60 + r.defrag_time_us);
}

TEST(Simulate, ResidencyHazardThrows) {
  GraphProgram g;
  g.tensors = {tensor("w", kMiB, TensorKind::weight, Tier::remote)};
  g.ops = {compute(0, 10, {"w"}, {})};
  EXPECT_THROW(run(g), std::logic_error);
}

TEST(Simulate, RejectsInvalidSchedule) {
  GraphProgram g;
  g.tensors = {tensor("a", kMiB)};
  g.ops = {compute(0, 1, {}, {"a"}), compute(1, 1, {"a"}, {})};
  EXPECT_THROW(simulate(g, make_schedule(g, {1, 0}), MachineModel{}), std::invalid_argument);
}

TEST(PeakNoOffload, DisjointLifetimesShareSpace) {
  GraphProgram one;
  one.tensors = {tensor("x", kGiB)};
  one.ops = {compute(0, 10, {}, {"x"}), compute(1, 10, {"x"}, {})};
  EXPECT_EQ(peak_memory_no_offload(one, topo_order(one), MachineModel{}), kGiB);

  GraphProgram two;
  two.tensors = {tensor("x", kGiB), tensor("y", kGiB)};
  two.ops = {compute(0, 10, {}, {"x"}), compute(1, 10, {"x"}, {}), compute(2, 10, {}, {"y"}),
             compute(3, 10, {"y"}, {})};
  two.control_edges = {{1, 2}};
  EXPECT_EQ(peak_memory_no_offload(two, topo_order(two), MachineModel{}), kGiB);
}

// ---------------------------------------------------------------------------
// Properties over random planned graphs.

struct Case {
  GraphProgram g;
  Schedule s;
};

Case random_case(std::mt19937_64& rng) {
  Case c;
  auto base = random_compute_dag(rng, 25, 3);
  if (rng() % 2) base.tensors[0].initial_tier = Tier::remote;
  auto s = topo_order(base);
  MachineModel fast;
  fast.r2d_bandwidth_bytes_per_us = fast.d2r_bandwidth_bytes_per_us = 100'000.0;
  CandidatePolicy pol;
  pol.all_windows = rng() % 2;
  auto plan = select_candidates(base, s, compute_lifetimes(base, s), fast, pol);
  c.g = insert_cache_ops(base, s, plan);
  c.s = topo_order(c.g);
  return c;
}

TEST(SimProperties, InvariantsOnRandomPlannedGraphs) {
  std::mt19937_64 rng(31);
  MachineModel m;
  m.r2d_bandwidth_bytes_per_us = m.d2r_bandwidth_bytes_per_us = 20'000.0;
  for (int trial = 0; trial < 120; ++trial) {
    auto c = random_case(rng);
    auto r = simulate(c.g, c.s, m);
    ASSERT_FALSE(r.oom);
    EXPECT_EQ(r.exposed_comm_us + r.overlapped_comm_us, r.dma_busy_us);
    EXPECT_GE(r.exposed_comm_us, 0);
    EXPECT_GE(r.overlapped_comm_us, 0);
    EXPECT_LE(r.peak_device_bytes, m.device_capacity_bytes);

    Micros compute_sum = 0, in_sum = 0, out_sum = 0;
    std::map<OpId, std::pair<Micros, Micros>> span;
    for (const auto& e : r.timeline) {
      if (!e.op_id) continue;
      span[*e.op_id] = {e.start_us, e.end_us};
      (e.stream == Stream::compute ? compute_sum : e.stream == Stream::dma_in ? in_sum : out_sum) +=
          e.end_us - e.start_us;
    }
    EXPECT_EQ(span.size(), c.g.ops.size());
    EXPECT_GE(r.makespan_us, std::max({compute_sum, in_sum, out_sum}));
    EXPECT_EQ(r.makespan_us == compute_sum, r.exposed_comm_us == 0 && r.defrag_time_us == 0);
    for (const auto& [a, b] : reference_edges(c.g)) EXPECT_LE(span[a].second, span[b].first);

    EXPECT_EQ(r, simulate(c.g, c.s, m));
    auto trace = emit_trace(r);
    EXPECT_TRUE(check_trace(trace).empty());
    std::size_t complete = 0;
    for (const auto& ev : trace["traceEvents"]) complete += ev["ph"] == "X";
    EXPECT_EQ(complete, r.timeline.size());
  }
}

TEST(SimProperties, NoOffloadBaselineHasNoStalls) {
  std::mt19937_64 rng(37);
  MachineModel m;
  m.device_capacity_bytes = kUnlimitedBytes;
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_case(rng);
    auto base = all_device_baseline(c.g);
    auto r = simulate(base, restrict_schedule(base, c.s), m);
    EXPECT_EQ(r.defrag_events, 0);
    EXPECT_EQ(r.exposed_comm_us, 0);
  }
}

// Occupancy implied by lifetimes matches the simulator while each op runs.
TEST(SimProperties, LifetimeOccupancyMatchesSimulator) {
  std::mt19937_64 rng(41);
  MachineModel m;
  m.device_capacity_bytes = kUnlimitedBytes;
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_compute_dag(rng, 30, 3);
    auto s = topo_order(g);
    auto prof = occupancy_profile(g, s, compute_lifetimes(g, s), m);
    auto r = simulate(g, s, m);
    std::map<OpId, Micros> start;
    for (const auto& e : r.timeline) start[*e.op_id] = e.start_us;
    for (std::size_t k = 0; k < s.order.size(); ++k) {
      const Micros t0 = start.at(s.order[k]);
      Bytes at = 0;
      for (const auto& smp : r.memory)
        if (smp.time_us <= t0) at = smp.device_bytes;
      EXPECT_EQ(at, prof[k]) << "position " << k;
    }
  }
}

// With free transfers the rewritten graph runs exactly as fast as the input.
TEST(SimProperties, FreeTransfersPreserveMakespan) {
  std::mt19937_64 rng(43);
  MachineModel m;
  m.device_capacity_bytes = kUnlimitedBytes;
  m.transfer_fixed_latency_us = 0;
  m.r2d_bandwidth_bytes_per_us = m.d2r_bandwidth_bytes_per_us = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 60; ++trial) {
    auto base = random_compute_dag(rng, 25, 3);
    auto s = topo_order(base);
    MachineModel sel;
    sel.r2d_bandwidth_bytes_per_us = sel.d2r_bandwidth_bytes_per_us = 100'000.0;
    auto plan = select_candidates(base, s, compute_lifetimes(base, s), sel, CandidatePolicy{});
    auto out = insert_cache_ops(base, s, plan);
    EXPECT_EQ(simulate(out, topo_order(out), m).makespan_us, simulate(base, s, m).makespan_us);
  }
}

TEST(Trace, EmptyAndSmall) {
  auto empty = emit_trace(SimReport{});
  EXPECT_TRUE(check_trace(empty).empty());
  EXPECT_TRUE(empty["traceEvents"].empty());

  GraphProgram g;
  g.tensors = {tensor("a", kMiB), tensor("b", kMiB)};
  g.ops = {compute(0, 5, {}, {"a"}), compute(1, 5, {"a"}, {"b"}), compute(2, 5, {"b"}, {})};
  auto doc = emit_trace(run(g));
  std::size_t x = 0, counters = 0;
  for (const auto& ev : doc["traceEvents"]) {
    x += ev["ph"] == "X";
    counters += ev["ph"] == "C";
  }
  EXPECT_EQ(x, 3U);
  EXPECT_GE(counters, 2U);
  EXPECT_TRUE(check_trace(doc).empty());
}

}  // namespace
}  // namespace tierplan
