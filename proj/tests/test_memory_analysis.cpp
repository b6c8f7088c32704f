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

#include <cmath>

#include "test_support.hpp"
#include "tierplan/memory_analysis.hpp"

namespace tierplan {
namespace {

using namespace testing;

// Ten unit-cost ops; tensor "t" is made at position 2 and read at 3 and 9,
// weight "w" is read by every op.
GraphProgram ten_ops() {
  GraphProgram g;
  g.tensors = {tensor("w", 4 * kMiB, TensorKind::weight), tensor("t", 4 * kMiB)};
  for (int i = 0; i < 10; ++i) {
    std::vector<TensorId> in{"w"}, out;
    if (i == 3 || i == 9) in.push_back("t");
    if (i == 2) out.push_back("t");
    g.ops.push_back(compute(i, 1000, in, out));
  }
  return g;
}

TEST(Lifetimes, ProducedThenReadTwice) {
  auto g = ten_ops();
  auto lt = compute_lifetimes(g, topo_order(g));
  const auto& t = lt.at("t");
  EXPECT_EQ(t.def_pos, 2);
  EXPECT_EQ(t.last_use_pos, 9);
  EXPECT_EQ(t.idle_windows, (std::vector<std::pair<Pos, Pos>>{{4, 8}}));
  EXPECT_TRUE(t.produced);
}

TEST(Lifetimes, WeightReadEverywhereHasNoGap) {
  auto g = ten_ops();
  auto lt = compute_lifetimes(g, topo_order(g));
  EXPECT_EQ(lt.at("w").def_pos, 0);
  EXPECT_TRUE(lt.at("w").idle_windows.empty());
}

TEST(Lifetimes, RejectsForeignSchedule) {
  auto g = ten_ops();
  Schedule s;
  s.order = {0, 1, 2};
  EXPECT_THROW(compute_lifetimes(g, s), std::invalid_argument);
}

TEST(Lifetimes, InvariantsOnRandomGraphs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto g = random_compute_dag(rng, 25, 3);
    auto s = topo_order(g);
    for (const auto& [id, lt] : compute_lifetimes(g, s)) {
      EXPECT_LE(lt.def_pos, lt.last_use_pos);
      Pos prev = lt.def_pos - 1;
      for (auto [a, b] : lt.idle_windows) {
        EXPECT_LE(a, b);
        EXPECT_GT(a, prev);
        EXPECT_GE(a, lt.def_pos);
        EXPECT_LE(b, lt.last_use_pos);
        prev = b;
        // No access inside a window.
        for (Pos p : lt.access_positions) EXPECT_TRUE(p < a || p > b);
      }
    }
  }
}

TEST(TransferEstimate, ReferenceValues) {
  MachineModel m;
  m.transfer_fixed_latency_us = 0;
  m.r2d_bandwidth_bytes_per_us = gbps_to_bytes_per_us(33.6);
  // 1 GiB / 33,600 bytes per us.
  EXPECT_EQ(estimate_transfer_us(kGiB, m, Channel::r2d), std::llround(1073741824.0 / 33600.0));
  EXPECT_EQ(estimate_transfer_us(kGiB, m, Channel::r2d), 31957);
  EXPECT_EQ(estimate_transfer_us(0, m, Channel::r2d), 0);

  m.transfer_fixed_latency_us = 50;
  m.d2r_bandwidth_bytes_per_us = gbps_to_bytes_per_us(40.0);
  EXPECT_EQ(estimate_transfer_us(256 * kMiB, m, Channel::d2r), std::llround(50.0 + 268435456.0 / 40000.0));
  EXPECT_EQ(estimate_transfer_us(256 * kMiB, m, Channel::d2r), 6761);

  m.d2r_bandwidth_bytes_per_us = 0.0;
  EXPECT_THROW(estimate_transfer_us(kMiB, m, Channel::d2r), std::invalid_argument);
}

// One MiB moves in exactly 1,000 us each way, so a round trip is 2 ms.
MachineModel millisecond_machine() {
  MachineModel m;
  m.transfer_fixed_latency_us = 0;
  m.r2d_bandwidth_bytes_per_us = static_cast<double>(kMiB) / 1000.0;
  m.d2r_bandwidth_bytes_per_us = m.r2d_bandwidth_bytes_per_us;
  return m;
}

// "t" produced by op 0, read by op 2; op 1 in between costs `gap_us`.
GraphProgram gap_graph(Micros gap_us, TensorKind kind = TensorKind::activation, bool pinned = false) {
  GraphProgram g;
  g.tensors = {tensor("t", kMiB, kind, Tier::device, pinned)};
  g.ops = {compute(0, 100, {}, {"t"}), compute(1, gap_us, {}, {}), compute(2, 100, {"t"}, {})};
  return g;
}

OffloadPlan plan_for(const GraphProgram& g, const CandidatePolicy& p, const MachineModel& m) {
  auto s = topo_order(g);
  return select_candidates(g, s, compute_lifetimes(g, s), m, p);
}

TEST(SelectCandidates, RatioRule) {
  auto m = millisecond_machine();
  CandidatePolicy p;
  auto selected = plan_for(gap_graph(10'000), p, m);
  ASSERT_EQ(selected.entries.size(), 1U);
  EXPECT_EQ(selected.entries[0], (OffloadEntry{"t", 0, 2}));
  EXPECT_TRUE(plan_for(gap_graph(3'000), p, m).entries.empty());
  // Strictly greater: exactly k x round trip is not enough.
  EXPECT_TRUE(plan_for(gap_graph(4'000), p, m).entries.empty());
  EXPECT_EQ(plan_for(gap_graph(4'001), p, m).entries.size(), 1U);
}

TEST(SelectCandidates, FiltersPinnedKindAndSize) {
  auto m = millisecond_machine();
  CandidatePolicy p;
  EXPECT_TRUE(plan_for(gap_graph(50'000, TensorKind::activation, true), p, m).entries.empty());
  EXPECT_TRUE(plan_for(gap_graph(50'000, TensorKind::workspace), p, m).entries.empty());
  p.min_tensor_bytes = 2 * kMiB;
  EXPECT_TRUE(plan_for(gap_graph(50'000), p, m).entries.empty());
  p.min_tensor_bytes = 0;
  p.kinds_enabled = {TensorKind::kv_block};
  EXPECT_TRUE(plan_for(gap_graph(50'000), p, m).entries.empty());
}

TEST(SelectCandidates, LargestWindowOrAllWindows) {
  auto m = millisecond_machine();
  GraphProgram g;
  g.tensors = {tensor("t", kMiB)};
  g.ops = {compute(0, 1, {}, {"t"}), compute(1, 20'000, {}, {}), compute(2, 1, {"t"}, {}),
           compute(3, 30'000, {}, {}), compute(4, 1, {"t"}, {})};
  CandidatePolicy p;
  auto one = plan_for(g, p, m);
  ASSERT_EQ(one.entries.size(), 1U);
  EXPECT_EQ(one.entries[0], (OffloadEntry{"t", 2, 4}));
  p.all_windows = true;
  auto all = plan_for(g, p, m);
  ASSERT_EQ(all.entries.size(), 2U);
  EXPECT_EQ(all.entries[0], (OffloadEntry{"t", 0, 2}));
  EXPECT_EQ(all.entries[1], (OffloadEntry{"t", 2, 4}));
}

TEST(SelectCandidates, RemoteInputGetsMandatoryLoad) {
  auto m = millisecond_machine();
  GraphProgram g;
  g.tensors = {tensor("w", kMiB, TensorKind::weight, Tier::remote)};
  g.ops = {compute(0, 1, {}, {}), compute(1, 1, {"w"}, {})};
  auto plan = plan_for(g, CandidatePolicy{}, m);
  ASSERT_EQ(plan.entries.size(), 1U);
  EXPECT_EQ(plan.entries[0], (OffloadEntry{"w", -1, 1}));
}

TEST(SelectCandidates, MonotoneInRatioAndRespectsFilters) {
  std::mt19937_64 rng(5);
  MachineModel m;
  m.r2d_bandwidth_bytes_per_us = m.d2r_bandwidth_bytes_per_us = 20'000.0;
  for (int trial = 0; trial < 60; ++trial) {
    auto g = random_compute_dag(rng, 30, 2);
    for (std::size_t i = 0; i < g.tensors.size(); i += 4) g.tensors[i].pinned = true;
    auto s = topo_order(g);
    auto lt = compute_lifetimes(g, s);
    std::set<std::pair<TensorId, Pos>> prev;
    bool first = true;
    for (double k : {1.0, 1.5, 2.0, 3.0, 5.0, 10.0}) {
      CandidatePolicy p;
      p.min_gap_ratio = k;
      p.all_windows = true;
      auto plan = select_candidates(g, s, lt, m, p);
      std::set<std::pair<TensorId, Pos>> cur;
      for (const auto& e : plan.entries) {
        const auto* t = g.find_tensor(e.tensor_id);
        EXPECT_FALSE(t->pinned);
        EXPECT_TRUE(p.kinds_enabled.count(t->kind));
        EXPECT_LT(e.evict_after_pos, e.reload_before_pos);
        cur.insert({e.tensor_id, e.evict_after_pos});
      }
      if (!first) {
        for (const auto& c : cur) EXPECT_TRUE(prev.count(c)) << "k=" << k << " added an entry";
      }
      prev = cur;
      first = false;
    }
  }
}

TEST(SelectCandidates, PolicyValidation) {
  CandidatePolicy p;
  p.min_gap_ratio = 0.5;
  EXPECT_THROW(check_policy(p), std::invalid_argument);
}

}  // namespace
}  // namespace tierplan
