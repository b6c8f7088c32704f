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
#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tierplan/cache_insertion.hpp"
#include "tierplan/machine_sim.hpp"
#include "tierplan/memory_analysis.hpp"
#include "tierplan/order_refinement.hpp"
#include "tierplan/workloads.hpp"

namespace tierplan {

struct PlanOptions {
  CandidatePolicy policy;
  CostWeights weights;
  bool refine = true;
};

struct PlanResult {
  GraphProgram graph;        // with cache ops
  Schedule schedule;         // final order
  Schedule initial;          // topological order of `graph` before refinement
  OffloadPlan plan;
  std::vector<RefineRecord> log;
};

/// Lifetimes, candidate selection, cache-op insertion and order refinement on
/// the default topological order of a compute-only graph.
inline PlanResult plan_offload(const GraphProgram& g, const MachineModel& m, const PlanOptions& o = {}) {
  check_machine(m);
  check_policy(o.policy);
  auto s = topo_order(g);
  PlanResult r;
  r.plan = select_candidates(g, s, compute_lifetimes(g, s), m, o.policy);
  r.graph = insert_cache_ops(g, s, r.plan);
  r.initial = topo_order(r.graph);
  if (o.refine) {
    auto refined = refine_order_logged(r.graph, r.initial, m, o.weights);
    r.schedule = std::move(refined.schedule);
    r.log = std::move(refined.log);
  } else {
    r.schedule = r.initial;
  }
  return r;
}

/// The three executions every comparison reports.
struct Comparison {
  SimReport no_offload;    // everything on device, unlimited capacity
  SimReport reactive;      // runtime-driven eviction at the configured capacity
  SimReport graph_driven;  // planned cache ops at the configured capacity
};

inline Comparison compare(const GraphProgram& g, const MachineModel& m, const PlanOptions& o = {}) {
  Comparison c;
  auto s = topo_order(g);
  auto unlimited = m;
  unlimited.device_capacity_bytes = kUnlimitedBytes;
  unlimited.remote_capacity_bytes = kUnlimitedBytes;
  auto base = all_device_baseline(g);
  c.no_offload = simulate(base, restrict_schedule(base, s), unlimited);
  c.reactive = run_reactive_baseline(g, s, m);
  auto p = plan_offload(g, m, o);
  c.graph_driven = simulate(p.graph, p.schedule, m);
  return c;
}

struct SweepPoint {
  double bandwidth_gbps = 0.0;
  SimReport no_offload;
  SimReport graph_driven;
};

/// Simulates the graph-driven plan across symmetric link bandwidths. The
/// plan and order are fixed at the machine's own bandwidth unless `replan`
/// is set, in which case every point is planned from scratch.
inline std::vector<SweepPoint> sweep_bandwidth(const GraphProgram& g, const MachineModel& m,
                                               const std::vector<double>& gbps, bool replan = false,
                                               const PlanOptions& o = {}) {
  std::vector<SweepPoint> out;
  auto fixed = plan_offload(g, m, o);
  auto base = all_device_baseline(g);
  auto base_order = restrict_schedule(base, topo_order(g));
  for (double bw : gbps) {
    if (!(bw > 0.0)) throw std::invalid_argument("sweep: bandwidths must be > 0");
    auto mm = m;
    mm.r2d_bandwidth_bytes_per_us = mm.d2r_bandwidth_bytes_per_us = gbps_to_bytes_per_us(bw);
    SweepPoint pt;
    pt.bandwidth_gbps = bw;
    auto unlimited = mm;
    unlimited.device_capacity_bytes = kUnlimitedBytes;
    pt.no_offload = simulate(base, base_order, unlimited);
    if (replan) {
      auto p = plan_offload(g, mm, o);
      pt.graph_driven = simulate(p.graph, p.schedule, mm);
    } else {
      pt.graph_driven = simulate(fixed.graph, fixed.schedule, mm);
    }
    out.push_back(std::move(pt));
  }
  return out;
}

/// Whether a decode run with this prompt length completes at the machine's
/// capacities, either all on device or with the graph-driven plan.
inline bool decode_fits(const DecodeSpec& d, const MachineModel& m, bool offload, const PlanOptions& o = {}) {
  auto g = gen_llm_decode(d);
  if (!offload) {
    auto base = all_device_baseline(g);
    return !simulate(base, restrict_schedule(base, topo_order(g)), m).oom;
  }
  auto p = plan_offload(g, m, o);
  return !simulate(p.graph, p.schedule, m).oom;
}

/// Largest prefill_tokens in [step, hi], to a multiple of `step`, that fits.
/// Assumes fitting is monotone in the prompt length. Returns 0 if none fits.
inline std::int64_t max_prefill_tokens(DecodeSpec d, const MachineModel& m, bool offload, std::int64_t hi,
                                       std::int64_t step = 100, const PlanOptions& o = {}) {
  if (step < 1 || hi < step) throw std::invalid_argument("max_prefill_tokens: need 1 <= step <= hi");
  const auto blocks = d.kv_blocks_per_layer;
  auto fits = [&](std::int64_t k) {
    d.prefill_tokens = k * step;
    d.kv_blocks_per_layer = std::min<std::int64_t>(blocks, d.prefill_tokens);
    return decode_fits(d, m, offload, o);
  };
  std::int64_t lo = 0, up = hi / step + 1;  // fits(lo) assumed, !fits(up) assumed
  if (fits(up - 1)) return (up - 1) * step;
  while (up - lo > 1) {
    auto mid = lo + (up - lo) / 2;
    (fits(mid) ? lo : up) = mid;
  }
  return lo * step;
}

}  // namespace tierplan
