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
#include <map>
#include <set>
#include <unordered_map>
#include <vector>

#include "tierplan/graph_ir.hpp"
#include "tierplan/machine.hpp"

namespace tierplan {

using Pos = std::int64_t;

/// Positions are indices into Schedule::order.
struct Lifetime {
  TensorId tensor_id;
  Pos def_pos = 0;
  Pos last_use_pos = 0;
  std::vector<std::pair<Pos, Pos>> idle_windows;  // inclusive, sorted, disjoint
  std::vector<Pos> access_positions;              // sorted
  bool produced = false;                          // false for graph inputs

  friend bool operator==(const Lifetime&, const Lifetime&) = default;
};

using LifetimeMap = std::map<TensorId, Lifetime>;

struct CandidatePolicy {
  double min_gap_ratio = 2.0;
  Bytes min_tensor_bytes = 1ULL << 20;
  std::set<TensorKind> kinds_enabled = {TensorKind::activation, TensorKind::optimizer_state,
                                        TensorKind::kv_block};
  // Off: one entry per tensor, for its largest idle window. On: one entry per
  // qualifying window (used for per-step KV reloads).
  bool all_windows = false;

  friend bool operator==(const CandidatePolicy&, const CandidatePolicy&) = default;
};

inline void check_policy(const CandidatePolicy& p) {
  if (!(p.min_gap_ratio >= 1.0)) throw std::invalid_argument("min_gap_ratio must be >= 1");
}

/// evict_after_pos == -1 means "before the first op": the tensor starts out
/// either remote (nothing to store) or as an idle device-resident input.
struct OffloadEntry {
  TensorId tensor_id;
  Pos evict_after_pos = -1;
  Pos reload_before_pos = 0;

  friend bool operator==(const OffloadEntry&, const OffloadEntry&) = default;
};

struct OffloadPlan {
  std::vector<OffloadEntry> entries;
  CandidatePolicy policy;

  friend bool operator==(const OffloadPlan&, const OffloadPlan&) = default;
};

namespace detail {

inline std::unordered_map<OpId, Pos> positions_of(const std::vector<OpId>& order) {
  std::unordered_map<OpId, Pos> pos;
  pos.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) pos.emplace(order[k], static_cast<Pos>(k));
  return pos;
}

inline void require_schedule_of(const GraphProgram& g, const Schedule& s) {
  if (auto err = check_order(g, s.order); !err.empty())
    throw std::invalid_argument("schedule does not match graph: " + err);
}

// prefix[k] = total compute cost of order[0..k).
inline std::vector<Micros> compute_prefix(const GraphProgram& g, const std::vector<OpId>& order) {
  std::unordered_map<OpId, const OpNode*> ops;
  for (const auto& op : g.ops) ops.emplace(op.id, &op);
  std::vector<Micros> prefix(order.size() + 1, 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto* op = ops.at(order[k]);
    prefix[k + 1] = prefix[k] + (op->kind == OpKind::compute ? op->cost_us : 0);
  }
  return prefix;
}

}  // namespace detail

inline LifetimeMap compute_lifetimes(const GraphProgram& g, const Schedule& s) {
  detail::require_schedule_of(g, s);
  auto pos = detail::positions_of(s.order);

  std::unordered_map<TensorId, std::vector<Pos>> accesses;
  std::unordered_map<TensorId, Pos> produced_at;
  for (const auto& op : g.ops) {
    const Pos p = pos.at(op.id);
    for (const auto& t : op.touched()) accesses[t].push_back(p);
    if (op.kind == OpKind::compute)
      for (const auto& t : op.outputs) produced_at[t] = p;
  }

  LifetimeMap out;
  for (const auto& t : g.tensors) {
    Lifetime lt;
    lt.tensor_id = t.id;
    auto& acc = accesses[t.id];
    std::sort(acc.begin(), acc.end());
    lt.access_positions = acc;
    auto prod = produced_at.find(t.id);
    lt.produced = prod != produced_at.end();
    lt.def_pos = lt.produced ? prod->second : 0;
    lt.last_use_pos = acc.empty() ? lt.def_pos : std::max(lt.def_pos, acc.back());

    // Graph inputs are resident from before position 0, so a leading gap
    // before their first access is idle too.
    Pos prev = lt.produced ? lt.def_pos : -1;
    for (Pos a : acc) {
      if (a <= prev) continue;
      if (a - prev >= 2) lt.idle_windows.emplace_back(prev + 1, a - 1);
      prev = a;
    }
    out.emplace(t.id, std::move(lt));
  }
  return out;
}

/// Device bytes live while the op at each position runs, for the
/// all-resident baseline: each alias group occupies one aligned allocation
/// from its earliest definition to its latest access.
inline std::vector<Bytes> occupancy_profile(const GraphProgram& g, const Schedule& s,
                                            const LifetimeMap& lifetimes, const MachineModel& m) {
  auto roots = alias_roots(g);
  struct Span { Pos lo; Pos hi; Bytes bytes; bool any = false; };
  std::map<TensorId, Span> groups;
  for (const auto& t : g.tensors) {
    const auto& lt = lifetimes.at(t.id);
    if (lt.access_positions.empty()) continue;  // never touched, never allocated
    auto& sp = groups[roots.at(t.id)];
    if (!sp.any) {
      sp = {lt.def_pos, lt.last_use_pos, m.align(g.find_tensor(roots.at(t.id))->bytes), true};
    } else {
      sp.lo = std::min(sp.lo, lt.def_pos);
      sp.hi = std::max(sp.hi, lt.last_use_pos);
    }
  }
  std::vector<Bytes> prof(s.order.size(), 0);
  for (const auto& [id, sp] : groups)
    for (Pos p = sp.lo; p <= sp.hi && p < static_cast<Pos>(prof.size()); ++p) prof[p] += sp.bytes;
  return prof;
}

/// Static wall-time estimate of the ops at positions [from, to].
inline Micros window_wall_time(const std::vector<Micros>& prefix, Pos from, Pos to) {
  if (to < from) return 0;
  return prefix[to + 1] - prefix[from];
}

inline OffloadPlan select_candidates(const GraphProgram& g, const Schedule& s,
                                     const LifetimeMap& lifetimes, const MachineModel& m,
                                     const CandidatePolicy& p) {
  check_policy(p);
  detail::require_schedule_of(g, s);
  const auto prefix = detail::compute_prefix(g, s.order);

  OffloadPlan plan;
  plan.policy = p;
  for (const auto& t : g.tensors) {
    const auto& lt = lifetimes.at(t.id);
    // Versions share their base's allocation; residency follows the base.
    if (t.alias_of) continue;

    // A remote-resident input must be brought in before its first use no
    // matter what the policy says.
    bool mandatory = t.initial_tier == Tier::remote && !lt.produced && !lt.access_positions.empty();
    if (mandatory)
      plan.entries.push_back({t.id, -1, lt.access_positions.front()});

    if (t.pinned || !p.kinds_enabled.count(t.kind) || t.bytes < p.min_tensor_bytes) continue;

    const Micros round_trip =
        estimate_transfer_us(t, m, Channel::d2r) + estimate_transfer_us(t, m, Channel::r2d);
    const double threshold = p.min_gap_ratio * static_cast<double>(round_trip);

    std::vector<std::pair<Pos, Pos>> qualifying;
    for (const auto& w : lt.idle_windows) {
      if (mandatory && w.first == 0) continue;  // already covered above
      if (static_cast<double>(window_wall_time(prefix, w.first, w.second)) > threshold)
        qualifying.push_back(w);
    }
    if (qualifying.empty()) continue;
    if (!p.all_windows) {
      // Largest window by static wall time; earliest wins ties.
      auto best = qualifying.front();
      for (const auto& w : qualifying)
        if (window_wall_time(prefix, w.first, w.second) > window_wall_time(prefix, best.first, best.second))
          best = w;
      qualifying = {best};
    }
    for (const auto& w : qualifying) plan.entries.push_back({t.id, w.first - 1, w.second + 1});
  }
  return plan;
}

}  // namespace tierplan
