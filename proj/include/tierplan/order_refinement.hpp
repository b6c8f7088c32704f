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
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tierplan/graph_ir.hpp"
#include "tierplan/machine.hpp"
#include "tierplan/machine_sim.hpp"
#include "tierplan/memory_analysis.hpp"

namespace tierplan {

struct CostWeights {
  double alpha = 1.0;   // per us of exposed transfer
  double beta = 1e-9;   // per byte*us of early residency
  friend bool operator==(const CostWeights&, const CostWeights&) = default;
};

inline void check_weights(const CostWeights& w) {
  if (!(w.alpha >= 0.0) || !(w.beta >= 0.0) || !(w.alpha + w.beta > 0.0))
    throw std::invalid_argument("cost weights need alpha >= 0, beta >= 0 and alpha + beta > 0");
}

struct PositionEvaluation {
  OpId cache_op_id = 0;
  Pos position = 0;
  Micros transfer_completion_us = 0;
  Micros overlap_us = 0;
  Micros exposed_us = 0;
  double residency_byte_us = 0.0;
  double cost = 0.0;
  friend bool operator==(const PositionEvaluation&, const PositionEvaluation&) = default;
};

/// Inclusive range of final indices c may take in the order.
struct PositionRange {
  Pos lo = 0;
  Pos hi = 0;
  Pos size() const { return hi - lo + 1; }
  bool contains(Pos p) const { return p >= lo && p <= hi; }
  friend bool operator==(const PositionRange&, const PositionRange&) = default;
};

namespace detail {

// The order with c taken out, plus everything needed to place it again.
struct Placement {
  std::vector<OpId> rest;          // order without c
  std::vector<Micros> prefix;      // compute prefix over rest
  PositionRange range;
  Pos original = 0;                // index of c in the input order
  std::optional<Pos> first_succ;   // index in rest of c's earliest successor
  std::optional<Pos> store_pred;   // Detach only: index in rest of its Store predecessor
  const OpNode* op = nullptr;
  Bytes bytes = 0;
};

// `order` holds dependency indices rather than op ids, so the hot loop in
// refinement needs no hash lookups.
inline Placement make_placement_idx(const GraphProgram& g, const DepGraph& d, const std::vector<std::size_t>& order,
                                    std::size_t ci) {
  Placement pl;
  const OpId c = d.ids[ci];
  auto it = std::find(order.begin(), order.end(), ci);
  if (it == order.end()) throw std::invalid_argument("cache op " + std::to_string(c) + " not in order");
  pl.op = &g.ops[ci];
  if (!pl.op->is_cache()) throw std::invalid_argument("op " + std::to_string(c) + " is not a cache op");
  pl.original = static_cast<Pos>(it - order.begin());
  // One pass over the order: positions (by dependency index) and the
  // compute prefix of the order without c.
  pl.rest.reserve(order.size() - 1);
  pl.prefix.assign(order.size(), 0);
  std::vector<Pos> pos(d.size(), -1);
  for (auto i : order) {
    if (i == ci) continue;
    const Pos k = static_cast<Pos>(pl.rest.size());
    pos[i] = k;
    pl.prefix[k + 1] = pl.prefix[k] + (g.ops[i].kind == OpKind::compute ? g.ops[i].cost_us : 0);
    pl.rest.push_back(d.ids[i]);
  }

  Pos lo = 0;
  for (auto p : d.pred[ci]) {
    const Pos at = pos[p];
    lo = std::max(lo, at + 1);
    if (pl.op->kind == OpKind::detach && g.ops[p].kind == OpKind::store && g.ops[p].tensor == pl.op->tensor)
      pl.store_pred = std::max(pl.store_pred.value_or(at), at);
  }
  Pos hi = static_cast<Pos>(pl.rest.size());
  for (auto s : d.succ[ci]) {
    const Pos at = pos[s];
    if (at < hi) {
      hi = at;
      pl.first_succ = at;
    }
  }
  if (lo > hi) throw std::logic_error("cache op " + std::to_string(c) + " has an empty feasible range");
  pl.range = {lo, hi};
  if (const auto* t = g.find_tensor(pl.op->tensor)) pl.bytes = t->bytes;
  return pl;
}

inline std::vector<std::size_t> to_indices(const DepGraph& d, const std::vector<OpId>& order) {
  std::vector<std::size_t> out;
  out.reserve(order.size());
  for (auto id : order) {
    auto it = d.index.find(id);
    if (it == d.index.end()) throw std::invalid_argument("unknown op id " + std::to_string(id) + " in order");
    out.push_back(it->second);
  }
  return out;
}

inline Placement make_placement(const GraphProgram& g, const DepGraph& d, const std::vector<OpId>& order,
                                OpId c) {
  auto it = d.index.find(c);
  if (it == d.index.end()) throw std::invalid_argument("cache op " + std::to_string(c) + " not in order");
  return make_placement_idx(g, d, to_indices(d, order), it->second);
}

inline PositionEvaluation evaluate(const Placement& pl, Pos p, const MachineModel& m, const CostWeights& w) {
  if (!pl.range.contains(p))
    throw std::invalid_argument("position " + std::to_string(p) + " is outside the feasible range of op " +
                                std::to_string(pl.op->id));
  const auto& P = pl.prefix;
  const Pos end = static_cast<Pos>(pl.rest.size());
  // Compute time of rest[a..b), i.e. of the ops placed between two slots.
  auto between = [&](Pos a, Pos b) { return b > a ? P[b] - P[a] : Micros{0}; };
  const double bytes = static_cast<double>(pl.bytes);

  PositionEvaluation e;
  e.cache_op_id = pl.op->id;
  e.position = p;
  switch (pl.op->kind) {
    case OpKind::prefetch: {
      const Micros t = estimate_transfer_us(pl.bytes, m, Channel::r2d);
      e.overlap_us = between(p, pl.first_succ.value_or(end));
      e.transfer_completion_us = P[p] + t;
      e.exposed_us = std::max<Micros>(0, t - e.overlap_us);
      e.residency_byte_us = bytes * static_cast<double>(std::max<Micros>(0, e.overlap_us - t));
      break;
    }
    case OpKind::store: {
      // Overlaps with the compute run up to the Detach that waits on it; a
      // late Store keeps the device copy pinned longer.
      const Micros t = estimate_transfer_us(pl.bytes, m, Channel::d2r);
      e.overlap_us = between(p, pl.first_succ.value_or(end));
      e.transfer_completion_us = P[p] + t;
      e.exposed_us = std::max<Micros>(0, t - e.overlap_us);
      e.residency_byte_us = bytes * static_cast<double>(between(pl.range.lo, p));
      break;
    }
    case OpKind::detach: {
      if (pl.store_pred) {
        const Micros t = estimate_transfer_us(pl.bytes, m, Channel::d2r);
        e.overlap_us = between(*pl.store_pred + 1, p);
        e.transfer_completion_us = P[*pl.store_pred + 1] + t;
        e.exposed_us = std::max<Micros>(0, t - e.overlap_us);
        e.residency_byte_us = bytes * static_cast<double>(std::max<Micros>(0, e.overlap_us - t));
      } else {
        e.transfer_completion_us = P[p];
        e.residency_byte_us = bytes * static_cast<double>(between(pl.range.lo, p));
      }
      break;
    }
    case OpKind::compute: throw std::logic_error("compute ops are not placed");
  }
  e.cost = w.alpha * static_cast<double>(e.exposed_us) + w.beta * e.residency_byte_us;
  return e;
}

}  // namespace detail

/// Final indices c can occupy without breaking a dependency. Predecessor and
/// successor indices are taken in the order with c removed.
inline PositionRange feasible_positions(const GraphProgram& g, const std::vector<OpId>& order, OpId c) {
  auto d = build_dependencies(g);
  return detail::make_placement(g, d, order, c).range;
}

/// Static cost of placing c at final index p. Counts compute-stream work only
/// and assumes an idle DMA channel; the simulator settles contention.
inline PositionEvaluation evaluate_position(const GraphProgram& g, const std::vector<OpId>& order, OpId c, Pos p,
                                            const MachineModel& m, const CostWeights& w) {
  check_weights(w);
  auto d = build_dependencies(g);
  return detail::evaluate(detail::make_placement(g, d, order, c), p, m, w);
}

/// One record per cache op with more than one feasible position.
struct RefineRecord {
  OpId cache_op_id = 0;
  Pos before = 0;
  Pos after = 0;
  bool moved = false;
  PositionEvaluation original;
  PositionEvaluation chosen;
  friend bool operator==(const RefineRecord&, const RefineRecord&) = default;
};

struct RefineResult {
  Schedule schedule;
  std::vector<RefineRecord> log;
};

/// Greedy placement: every independent cache op, in ascending id order, moves
/// to the argmin-cost slot against the current order. Ties go to the latest
/// slot. Compute ops never move relative to each other.
inline RefineResult refine_order_logged(const GraphProgram& g, const Schedule& s, const MachineModel& m,
                                        const CostWeights& w) {
  check_weights(w);
  check_machine(m);
  if (auto err = check_order(g, s.order); !err.empty())
    throw std::invalid_argument("refine_order: invalid input order: " + err);
  auto d = build_dependencies(g);

  std::vector<OpId> cache_ids;
  for (const auto& op : g.ops)
    if (op.is_cache()) cache_ids.push_back(op.id);
  std::sort(cache_ids.begin(), cache_ids.end());

  RefineResult out;
  auto order = detail::to_indices(d, s.order);
  for (OpId c : cache_ids) {
    const std::size_t ci = d.at(c);
    auto pl = detail::make_placement_idx(g, d, order, ci);
    if (pl.range.size() <= 1) continue;
    RefineRecord rec;
    rec.cache_op_id = c;
    rec.before = pl.original;
    rec.original = detail::evaluate(pl, pl.original, m, w);
    rec.chosen = rec.original;
    bool first = true;
    for (Pos p = pl.range.lo; p <= pl.range.hi; ++p) {
      auto e = detail::evaluate(pl, p, m, w);
      if (first || e.cost <= rec.chosen.cost) rec.chosen = e;
      first = false;
    }
    if (rec.chosen.cost > rec.original.cost)
      throw std::logic_error("refinement picked a slot costlier than the original for op " + std::to_string(c));
    rec.after = rec.chosen.position;
    rec.moved = rec.after != rec.before;
    // Move c from its old slot to the chosen one in place.
    auto from = order.begin() + pl.original;
    auto to = order.begin() + rec.after;
    if (from < to)
      std::rotate(from, from + 1, to + 1);
    else if (to < from)
      std::rotate(to, from, from + 1);
    out.log.push_back(rec);
  }
  std::vector<OpId> ids;
  ids.reserve(order.size());
  for (auto i : order) ids.push_back(d.ids[i]);
  if (auto err = check_order(g, ids); !err.empty())
    throw std::logic_error("refinement produced an invalid order: " + err);
  out.schedule = make_schedule(g, std::move(ids));
  return out;
}

inline Schedule refine_order(const GraphProgram& g, const Schedule& s, const MachineModel& m,
                             const CostWeights& w = {}) {
  return refine_order_logged(g, s, m, w).schedule;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle for small graphs.

inline constexpr std::size_t kOracleMaxOps = 10;

struct OracleOutcome {
  std::vector<OpId> order;
  Micros makespan_us = 0;
  Bytes peak_device_bytes = 0;
  friend bool operator==(const OracleOutcome&, const OracleOutcome&) = default;
};

struct OracleResult {
  OracleOutcome best_makespan;
  OracleOutcome best_peak;
  std::vector<OracleOutcome> pareto_front;  // sorted by makespan, then peak
  std::size_t orders_enumerated = 0;
  std::size_t orders_oom = 0;
};

/// Calls fn(order) for every linear extension of g, in lexicographic order
/// of op ids.
template <typename Fn>
void for_each_topological_order(const GraphProgram& g, Fn&& fn) {
  auto d = build_dependencies(g);
  const std::size_t n = d.size();
  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = d.pred[i].size();
  std::vector<std::size_t> by_id(n);
  for (std::size_t i = 0; i < n; ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(), [&](auto a, auto b) { return d.ids[a] < d.ids[b]; });
  std::vector<char> used(n, 0);
  std::vector<OpId> order;
  order.reserve(n);

  auto rec = [&](auto&& self) -> void {
    if (order.size() == n) {
      fn(static_cast<const std::vector<OpId>&>(order));
      return;
    }
    for (auto i : by_id) {
      if (used[i] || indeg[i] != 0) continue;
      used[i] = 1;
      order.push_back(d.ids[i]);
      for (auto s : d.succ[i]) --indeg[s];
      self(self);
      for (auto s : d.succ[i]) ++indeg[s];
      order.pop_back();
      used[i] = 0;
    }
  };
  rec(rec);
}

inline OracleResult exhaustive_oracle(const GraphProgram& g, const MachineModel& m) {
  if (g.ops.size() > kOracleMaxOps)
    throw std::invalid_argument("exhaustive_oracle: graph has " + std::to_string(g.ops.size()) +
                                " ops, limit is " + std::to_string(kOracleMaxOps));
  if (auto rep = validate(g); !rep.empty()) throw std::invalid_argument("exhaustive_oracle: " + describe(rep));
  OracleResult r;
  std::vector<OracleOutcome> all;
  for_each_topological_order(g, [&](const std::vector<OpId>& order) {
    ++r.orders_enumerated;
    auto rep = simulate(g, make_schedule(g, order), m);
    if (rep.oom) {
      ++r.orders_oom;
      return;
    }
    all.push_back({order, rep.makespan_us, rep.peak_device_bytes});
  });
  if (all.empty()) return r;
  // Strict improvement keeps the lexicographically first order on ties.
  r.best_makespan = all.front();
  r.best_peak = all.front();
  for (const auto& o : all) {
    if (o.makespan_us < r.best_makespan.makespan_us) r.best_makespan = o;
    if (o.peak_device_bytes < r.best_peak.peak_device_bytes) r.best_peak = o;
  }
  auto sorted = all;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.makespan_us, a.peak_device_bytes) < std::tie(b.makespan_us, b.peak_device_bytes);
  });
  Bytes best_peak_so_far = kUnlimitedBytes;
  for (const auto& o : sorted) {
    if (o.peak_device_bytes >= best_peak_so_far) continue;
    best_peak_so_far = o.peak_device_bytes;
    r.pareto_front.push_back(o);
  }
  return r;
}

}  // namespace tierplan
