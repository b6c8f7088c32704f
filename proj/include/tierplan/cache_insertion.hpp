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

#include <cstdint>
#include <deque>
#include <map>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tierplan/graph_ir.hpp"
#include "tierplan/memory_analysis.hpp"

namespace tierplan {

namespace detail {

// Reachability over a graph that grows while we query it.
class GrowingDag {
 public:
  explicit GrowingDag(const GraphProgram& g) {
    auto d = build_dependencies(g);
    for (std::size_t i = 0; i < d.size(); ++i)
      for (auto s : d.succ[i]) succ_[d.ids[i]].push_back(d.ids[s]);
  }

  void add_edge(OpId a, OpId b) { succ_[a].push_back(b); }

  bool reaches(OpId from, OpId to) const {
    if (from == to) return true;
    std::unordered_set<OpId> seen{from};
    std::deque<OpId> work{from};
    while (!work.empty()) {
      OpId v = work.front();
      work.pop_front();
      auto it = succ_.find(v);
      if (it == succ_.end()) continue;
      for (OpId w : it->second) {
        if (w == to) return true;
        if (seen.insert(w).second) work.push_back(w);
      }
    }
    return false;
  }

 private:
  std::unordered_map<OpId, std::vector<OpId>> succ_;
};

// Transitive closure as bitsets, one row per op (DepGraph index space).
class Closure {
 public:
  explicit Closure(const DepGraph& d) : words_((d.size() + 63) / 64), rows_(d.size()) {
    std::vector<std::size_t> indeg(d.size()), topo;
    for (std::size_t i = 0; i < d.size(); ++i) indeg[i] = d.pred[i].size();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (indeg[i] == 0) topo.push_back(i);
    for (std::size_t k = 0; k < topo.size(); ++k)
      for (auto s : d.succ[topo[k]])
        if (--indeg[s] == 0) topo.push_back(s);
    if (topo.size() != d.size()) throw std::invalid_argument("closure of cyclic graph");
    for (auto& r : rows_) r.assign(words_, 0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      auto& row = rows_[*it];
      for (auto s : d.succ[*it]) {
        row[s / 64] |= std::uint64_t{1} << (s % 64);
        for (std::size_t w = 0; w < words_; ++w) row[w] |= rows_[s][w];
      }
    }
  }

  // Strict: a != b and there is a path a -> b.
  bool before(std::size_t a, std::size_t b) const { return (rows_[a][b / 64] >> (b % 64)) & 1U; }

 private:
  std::size_t words_;
  std::vector<std::vector<std::uint64_t>> rows_;
};

}  // namespace detail

/// Materializes an offload plan as Store/Detach/Prefetch nodes.
///
/// Per entry on tensor t, with e the op at evict_after_pos and r the op at
/// reload_before_pos:
///   e -> Store(t) -> Detach(t) -> Prefetch(t) -> r
/// Store is omitted when the remote copy is already valid (remote inputs, or
/// a later entry on a tensor that was stored once; tensors are single
/// assignment so a stored copy never goes stale). Detach is omitted when the
/// tensor was never on device. Extra edges are added only where needed so
/// that every earlier access precedes the eviction and every later access in
/// the same residency interval follows the Prefetch.
inline GraphProgram insert_cache_ops(const GraphProgram& g, const Schedule& s, const OffloadPlan& plan) {
  detail::require_schedule_of(g, s);
  const Pos n = static_cast<Pos>(s.order.size());
  auto lifetimes = compute_lifetimes(g, s);

  std::unordered_map<OpId, const OpNode*> ops;
  for (const auto& op : g.ops) ops.emplace(op.id, &op);
  auto touches = [&](Pos p, const TensorId& t) {
    auto tt = ops.at(s.order[p])->touched();
    return std::find(tt.begin(), tt.end(), t) != tt.end();
  };

  std::map<TensorId, std::vector<std::size_t>> per_tensor;
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    const auto& e = plan.entries[i];
    const auto* decl = g.find_tensor(e.tensor_id);
    if (!decl) throw std::invalid_argument("plan references unknown tensor '" + e.tensor_id + "'");
    if (e.evict_after_pos < -1 || e.evict_after_pos >= n || e.reload_before_pos < 0 ||
        e.reload_before_pos >= n)
      throw std::invalid_argument("plan entry for '" + e.tensor_id + "' has a position outside the schedule");
    if (e.evict_after_pos >= e.reload_before_pos)
      throw std::invalid_argument("plan entry for '" + e.tensor_id + "' evicts after it reloads");
    if (!touches(e.reload_before_pos, e.tensor_id) ||
        (e.evict_after_pos >= 0 && !touches(e.evict_after_pos, e.tensor_id)))
      throw std::invalid_argument("plan entry for '" + e.tensor_id + "' is not anchored on accesses");
    per_tensor[e.tensor_id].push_back(i);
  }
  for (auto& [t, idx] : per_tensor) {
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return plan.entries[a].evict_after_pos < plan.entries[b].evict_after_pos;
    });
    for (std::size_t k = 1; k < idx.size(); ++k)
      if (plan.entries[idx[k]].evict_after_pos < plan.entries[idx[k - 1]].reload_before_pos)
        throw std::invalid_argument("overlapping plan entries for '" + t + "'");
  }

  GraphProgram out = g;
  detail::GrowingDag dag(g);
  OpId next_id = 0;
  for (const auto& op : g.ops) next_id = std::max(next_id, op.id + 1);

  std::unordered_map<TensorId, OpId> producer_of;
  for (const auto& op : g.ops)
    if (op.kind == OpKind::compute)
      for (const auto& t : op.outputs) producer_of[t] = op.id;

  auto add_node = [&](OpKind kind, const TensorId& t) {
    OpNode node;
    node.id = next_id++;
    node.kind = kind;
    node.tensor = t;
    out.ops.push_back(node);
    if (auto it = producer_of.find(t); it != producer_of.end()) dag.add_edge(it->second, node.id);
    return node.id;
  };
  auto add_edge = [&](OpId a, OpId b) {
    out.control_edges.emplace_back(a, b);
    dag.add_edge(a, b);
  };

  // Rank of each entry among the entries of its tensor.
  std::vector<std::size_t> rank(plan.entries.size(), 0);
  for (const auto& [t, idx] : per_tensor)
    for (std::size_t k = 0; k < idx.size(); ++k) rank[idx[k]] = k;

  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    const auto& entry = plan.entries[i];
    const auto& t = entry.tensor_id;
    const auto* decl = g.find_tensor(t);
    const auto& lt = lifetimes.at(t);
    const auto& siblings = per_tensor.at(t);
    const std::size_t k = rank[i];

    const bool remote_input = decl->initial_tier == Tier::remote && !lt.produced;
    const bool on_device_before = !(remote_input && entry.evict_after_pos < 0 && k == 0);
    const bool need_store = on_device_before && !remote_input && k == 0;
    const bool need_detach = on_device_before;

    std::optional<OpId> store, detach;
    if (need_store) store = add_node(OpKind::store, t);
    if (need_detach) detach = add_node(OpKind::detach, t);
    const OpId prefetch = add_node(OpKind::prefetch, t);
    const OpId reload_op = s.order[entry.reload_before_pos];

    std::optional<OpId> first_evict = store ? store : detach;
    if (first_evict && entry.evict_after_pos >= 0) add_edge(s.order[entry.evict_after_pos], *first_evict);
    if (store && detach) add_edge(*store, *detach);
    if (detach) add_edge(*detach, prefetch);
    add_edge(prefetch, reload_op);

    if (first_evict) {
      const Pos lower = k == 0 ? 0 : plan.entries[siblings[k - 1]].reload_before_pos;
      for (Pos a : lt.access_positions) {
        if (a < lower || a > entry.evict_after_pos) continue;
        OpId op = s.order[a];
        if (!dag.reaches(op, *first_evict)) add_edge(op, *first_evict);
      }
    }
    const Pos upper = k + 1 < siblings.size() ? plan.entries[siblings[k + 1]].evict_after_pos
                                              : std::numeric_limits<Pos>::max();
    for (Pos a : lt.access_positions) {
      if (a <= entry.reload_before_pos || a > upper) continue;
      OpId op = s.order[a];
      if (!dag.reaches(prefetch, op)) add_edge(prefetch, op);
    }
  }
  return out;
}

/// Reports use-after-evict hazards: a reader of t that some schedule could
/// run after a Detach(t) (or before any load of a remote input) without a
/// Prefetch(t) ordered in between. An empty report means every topological
/// order of g keeps t resident at each of its reads.
inline ValidationReport check_residency_safety(const GraphProgram& g) {
  ValidationReport report;
  auto d = build_dependencies(g);
  detail::Closure reach(d);
  std::unordered_map<TensorId, const TensorDecl*> tensors;
  for (const auto& t : g.tensors) tensors.emplace(t.id, &t);

  struct Uses { std::vector<std::size_t> detach, prefetch, readers; bool produced = false; };
  std::map<TensorId, Uses> uses;
  for (std::size_t i = 0; i < g.ops.size(); ++i) {
    const auto& op = g.ops[i];
    switch (op.kind) {
      case OpKind::detach: uses[op.tensor].detach.push_back(i); break;
      case OpKind::prefetch: uses[op.tensor].prefetch.push_back(i); break;
      case OpKind::store: uses[op.tensor].readers.push_back(i); break;
      case OpKind::compute:
        for (const auto& t : op.inputs) uses[t].readers.push_back(i);
        for (const auto& t : op.outputs) uses[t].produced = true;
        break;
    }
  }

  auto hazard = [&](const TensorId& t, std::size_t reader, const std::string& why) {
    report.push_back({ViolationKind::residency_hazard,
                      "op " + std::to_string(d.ids[reader]) + " reads '" + t + "' " + why,
                      {d.ids[reader]}, t});
  };

  for (const auto& [t, u] : uses) {
    auto it = tensors.find(t);
    if (it == tensors.end()) continue;
    const bool remote_input = it->second->initial_tier == Tier::remote && !u.produced;
    std::set<std::size_t> flagged;
    for (auto r : u.readers) {
      if (remote_input) {
        bool loaded = std::any_of(u.prefetch.begin(), u.prefetch.end(),
                                  [&](auto p) { return reach.before(p, r); });
        if (!loaded && flagged.insert(r).second) hazard(t, r, "with no prefetch ordered before it");
      }
      for (auto det : u.detach) {
        if (reach.before(r, det)) continue;
        bool reloaded = std::any_of(u.prefetch.begin(), u.prefetch.end(), [&](auto p) {
          return reach.before(det, p) && reach.before(p, r);
        });
        if (!reloaded && flagged.insert(r).second)
          hazard(t, r, "after detach op " + std::to_string(d.ids[det]) + " without a reload");
      }
    }
    for (auto p : u.prefetch)
      for (auto det : u.detach)
        if (!reach.before(p, det) && !reach.before(det, p))
          report.push_back({ViolationKind::residency_hazard,
                            "prefetch op " + std::to_string(d.ids[p]) + " and detach op " +
                                std::to_string(d.ids[det]) + " on '" + t + "' are unordered",
                            {d.ids[p], d.ids[det]}, t});
  }
  return report;
}

}  // namespace tierplan
