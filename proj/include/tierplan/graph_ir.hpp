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
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tierplan {

using OpId = std::int64_t;
using TensorId = std::string;
using Bytes = std::uint64_t;
using Micros = std::int64_t;

enum class TensorKind { weight, activation, gradient, optimizer_state, kv_block, workspace };
enum class Tier { device, remote };
enum class OpKind { compute, prefetch, store, detach };

// Values double as Chrome-trace thread ids.
enum class Stream { compute = 1, dma_in = 2, dma_out = 3 };

inline constexpr TensorKind kAllTensorKinds[] = {
    TensorKind::weight,          TensorKind::activation, TensorKind::gradient,
    TensorKind::optimizer_state, TensorKind::kv_block,   TensorKind::workspace};

inline std::string_view to_string(TensorKind k) {
  switch (k) {
    case TensorKind::weight: return "weight";
    case TensorKind::activation: return "activation";
    case TensorKind::gradient: return "gradient";
    case TensorKind::optimizer_state: return "optimizer_state";
    case TensorKind::kv_block: return "kv_block";
    case TensorKind::workspace: return "workspace";
  }
  return "?";
}

inline std::string_view to_string(Tier t) { return t == Tier::device ? "device" : "remote"; }

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::compute: return "compute";
    case OpKind::prefetch: return "prefetch";
    case OpKind::store: return "store";
    case OpKind::detach: return "detach";
  }
  return "?";
}

inline std::string_view to_string(Stream s) {
  switch (s) {
    case Stream::compute: return "COMPUTE";
    case Stream::dma_in: return "DMA_IN";
    case Stream::dma_out: return "DMA_OUT";
  }
  return "?";
}

inline TensorKind parse_tensor_kind(std::string_view s) {
  for (auto k : kAllTensorKinds)
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown tensor kind '" + std::string(s) + "'");
}

inline Tier parse_tier(std::string_view s) {
  if (s == "device") return Tier::device;
  if (s == "remote") return Tier::remote;
  throw std::invalid_argument("unknown tier '" + std::string(s) + "'");
}

inline OpKind parse_op_kind(std::string_view s) {
  for (auto k : {OpKind::compute, OpKind::prefetch, OpKind::store, OpKind::detach})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown op kind '" + std::string(s) + "'");
}

inline Stream parse_stream(std::string_view s) {
  for (auto k : {Stream::compute, Stream::dma_in, Stream::dma_out})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown stream '" + std::string(s) + "'");
}

struct TensorDecl {
  TensorId id;
  Bytes bytes = 0;
  TensorKind kind = TensorKind::activation;
  Tier initial_tier = Tier::device;
  bool pinned = false;
  // In-place update: this tensor is a new version sharing the allocation of
  // `alias_of`. It consumes no extra device memory.
  std::optional<TensorId> alias_of;

  friend bool operator==(const TensorDecl&, const TensorDecl&) = default;
};

struct OpNode {
  OpId id = 0;
  OpKind kind = OpKind::compute;
  Micros cost_us = 0;                // compute only
  std::vector<TensorId> inputs;      // compute only
  std::vector<TensorId> outputs;     // compute only
  TensorId tensor;                   // cache ops only
  std::string name;                  // optional label

  bool is_cache() const { return kind != OpKind::compute; }

  // Every tensor the op touches, inputs first, without duplicates.
  std::vector<TensorId> touched() const {
    if (is_cache()) return {tensor};
    std::vector<TensorId> out;
    for (const auto* list : {&inputs, &outputs})
      for (const auto& t : *list)
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    return out;
  }

  bool reads(const TensorId& t) const {
    if (kind == OpKind::store) return tensor == t;
    if (kind != OpKind::compute) return false;
    return std::find(inputs.begin(), inputs.end(), t) != inputs.end();
  }

  std::string label() const {
    if (!name.empty()) return name;
    if (is_cache()) return std::string(to_string(kind)) + ":" + tensor;
    return "op" + std::to_string(id);
  }

  friend bool operator==(const OpNode&, const OpNode&) = default;
};

struct GraphProgram {
  std::vector<TensorDecl> tensors;
  std::vector<OpNode> ops;
  std::vector<std::pair<OpId, OpId>> control_edges;

  const TensorDecl* find_tensor(const TensorId& id) const {
    for (const auto& t : tensors)
      if (t.id == id) return &t;
    return nullptr;
  }
  const OpNode* find_op(OpId id) const {
    for (const auto& o : ops)
      if (o.id == id) return &o;
    return nullptr;
  }

  friend bool operator==(const GraphProgram&, const GraphProgram&) = default;
};

inline Stream stream_for(OpKind k) {
  switch (k) {
    case OpKind::prefetch: return Stream::dma_in;
    case OpKind::store: return Stream::dma_out;
    default: return Stream::compute;  // compute and detach
  }
}

struct Schedule {
  std::vector<OpId> order;
  std::map<OpId, Stream> stream_of;

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

enum class ViolationKind {
  duplicate_id,
  dangling_reference,
  multi_producer,
  cycle,
  malformed,
  residency_hazard,
};

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::duplicate_id: return "duplicate_id";
    case ViolationKind::dangling_reference: return "dangling_reference";
    case ViolationKind::multi_producer: return "multi_producer";
    case ViolationKind::cycle: return "cycle";
    case ViolationKind::malformed: return "malformed";
    case ViolationKind::residency_hazard: return "residency_hazard";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string message;
  std::vector<OpId> ops;
  TensorId tensor;
};

using ValidationReport = std::vector<Violation>;

/// Dense adjacency view of the dependency relation: data edges (producer to
/// every other op touching the tensor, plus readers of an aliased base to the
/// producer of the alias) united with control edges. Edge lists are sorted
/// and deduplicated. Unknown references are skipped; validate() reports them.
struct DepGraph {
  std::vector<OpId> ids;  // index -> op id, in GraphProgram::ops order
  std::unordered_map<OpId, std::size_t> index;
  std::vector<std::vector<std::size_t>> succ;
  std::vector<std::vector<std::size_t>> pred;

  std::size_t size() const { return ids.size(); }
  std::size_t at(OpId id) const {
    auto it = index.find(id);
    if (it == index.end()) throw std::out_of_range("unknown op id " + std::to_string(id));
    return it->second;
  }
};

inline DepGraph build_dependencies(const GraphProgram& g) {
  DepGraph d;
  d.ids.reserve(g.ops.size());
  for (std::size_t i = 0; i < g.ops.size(); ++i) {
    d.ids.push_back(g.ops[i].id);
    d.index.emplace(g.ops[i].id, i);  // first occurrence wins on duplicates
  }
  d.succ.assign(g.ops.size(), {});
  d.pred.assign(g.ops.size(), {});

  std::unordered_map<TensorId, std::vector<std::size_t>> producers;
  std::unordered_map<TensorId, std::vector<std::size_t>> touchers;
  for (std::size_t i = 0; i < g.ops.size(); ++i) {
    const auto& op = g.ops[i];
    if (op.kind == OpKind::compute)
      for (const auto& t : op.outputs) producers[t].push_back(i);
    for (const auto& t : op.touched()) touchers[t].push_back(i);
  }

  auto add = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    d.succ[a].push_back(b);
    d.pred[b].push_back(a);
  };

  for (const auto& [t, prods] : producers)
    for (auto p : prods)
      for (auto c : touchers[t]) add(p, c);

  // Write-after-read on shared storage: readers of the base version must run
  // before the op that overwrites it with the alias.
  for (const auto& t : g.tensors) {
    if (!t.alias_of) continue;
    auto pit = producers.find(t.id);
    if (pit == producers.end()) continue;
    for (auto w : pit->second)
      for (auto r : touchers[*t.alias_of])
        if (r != w && g.ops[r].kind == OpKind::compute) add(r, w);
  }

  for (const auto& [a, b] : g.control_edges) {
    auto ia = d.index.find(a), ib = d.index.find(b);
    if (ia == d.index.end() || ib == d.index.end()) continue;
    if (ia->second == ib->second) {  // self loop, kept so cycle detection sees it
      d.succ[ia->second].push_back(ia->second);
      d.pred[ia->second].push_back(ia->second);
      continue;
    }
    add(ia->second, ib->second);
  }

  for (auto* lists : {&d.succ, &d.pred})
    for (auto& l : *lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  return d;
}

namespace detail {

// Tarjan SCC; returns the components that contain a cycle.
inline std::vector<std::vector<std::size_t>> cyclic_components(const DepGraph& d) {
  const std::size_t n = d.size();
  std::vector<int> idx(n, -1), low(n, 0);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  int counter = 0;

  // Iterative to stay safe on long chains.
  struct Frame { std::size_t v; std::size_t next; };
  for (std::size_t root = 0; root < n; ++root) {
    if (idx[root] != -1) continue;
    std::vector<Frame> frames{{root, 0}};
    idx[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!frames.empty()) {
      auto& f = frames.back();
      if (f.next < d.succ[f.v].size()) {
        std::size_t w = d.succ[f.v][f.next++];
        if (idx[w] == -1) {
          idx[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          frames.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], idx[w]);
        }
        continue;
      }
      std::size_t v = f.v;
      frames.pop_back();
      if (!frames.empty()) low[frames.back().v] = std::min(low[frames.back().v], low[v]);
      if (low[v] != idx[v]) continue;
      std::vector<std::size_t> comp;
      std::size_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = 0;
        comp.push_back(w);
      } while (w != v);
      bool self_loop = std::find(d.succ[v].begin(), d.succ[v].end(), v) != d.succ[v].end();
      if (comp.size() > 1 || self_loop) out.push_back(std::move(comp));
    }
  }
  return out;
}

}  // namespace detail

/// Structural checks. Violations are returned as data; an empty report means
/// the graph is well-formed.
inline ValidationReport validate(const GraphProgram& g) {
  ValidationReport report;
  auto add = [&](ViolationKind k, std::string msg, std::vector<OpId> ops = {}, TensorId t = {}) {
    report.push_back({k, std::move(msg), std::move(ops), std::move(t)});
  };

  std::unordered_map<TensorId, const TensorDecl*> tensors;
  for (const auto& t : g.tensors) {
    if (!tensors.emplace(t.id, &t).second)
      add(ViolationKind::duplicate_id, "duplicate tensor id '" + t.id + "'", {}, t.id);
    if (t.bytes == 0) add(ViolationKind::malformed, "tensor '" + t.id + "' has zero bytes", {}, t.id);
    if (t.pinned && t.initial_tier != Tier::device)
      add(ViolationKind::malformed, "pinned tensor '" + t.id + "' must start on device", {}, t.id);
  }
  for (const auto& t : g.tensors) {
    if (!t.alias_of) continue;
    auto it = tensors.find(*t.alias_of);
    if (it == tensors.end()) {
      add(ViolationKind::dangling_reference,
          "tensor '" + t.id + "' aliases unknown tensor '" + *t.alias_of + "'", {}, t.id);
    } else if (it->second->bytes != t.bytes || *t.alias_of == t.id) {
      add(ViolationKind::malformed, "alias '" + t.id + "' must differ from and match the size of '" +
                                        *t.alias_of + "'", {}, t.id);
    }
  }

  for (const auto& t : g.tensors) {
    if (!t.alias_of) continue;
    TensorId cur = t.id;
    std::set<TensorId> seen;
    while (tensors.count(cur) && tensors.at(cur)->alias_of && seen.insert(cur).second)
      cur = *tensors.at(cur)->alias_of;
    if (seen.count(cur) && cur == t.id)
      add(ViolationKind::malformed, "alias chain through '" + t.id + "' is cyclic", {}, t.id);
  }

  std::set<OpId> op_ids;
  std::unordered_map<TensorId, std::vector<OpId>> producers;
  for (const auto& op : g.ops) {
    if (!op_ids.insert(op.id).second)
      add(ViolationKind::duplicate_id, "duplicate op id " + std::to_string(op.id), {op.id});
    if (op.is_cache()) {
      if (!op.inputs.empty() || !op.outputs.empty() || op.cost_us != 0)
        add(ViolationKind::malformed,
            "cache op " + std::to_string(op.id) + " must reference exactly one tensor and no outputs",
            {op.id});
      if (!tensors.count(op.tensor))
        add(ViolationKind::dangling_reference,
            "op " + std::to_string(op.id) + " references unknown tensor '" + op.tensor + "'", {op.id},
            op.tensor);
    } else {
      if (op.cost_us < 0)
        add(ViolationKind::malformed, "op " + std::to_string(op.id) + " has negative cost", {op.id});
      if (!op.tensor.empty())
        add(ViolationKind::malformed, "compute op " + std::to_string(op.id) + " carries a cache tensor",
            {op.id});
      for (const auto* list : {&op.inputs, &op.outputs})
        for (const auto& t : *list)
          if (!tensors.count(t))
            add(ViolationKind::dangling_reference,
                "op " + std::to_string(op.id) + " references unknown tensor '" + t + "'", {op.id}, t);
      for (const auto& t : op.outputs) producers[t].push_back(op.id);
    }
  }
  for (const auto& t : g.tensors) {
    auto it = producers.find(t.id);
    if (it != producers.end() && it->second.size() > 1)
      add(ViolationKind::multi_producer, "tensor '" + t.id + "' has " +
          std::to_string(it->second.size()) + " producers", it->second, t.id);
  }
  for (const auto& [a, b] : g.control_edges)
    if (!op_ids.count(a) || !op_ids.count(b))
      add(ViolationKind::dangling_reference, "control edge (" + std::to_string(a) + ", " +
                                                 std::to_string(b) + ") references an unknown op",
          {a, b});

  auto deps = build_dependencies(g);
  for (auto& comp : detail::cyclic_components(deps)) {
    std::vector<OpId> ids;
    for (auto i : comp) ids.push_back(deps.ids[i]);
    std::sort(ids.begin(), ids.end());
    std::ostringstream msg;
    msg << "dependency cycle through ops";
    for (auto id : ids) msg << ' ' << id;
    add(ViolationKind::cycle, msg.str(), std::move(ids));
  }
  return report;
}

inline std::string describe(const ValidationReport& r) {
  std::ostringstream os;
  for (const auto& v : r) os << to_string(v.kind) << ": " << v.message << '\n';
  return os.str();
}

inline Schedule make_schedule(const GraphProgram& g, std::vector<OpId> order) {
  Schedule s;
  s.order = std::move(order);
  for (const auto& op : g.ops) s.stream_of[op.id] = stream_for(op.kind);
  return s;
}

/// Deterministic Kahn ordering: among ready ops the smallest id goes first.
inline Schedule topo_order(const GraphProgram& g) {
  if (auto r = validate(g); !r.empty())
    throw std::invalid_argument("topo_order on invalid graph:\n" + describe(r));
  auto d = build_dependencies(g);
  std::vector<std::size_t> indeg(d.size());
  using Item = std::pair<OpId, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> ready;
  for (std::size_t i = 0; i < d.size(); ++i) {
    indeg[i] = d.pred[i].size();
    if (indeg[i] == 0) ready.emplace(d.ids[i], i);
  }
  std::vector<OpId> order;
  order.reserve(d.size());
  while (!ready.empty()) {
    auto [id, i] = ready.top();
    ready.pop();
    order.push_back(id);
    for (auto s : d.succ[i])
      if (--indeg[s] == 0) ready.emplace(d.ids[s], s);
  }
  return make_schedule(g, std::move(order));
}

/// Ops that read `t` (compute inputs and Store), sorted by op id.
inline std::vector<OpId> consumers(const GraphProgram& g, const TensorId& t) {
  if (!g.find_tensor(t)) throw std::out_of_range("unknown tensor id '" + t + "'");
  std::vector<OpId> out;
  for (const auto& op : g.ops)
    if (op.reads(t)) out.push_back(op.id);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::optional<OpId> producer(const GraphProgram& g, const TensorId& t) {
  for (const auto& op : g.ops)
    if (op.kind == OpKind::compute &&
        std::find(op.outputs.begin(), op.outputs.end(), t) != op.outputs.end())
      return op.id;
  return std::nullopt;
}

/// Empty string when `order` is a permutation of g's ops with every
/// dependency edge pointing forward; otherwise a description of the problem.
inline std::string check_order(const GraphProgram& g, const std::vector<OpId>& order) {
  auto d = build_dependencies(g);
  if (order.size() != d.size()) return "order has " + std::to_string(order.size()) +
                                       " entries, graph has " + std::to_string(d.size()) + " ops";
  std::vector<std::int64_t> pos(d.size(), -1);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto it = d.index.find(order[k]);
    if (it == d.index.end()) return "order references unknown op " + std::to_string(order[k]);
    if (pos[it->second] != -1) return "op " + std::to_string(order[k]) + " appears twice";
    pos[it->second] = static_cast<std::int64_t>(k);
  }
  for (std::size_t i = 0; i < d.size(); ++i)
    for (auto s : d.succ[i])
      if (pos[i] >= pos[s])
        return "edge " + std::to_string(d.ids[i]) + " -> " + std::to_string(d.ids[s]) +
               " points backward";
  return {};
}

/// Maps every tensor to the root of its alias chain; the root owns the
/// allocation shared by all versions.
inline std::unordered_map<TensorId, TensorId> alias_roots(const GraphProgram& g) {
  std::unordered_map<TensorId, const TensorDecl*> by_id;
  for (const auto& t : g.tensors) by_id.emplace(t.id, &t);
  std::unordered_map<TensorId, TensorId> out;
  for (const auto& t : g.tensors) {
    TensorId cur = t.id;
    for (std::size_t guard = 0;; ++guard) {
      if (guard > g.tensors.size()) throw std::invalid_argument("alias cycle through '" + t.id + "'");
      auto it = by_id.find(cur);
      if (it == by_id.end() || !it->second->alias_of) break;
      cur = *it->second->alias_of;
    }
    out.emplace(t.id, cur);
  }
  return out;
}

}  // namespace tierplan
