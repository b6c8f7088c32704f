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
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tierplan/cache_insertion.hpp"
#include "tierplan/graph_ir.hpp"
#include "tierplan/machine.hpp"
#include "tierplan/machine_sim.hpp"
#include "tierplan/memory_analysis.hpp"

namespace tierplan {

// ---------------------------------------------------------------------------
// Training graphs.

struct TrainSpec {
  std::int64_t layers = 1;
  Bytes bytes_per_activation = 0;
  Bytes bytes_per_weight_per_layer = 0;
  Bytes bytes_per_optimizer_state_per_layer = 0;
  Bytes bytes_per_gradient = 0;   // 0: same as an activation
  Bytes bytes_per_workspace = 0;  // 0: no per-op scratch tensors
  Micros fwd_cost_us = 0;
  Micros bwd_cost_us = 0;
  Micros update_cost_us = 0;
  Tier weight_tier = Tier::device;
  Tier optimizer_state_tier = Tier::device;
  bool pin_weights = false;
  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

inline void check_spec(const TrainSpec& s) {
  if (s.layers < 1) throw std::invalid_argument("train spec: layers must be >= 1");
  if (s.fwd_cost_us < 0 || s.bwd_cost_us < 0 || s.update_cost_us < 0)
    throw std::invalid_argument("train spec: costs must be >= 0");
  if (s.bytes_per_activation == 0 || s.bytes_per_optimizer_state_per_layer == 0)
    throw std::invalid_argument("train spec: activation and optimizer-state sizes must be > 0");
  if (s.pin_weights && s.weight_tier == Tier::remote)
    throw std::invalid_argument("train spec: pinned weights must start on device");
}

/// Op ids: fwd_i = i, bwd_i = 2L-1-i (so bwd_{L-1} comes first), update_i =
/// 2L+i. fwd_i reads act_{i-1} and w_i and makes act_i; bwd_i reads act_i,
/// grad_{i+1} and w_i and makes grad_i; update_i reads grad_i and opt_i and
/// writes opt_i' in place.
inline GraphProgram gen_transformer_train(const TrainSpec& spec) {
  check_spec(spec);
  const auto L = spec.layers;
  const Bytes grad_bytes = spec.bytes_per_gradient ? spec.bytes_per_gradient : spec.bytes_per_activation;
  auto id = [](const char* p, std::int64_t i) { return std::string(p) + std::to_string(i); };

  GraphProgram g;
  auto add_tensor = [&](TensorId tid, Bytes b, TensorKind k, Tier tier = Tier::device, bool pinned = false) {
    TensorDecl t;
    t.id = std::move(tid);
    t.bytes = b;
    t.kind = k;
    t.initial_tier = tier;
    t.pinned = pinned;
    g.tensors.push_back(std::move(t));
  };
  for (std::int64_t i = 0; i < L; ++i) {
    if (spec.bytes_per_weight_per_layer)
      add_tensor(id("w", i), spec.bytes_per_weight_per_layer, TensorKind::weight, spec.weight_tier,
                 spec.pin_weights);
    add_tensor(id("act", i), spec.bytes_per_activation, TensorKind::activation);
    add_tensor(id("grad", i), grad_bytes, TensorKind::gradient);
    add_tensor(id("opt", i), spec.bytes_per_optimizer_state_per_layer, TensorKind::optimizer_state,
               spec.optimizer_state_tier);
    add_tensor(id("opt", i) + "_next", spec.bytes_per_optimizer_state_per_layer, TensorKind::optimizer_state);
    g.tensors.back().alias_of = id("opt", i);
    if (spec.bytes_per_workspace) {
      add_tensor(id("ws_fwd", i), spec.bytes_per_workspace, TensorKind::workspace);
      add_tensor(id("ws_bwd", i), spec.bytes_per_workspace, TensorKind::workspace);
    }
  }
  auto op = [&](OpId oid, std::string name, Micros cost, std::vector<TensorId> in, std::vector<TensorId> out) {
    OpNode o;
    o.id = oid;
    o.name = std::move(name);
    o.cost_us = cost;
    o.inputs = std::move(in);
    o.outputs = std::move(out);
    g.ops.push_back(std::move(o));
  };
  const bool weights = spec.bytes_per_weight_per_layer != 0;
  for (std::int64_t i = 0; i < L; ++i) {
    std::vector<TensorId> in, out{id("act", i)};
    if (i > 0) in.push_back(id("act", i - 1));
    if (weights) in.push_back(id("w", i));
    if (spec.bytes_per_workspace) out.push_back(id("ws_fwd", i));
    op(i, id("fwd", i), spec.fwd_cost_us, in, out);
  }
  for (std::int64_t i = L - 1; i >= 0; --i) {
    std::vector<TensorId> in{id("act", i)}, out{id("grad", i)};
    if (i + 1 < L) in.push_back(id("grad", i + 1));
    if (weights) in.push_back(id("w", i));
    if (spec.bytes_per_workspace) out.push_back(id("ws_bwd", i));
    op(2 * L - 1 - i, id("bwd", i), spec.bwd_cost_us, in, out);
  }
  for (std::int64_t i = 0; i < L; ++i)
    op(2 * L + i, id("update", i), spec.update_cost_us, {id("grad", i), id("opt", i)}, {id("opt", i) + "_next"});
  return g;
}

// ---------------------------------------------------------------------------
// Autoregressive decode graphs.

struct DecodeSpec {
  std::int64_t layers = 1;
  Bytes kv_bytes_per_layer_per_token = 0;
  Bytes weight_bytes_per_layer = 0;
  std::int64_t prefill_tokens = 0;
  std::int64_t decode_steps = 1;
  Micros prefill_cost_us_per_layer = 0;
  Micros decode_cost_us_per_layer = 0;
  Tier weight_tier = Tier::device;
  // Activations flowing between layers: prefill hidden states scale with
  // the prompt, decode hidden states are a fixed small size.
  Bytes prefill_hidden_bytes_per_token = 0;
  Bytes decode_hidden_bytes = 4096;
  // Scratch per prefill op, freed at its end. Causal attention over the
  // prompt so far: chunk b's buffer covers the first b+1 chunks.
  Bytes prefill_workspace_bytes_per_token = 0;
  // Paged KV: each layer's cache is split into this many blocks, prefilled
  // chunk by chunk and read block by block.
  std::int64_t kv_blocks_per_layer = 1;
  // Optional per-step ops around the layer stack: embed before, head after.
  Micros embed_cost_us = 0;
  Micros head_cost_us = 0;
  Bytes head_weight_bytes = 0;
  Bytes logits_bytes = 0;
  friend bool operator==(const DecodeSpec&, const DecodeSpec&) = default;
};

inline void check_spec(const DecodeSpec& s) {
  if (s.layers < 1) throw std::invalid_argument("decode spec: layers must be >= 1");
  if (s.decode_steps < 0 || s.prefill_tokens < 1)
    throw std::invalid_argument("decode spec: prefill_tokens must be >= 1 and decode_steps >= 0");
  if (s.kv_blocks_per_layer < 1 || s.kv_blocks_per_layer > s.prefill_tokens)
    throw std::invalid_argument("decode spec: kv_blocks_per_layer must be in [1, prefill_tokens]");
  if (s.kv_bytes_per_layer_per_token == 0) throw std::invalid_argument("decode spec: KV size must be > 0");
  if (s.prefill_cost_us_per_layer < 0 || s.decode_cost_us_per_layer < 0 || s.embed_cost_us < 0 ||
      s.head_cost_us < 0)
    throw std::invalid_argument("decode spec: costs must be >= 0");
}

inline Bytes kv_bytes_per_layer(const DecodeSpec& s) {
  return s.kv_bytes_per_layer_per_token * static_cast<Bytes>(s.prefill_tokens);
}

/// KV tensors have their final size from prefill on. Per step t: an optional
/// embed op, attention ops attn_t_l reading kv_l and w_l, and an optional
/// head op producing the logits (a transient) and the next step's token.
inline GraphProgram gen_llm_decode(const DecodeSpec& spec) {
  check_spec(spec);
  const auto L = spec.layers;
  auto sfx = [](std::int64_t a) { return std::to_string(a); };

  GraphProgram g;
  auto add_tensor = [&](TensorId tid, Bytes b, TensorKind k, Tier tier = Tier::device) {
    TensorDecl t;
    t.id = std::move(tid);
    t.bytes = b;
    t.kind = k;
    t.initial_tier = tier;
    g.tensors.push_back(std::move(t));
    return g.tensors.back().id;
  };
  OpId next_id = 0;
  auto op = [&](std::string name, Micros cost, std::vector<TensorId> in, std::vector<TensorId> out) {
    OpNode o;
    o.id = next_id++;
    o.name = std::move(name);
    o.cost_us = cost;
    o.inputs = std::move(in);
    o.outputs = std::move(out);
    g.ops.push_back(std::move(o));
  };

  const std::int64_t B = spec.kv_blocks_per_layer;
  // Block b of a layer covers an even share of the prompt; the first
  // tokens % B blocks take one extra token. Costs split the same way.
  auto share = [B](std::int64_t total, std::int64_t b) { return total / B + (b < total % B ? 1 : 0); };
  std::vector<TensorId> w(L);
  std::vector<std::vector<TensorId>> kv(L);
  for (std::int64_t l = 0; l < L; ++l) {
    if (spec.weight_bytes_per_layer) w[l] = add_tensor("w" + sfx(l), spec.weight_bytes_per_layer, TensorKind::weight,
                                                       spec.weight_tier);
    for (std::int64_t b = 0; b < B; ++b)
      kv[l].push_back(add_tensor(B == 1 ? "kv" + sfx(l) : "kv" + sfx(l) + "_" + sfx(b),
                                 spec.kv_bytes_per_layer_per_token *
                                     static_cast<Bytes>(share(spec.prefill_tokens, b)),
                                 TensorKind::kv_block));
  }
  TensorId head_w;
  if (spec.head_weight_bytes)
    head_w = add_tensor("w_head", spec.head_weight_bytes, TensorKind::weight, spec.weight_tier);

  // Chunked prefill: one op per KV block, chained through the hidden state.
  TensorId carry;  // activation flowing into the next op
  for (std::int64_t l = 0; l < L; ++l) {
    Bytes prefix = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto chunk = static_cast<Bytes>(share(spec.prefill_tokens, b));
      prefix += chunk;
      const auto tag = B == 1 ? sfx(l) : sfx(l) + "_" + sfx(b);
      // Outputs are allocated in order: scratch, KV block, hidden state.
      std::vector<TensorId> in, out;
      if (!carry.empty()) in.push_back(carry);
      if (!w[l].empty()) in.push_back(w[l]);
      if (spec.prefill_workspace_bytes_per_token)
        out.push_back(add_tensor("ws_p" + tag, spec.prefill_workspace_bytes_per_token * prefix,
                                 TensorKind::workspace));
      out.push_back(kv[l][b]);
      carry = add_tensor("h_p" + tag,
                         std::max<Bytes>(spec.prefill_hidden_bytes_per_token * chunk, spec.decode_hidden_bytes),
                         TensorKind::activation);
      out.push_back(carry);
      op("prefill" + tag, share(spec.prefill_cost_us_per_layer, b), in, out);
    }
  }
  const Bytes hb = std::max<Bytes>(spec.decode_hidden_bytes, 1);
  for (std::int64_t t = 0; t < spec.decode_steps; ++t) {
    const auto st = sfx(t);
    if (spec.embed_cost_us > 0) {
      auto x = add_tensor("x" + st, hb, TensorKind::activation);
      op("embed" + st, spec.embed_cost_us, {carry}, {x});
      carry = x;
    }
    // Attention walks the blocks of each layer, carrying a partial state.
    for (std::int64_t l = 0; l < L; ++l) {
      for (std::int64_t b = 0; b < B; ++b) {
        const auto tag = st + "_" + (B == 1 ? sfx(l) : sfx(l) + "_" + sfx(b));
        std::vector<TensorId> in{carry, kv[l][b]};
        if (!w[l].empty()) in.push_back(w[l]);
        carry = add_tensor("h" + tag, hb, TensorKind::activation);
        op("attn" + tag, share(spec.decode_cost_us_per_layer, b), in, {carry});
      }
    }
    if (spec.head_cost_us > 0 || spec.logits_bytes > 0 || !head_w.empty()) {
      std::vector<TensorId> in{carry};
      if (!head_w.empty()) in.push_back(head_w);
      auto tok = add_tensor("tok" + st, hb, TensorKind::activation);
      std::vector<TensorId> out{tok};
      if (spec.logits_bytes) out.push_back(add_tensor("logits" + st, spec.logits_bytes, TensorKind::workspace));
      op("head" + st, spec.head_cost_us, in, out);
      carry = tok;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Small fixed graphs.

/// Six ops: a chain of five 1 ms compute ops c0..c4 and one Prefetch (id 5)
/// of a remote 256 MiB weight read only by c4. With toy_prefetch_machine()
/// the load takes 1.5 ms, so the Prefetch must sit at least two ops ahead of
/// c4 to be hidden.
inline GraphProgram toy_prefetch_graph() {
  GraphProgram g;
  for (int i = 0; i < 4; ++i) {
    TensorDecl t;
    t.id = "a" + std::to_string(i);
    t.bytes = 1ULL << 20;
    g.tensors.push_back(t);
  }
  TensorDecl w;
  w.id = "w";
  w.bytes = 256ULL << 20;
  w.kind = TensorKind::weight;
  w.initial_tier = Tier::remote;
  g.tensors.push_back(w);
  for (OpId i = 0; i < 5; ++i) {
    OpNode o;
    o.id = i;
    o.name = "c" + std::to_string(i);
    o.cost_us = 1000;
    if (i > 0) o.inputs.push_back("a" + std::to_string(i - 1));
    if (i < 4) o.outputs.push_back("a" + std::to_string(i));
    if (i == 4) o.inputs.push_back("w");
    g.ops.push_back(o);
  }
  OpNode p;
  p.id = 5;
  p.kind = OpKind::prefetch;
  p.tensor = "w";
  g.ops.push_back(p);
  g.control_edges.emplace_back(5, 4);
  return g;
}

inline MachineModel toy_prefetch_machine() {
  MachineModel m;
  m.transfer_fixed_latency_us = 0;
  m.r2d_bandwidth_bytes_per_us = static_cast<double>(256ULL << 20) / 1500.0;
  m.d2r_bandwidth_bytes_per_us = m.r2d_bandwidth_bytes_per_us;
  return m;
}

// ---------------------------------------------------------------------------
// Random DAGs with cache ops (the only stochastic path; seeded).

struct RandomDagSpec {
  std::int64_t max_nodes = 50;
  std::int64_t max_cache_ops = 12;
  std::int64_t min_compute_ops = 4;
  Micros min_cost_us = 10;
  Micros max_cost_us = 5000;
  Bytes min_bytes = 1ULL << 20;
  Bytes max_bytes = 64ULL << 20;
  double remote_input_probability = 0.3;
  friend bool operator==(const RandomDagSpec&, const RandomDagSpec&) = default;
};

/// A random compute DAG plus offload entries on randomly chosen idle
/// windows, materialized with insert_cache_ops. The node count, including
/// cache ops, never exceeds max_nodes.
inline GraphProgram gen_random_dag(const RandomDagSpec& spec, std::uint64_t seed) {
  if (spec.max_nodes < spec.min_compute_ops || spec.min_compute_ops < 1 || spec.max_cache_ops < 0)
    throw std::invalid_argument("random dag spec: inconsistent node limits");
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  const std::int64_t cache_budget = std::min(spec.max_cache_ops, spec.max_nodes - spec.min_compute_ops);
  const std::int64_t n_compute = uniform(spec.min_compute_ops, spec.max_nodes - cache_budget);

  GraphProgram g;
  std::vector<TensorId> available;
  auto bytes = [&] { return static_cast<Bytes>(uniform(static_cast<std::int64_t>(spec.min_bytes),
                                                      static_cast<std::int64_t>(spec.max_bytes))); };
  const std::int64_t n_inputs = uniform(1, 3);
  for (std::int64_t i = 0; i < n_inputs; ++i) {
    TensorDecl t;
    t.id = "in" + std::to_string(i);
    t.bytes = bytes();
    t.kind = TensorKind::weight;
    t.initial_tier =
        std::bernoulli_distribution(spec.remote_input_probability)(rng) ? Tier::remote : Tier::device;
    g.tensors.push_back(t);
    available.push_back(t.id);
  }
  for (std::int64_t i = 0; i < n_compute; ++i) {
    OpNode o;
    o.id = i;
    o.cost_us = uniform(spec.min_cost_us, spec.max_cost_us);
    const auto fan = uniform(1, 3);
    for (std::int64_t j = 0; j < fan; ++j) {
      const auto& t = available[static_cast<std::size_t>(uniform(0, static_cast<std::int64_t>(available.size()) - 1))];
      if (std::find(o.inputs.begin(), o.inputs.end(), t) == o.inputs.end()) o.inputs.push_back(t);
    }
    TensorDecl out;
    out.id = "t" + std::to_string(i);
    out.bytes = bytes();
    g.tensors.push_back(out);
    o.outputs.push_back(out.id);
    g.ops.push_back(o);
    available.push_back(out.id);
  }

  // Entries: mandatory loads for remote inputs, then random idle windows.
  auto s = topo_order(g);
  auto lifetimes = compute_lifetimes(g, s);
  OffloadPlan plan;
  std::int64_t used = 0;
  for (const auto& t : g.tensors) {
    const auto& lt = lifetimes.at(t.id);
    if (t.initial_tier == Tier::remote && !lt.access_positions.empty()) {
      if (used + 1 > cache_budget) throw std::logic_error("random dag: cache budget below mandatory loads");
      plan.entries.push_back({t.id, -1, lt.access_positions.front()});
      used += 1;
    }
  }
  std::vector<std::pair<TensorId, std::pair<Pos, Pos>>> windows;
  for (const auto& t : g.tensors)
    for (const auto& w : lifetimes.at(t.id).idle_windows)
      if (!(t.initial_tier == Tier::remote && w.first == 0)) windows.emplace_back(t.id, w);
  std::shuffle(windows.begin(), windows.end(), rng);
  std::map<TensorId, int> taken;
  for (const auto& [tid, w] : windows) {
    if (taken[tid] || used + 3 > cache_budget) continue;
    if (!std::bernoulli_distribution(0.7)(rng)) continue;
    plan.entries.push_back({tid, w.first - 1, w.second + 1});
    taken[tid] = 1;
    used += 3;
  }
  return insert_cache_ops(g, s, plan);
}

// ---------------------------------------------------------------------------
// Reactive baseline.

/// Runtime-driven execution without lookahead: ops run in order on one
/// stream; a non-resident input is loaded synchronously just before its
/// consumer, and when space runs out the least recently used unpinned tensor
/// not needed by the current op is written back and dropped. Every transfer
/// pays the orchestration overhead and stalls compute.
inline SimReport run_reactive_baseline(const GraphProgram& g, const Schedule& s, const MachineModel& m) {
  check_machine(m);
  if (auto err = check_order(g, s.order); !err.empty())
    throw std::invalid_argument("reactive baseline: invalid schedule: " + err);
  for (const auto& op : g.ops)
    if (op.is_cache()) throw std::invalid_argument("reactive baseline: graph must not contain cache ops");

  SimReport report;
  detail::MemoryBook mem(g, m, report);
  const std::size_t groups = mem.group_count();

  std::vector<char> is_input(groups, 1);
  for (const auto& op : g.ops)
    for (const auto& t : op.outputs)
      if (mem.root(mem.group(t)) == t) is_input[mem.group(t)] = 0;

  std::unordered_map<OpId, const OpNode*> ops;
  for (const auto& op : g.ops) ops.emplace(op.id, &op);
  auto groups_of = [&](const OpNode& op) {
    std::vector<std::size_t> out;
    for (const auto& t : op.touched()) {
      auto gi = mem.group(t);
      if (std::find(out.begin(), out.end(), gi) == out.end()) out.push_back(gi);
    }
    return out;
  };
  std::vector<std::int64_t> remaining(groups, 0);
  for (auto id : s.order)
    for (auto gi : groups_of(*ops.at(id))) remaining[gi] += 1;

  for (std::size_t gi = 0; gi < groups; ++gi)
    if (is_input[gi] && remaining[gi] > 0 && mem.initial_tier(gi) == Tier::remote &&
        !mem.reserve_remote(gi, 0, std::nullopt)) {
      detail::finish_report(report);
      return report;
    }
  for (std::size_t gi = 0; gi < groups; ++gi) {
    if (!is_input[gi] || remaining[gi] == 0 || mem.initial_tier(gi) != Tier::device) continue;
    // Inputs that do not fit stay in the remote pool and are loaded on use.
    if (mem.allocator().free_bytes() < mem.allocator().aligned(mem.bytes(gi))) {
      if (!mem.reserve_remote(gi, 0, std::nullopt)) {
        detail::finish_report(report);
        return report;
      }
      continue;
    }
    mem.allocate(gi, 0, std::nullopt);
  }

  std::vector<std::int64_t> last_use(groups, -1);
  Micros now = 0;
  auto transfer = [&](std::size_t gi, Stream st, Channel ch, const char* what) {
    const Micros d = m.reactive_orchestration_overhead_us + estimate_transfer_us(mem.bytes(gi), m, ch);
    report.timeline.push_back({std::nullopt, std::string(what) + ":" + mem.root(gi), st, now, now + d});
    report.exposed_comm_us += d;
    now += d;
  };
  // Evicts until `need` bytes are free in total; false on OOM (recorded).
  auto make_room = [&](Bytes need, const std::vector<std::size_t>& keep, OpId op) {
    while (mem.allocator().free_bytes() < need) {
      std::optional<std::size_t> victim;
      for (std::size_t gi = 0; gi < groups; ++gi) {
        if (!mem.resident(gi) || mem.pinned(gi) || std::find(keep.begin(), keep.end(), gi) != keep.end()) continue;
        if (!victim || last_use[gi] < last_use[*victim]) victim = gi;
      }
      if (!victim) return true;  // let the allocation record the OOM
      if (!mem.has_remote_copy(*victim)) {
        if (!mem.reserve_remote(*victim, now, op)) return false;
        transfer(*victim, Stream::dma_out, Channel::d2r, "evict");
      }
      mem.release(*victim, now);
    }
    return true;
  };
  auto bring_in = [&](std::size_t gi, const std::vector<std::size_t>& keep, OpId op, Micros& stall) {
    if (!make_room(mem.allocator().aligned(mem.bytes(gi)), keep, op)) return false;
    auto st = mem.allocate(gi, now + stall, op);
    if (!st) return false;
    stall += *st;
    return true;
  };

  for (std::size_t k = 0; k < s.order.size(); ++k) {
    const auto& op = *ops.at(s.order[k]);
    const auto needed = groups_of(op);
    // Reloads.
    for (const auto& t : op.inputs) {
      auto gi = mem.group(t);
      if (mem.resident(gi)) continue;
      if (!mem.has_remote_copy(gi)) throw std::logic_error("reactive baseline: '" + t + "' has no copy anywhere");
      Micros stall = 0;
      if (!bring_in(gi, needed, op.id, stall)) {
        detail::finish_report(report);
        return report;
      }
      if (stall > 0) {
        report.timeline.push_back({std::nullopt, "defrag", Stream::compute, now, now + stall});
        now += stall;
      }
      transfer(gi, Stream::dma_in, Channel::r2d, "reload");
    }
    // Outputs, allocated exactly as the planned simulator does.
    Micros stall = 0;
    for (const auto& t : op.outputs) {
      auto gi = mem.group(t);
      if (mem.root(gi) != t) {
        if (!mem.resident(gi)) throw std::logic_error("reactive baseline: in-place target '" + t + "' not resident");
        continue;
      }
      if (mem.resident(gi)) continue;
      if (!bring_in(gi, needed, op.id, stall)) {
        detail::finish_report(report);
        return report;
      }
    }
    if (stall > 0) report.timeline.push_back({std::nullopt, "defrag", Stream::compute, now, now + stall});
    const Micros begin = now + stall;
    report.timeline.push_back({op.id, op.label(), Stream::compute, begin, begin + op.cost_us});
    report.compute_busy_us += op.cost_us;
    now = begin + op.cost_us;
    for (auto gi : needed) {
      last_use[gi] = static_cast<std::int64_t>(k);
      if (--remaining[gi] == 0) {
        if (mem.resident(gi)) mem.release(gi, now);
        mem.drop_remote(gi);
      }
    }
  }
  mem.final_check();
  detail::finish_report(report);
  report.overlapped_comm_us = 0;
  return report;
}

}  // namespace tierplan
