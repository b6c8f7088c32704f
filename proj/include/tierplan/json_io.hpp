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

#include <json.hpp>

#include <initializer_list>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "tierplan/presets.hpp"

// Strict JSON mapping for graphs, machines, workload specs, plans and
// reports. Readers reject unknown keys and wrong types; writers emit keys in
// a fixed order so output is byte-stable.

namespace tierplan {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw SchemaError(where + ": unknown key '" + k + "'");
  }
}

inline const json& need(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(where + ": missing key '" + key + "'");
  return *it;
}

template <class T>
T as(const json& v, const std::string& where) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw SchemaError(where + ": expected a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw SchemaError(where + ": expected a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw SchemaError(where + ": expected a number");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw SchemaError(where + ": expected a non-negative integer");
  } else {
    if (!v.is_number_integer()) throw SchemaError(where + ": expected an integer");
  }
  return v.get<T>();
}

template <class T>
void opt(const json& j, const char* key, T& out, const std::string& where) {
  if (auto it = j.find(key); it != j.end()) out = as<T>(*it, where + "." + key);
}

template <class E, class Parse>
E parse_enum(const json& v, Parse parse, const std::string& where) {
  try {
    return parse(as<std::string>(v, where));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

inline std::vector<TensorId> id_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<TensorId> out;
  for (const auto& x : v) out.push_back(as<std::string>(x, where));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph

inline ordered_json to_json(const GraphProgram& g) {
  ordered_json tensors = ordered_json::array();
  for (const auto& t : g.tensors) {
    ordered_json j = {{"id", t.id},
                      {"bytes", t.bytes},
                      {"kind", std::string(to_string(t.kind))},
                      {"initial_tier", std::string(to_string(t.initial_tier))},
                      {"pinned", t.pinned}};
    if (t.alias_of) j["alias_of"] = *t.alias_of;
    tensors.push_back(std::move(j));
  }
  ordered_json ops = ordered_json::array();
  for (const auto& o : g.ops) {
    ordered_json j = {{"id", o.id}, {"kind", std::string(to_string(o.kind))}};
    if (o.is_cache()) {
      j["tensor"] = o.tensor;
    } else {
      j["cost_us"] = o.cost_us;
      j["inputs"] = o.inputs;
      j["outputs"] = o.outputs;
    }
    if (!o.name.empty()) j["name"] = o.name;
    ops.push_back(std::move(j));
  }
  ordered_json edges = ordered_json::array();
  for (const auto& [a, b] : g.control_edges) edges.push_back({a, b});
  return {{"tensors", tensors}, {"ops", ops}, {"control_edges", edges}};
}

/// Structural parse only; call validate() for graph-level rules.
inline GraphProgram graph_from_json(const json& j) {
  using namespace detail;
  only_keys(j, {"tensors", "ops", "control_edges"}, "graph");
  GraphProgram g;
  const auto& ts = need(j, "tensors", "graph");
  if (!ts.is_array()) throw SchemaError("graph.tensors: expected an array");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& t = ts[i];
    const std::string w = "graph.tensors[" + std::to_string(i) + "]";
    only_keys(t, {"id", "bytes", "kind", "initial_tier", "pinned", "alias_of"}, w);
    TensorDecl d;
    d.id = as<std::string>(need(t, "id", w), w + ".id");
    d.bytes = as<Bytes>(need(t, "bytes", w), w + ".bytes");
    d.kind = parse_enum<TensorKind>(need(t, "kind", w), parse_tensor_kind, w + ".kind");
    if (t.contains("initial_tier"))
      d.initial_tier = parse_enum<Tier>(t["initial_tier"], parse_tier, w + ".initial_tier");
    opt(t, "pinned", d.pinned, w);
    if (t.contains("alias_of")) d.alias_of = as<std::string>(t["alias_of"], w + ".alias_of");
    g.tensors.push_back(std::move(d));
  }
  const auto& os = need(j, "ops", "graph");
  if (!os.is_array()) throw SchemaError("graph.ops: expected an array");
  for (std::size_t i = 0; i < os.size(); ++i) {
    const auto& o = os[i];
    const std::string w = "graph.ops[" + std::to_string(i) + "]";
    OpNode n;
    n.kind = parse_enum<OpKind>(need(o, "kind", w), parse_op_kind, w + ".kind");
    if (n.is_cache()) {
      only_keys(o, {"id", "kind", "tensor", "name"}, w);
      n.tensor = as<std::string>(need(o, "tensor", w), w + ".tensor");
    } else {
      only_keys(o, {"id", "kind", "cost_us", "inputs", "outputs", "name"}, w);
      n.cost_us = as<Micros>(need(o, "cost_us", w), w + ".cost_us");
      if (n.cost_us < 0) throw SchemaError(w + ".cost_us: must be >= 0");
      if (o.contains("inputs")) n.inputs = id_list(o["inputs"], w + ".inputs");
      if (o.contains("outputs")) n.outputs = id_list(o["outputs"], w + ".outputs");
    }
    n.id = as<OpId>(need(o, "id", w), w + ".id");
    opt(o, "name", n.name, w);
    g.ops.push_back(std::move(n));
  }
  if (j.contains("control_edges")) {
    const auto& es = j["control_edges"];
    if (!es.is_array()) throw SchemaError("graph.control_edges: expected an array");
    for (const auto& e : es) {
      if (!e.is_array() || e.size() != 2) throw SchemaError("graph.control_edges: expected [before, after] pairs");
      g.control_edges.emplace_back(as<OpId>(e[0], "graph.control_edges"), as<OpId>(e[1], "graph.control_edges"));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Machine

inline ordered_json to_json(const MachineModel& m) {
  return {{"device_capacity_bytes", m.device_capacity_bytes},
          {"remote_capacity_bytes", m.remote_capacity_bytes},
          {"r2d_bandwidth_bytes_per_us", m.r2d_bandwidth_bytes_per_us},
          {"d2r_bandwidth_bytes_per_us", m.d2r_bandwidth_bytes_per_us},
          {"h2r_bandwidth_bytes_per_us", m.h2r_bandwidth_bytes_per_us},
          {"r2h_bandwidth_bytes_per_us", m.r2h_bandwidth_bytes_per_us},
          {"transfer_fixed_latency_us", m.transfer_fixed_latency_us},
          {"compaction_bandwidth_bytes_per_us", m.compaction_bandwidth_bytes_per_us},
          {"reactive_orchestration_overhead_us", m.reactive_orchestration_overhead_us},
          {"allocator_alignment_bytes", m.allocator_alignment_bytes}};
}

/// Missing keys keep their defaults.
inline MachineModel machine_from_json(const json& j, MachineModel m = {}) {
  using namespace detail;
  const std::string w = "machine";
  only_keys(j,
            {"device_capacity_bytes", "remote_capacity_bytes", "r2d_bandwidth_bytes_per_us",
             "d2r_bandwidth_bytes_per_us", "h2r_bandwidth_bytes_per_us", "r2h_bandwidth_bytes_per_us",
             "transfer_fixed_latency_us", "compaction_bandwidth_bytes_per_us", "reactive_orchestration_overhead_us",
             "allocator_alignment_bytes"},
            w);
  opt(j, "device_capacity_bytes", m.device_capacity_bytes, w);
  opt(j, "remote_capacity_bytes", m.remote_capacity_bytes, w);
  opt(j, "r2d_bandwidth_bytes_per_us", m.r2d_bandwidth_bytes_per_us, w);
  opt(j, "d2r_bandwidth_bytes_per_us", m.d2r_bandwidth_bytes_per_us, w);
  opt(j, "h2r_bandwidth_bytes_per_us", m.h2r_bandwidth_bytes_per_us, w);
  opt(j, "r2h_bandwidth_bytes_per_us", m.r2h_bandwidth_bytes_per_us, w);
  opt(j, "transfer_fixed_latency_us", m.transfer_fixed_latency_us, w);
  opt(j, "compaction_bandwidth_bytes_per_us", m.compaction_bandwidth_bytes_per_us, w);
  opt(j, "reactive_orchestration_overhead_us", m.reactive_orchestration_overhead_us, w);
  opt(j, "allocator_alignment_bytes", m.allocator_alignment_bytes, w);
  try {
    check_machine(m);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Workload specs. {"workload": "train" | "decode", ...fields}

inline ordered_json to_json(const TrainSpec& s) {
  return {{"workload", "train"},
          {"layers", s.layers},
          {"bytes_per_activation", s.bytes_per_activation},
          {"bytes_per_weight_per_layer", s.bytes_per_weight_per_layer},
          {"bytes_per_optimizer_state_per_layer", s.bytes_per_optimizer_state_per_layer},
          {"bytes_per_gradient", s.bytes_per_gradient},
          {"bytes_per_workspace", s.bytes_per_workspace},
          {"fwd_cost_us", s.fwd_cost_us},
          {"bwd_cost_us", s.bwd_cost_us},
          {"update_cost_us", s.update_cost_us},
          {"weight_tier", std::string(to_string(s.weight_tier))},
          {"optimizer_state_tier", std::string(to_string(s.optimizer_state_tier))},
          {"pin_weights", s.pin_weights}};
}

inline ordered_json to_json(const DecodeSpec& s) {
  return {{"workload", "decode"},
          {"layers", s.layers},
          {"kv_bytes_per_layer_per_token", s.kv_bytes_per_layer_per_token},
          {"weight_bytes_per_layer", s.weight_bytes_per_layer},
          {"prefill_tokens", s.prefill_tokens},
          {"decode_steps", s.decode_steps},
          {"prefill_cost_us_per_layer", s.prefill_cost_us_per_layer},
          {"decode_cost_us_per_layer", s.decode_cost_us_per_layer},
          {"weight_tier", std::string(to_string(s.weight_tier))},
          {"prefill_hidden_bytes_per_token", s.prefill_hidden_bytes_per_token},
          {"decode_hidden_bytes", s.decode_hidden_bytes},
          {"prefill_workspace_bytes_per_token", s.prefill_workspace_bytes_per_token},
          {"kv_blocks_per_layer", s.kv_blocks_per_layer},
          {"embed_cost_us", s.embed_cost_us},
          {"head_cost_us", s.head_cost_us},
          {"head_weight_bytes", s.head_weight_bytes},
          {"logits_bytes", s.logits_bytes}};
}

inline ordered_json to_json(const WorkloadSpec& w) {
  return std::visit([](const auto& s) { return to_json(s); }, w);
}

inline WorkloadSpec spec_from_json(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw SchemaError("spec: expected an object");
  const auto kind = as<std::string>(need(j, "workload", "spec"), "spec.workload");
  auto tier = [&](const char* key, Tier& out, const std::string& w) {
    if (j.contains(key)) out = parse_enum<Tier>(j[key], parse_tier, w + "." + key);
  };
  try {
    if (kind == "train") {
      const std::string w = "train spec";
      only_keys(j,
                {"workload", "layers", "bytes_per_activation", "bytes_per_weight_per_layer",
                 "bytes_per_optimizer_state_per_layer", "bytes_per_gradient", "bytes_per_workspace", "fwd_cost_us",
                 "bwd_cost_us", "update_cost_us", "weight_tier", "optimizer_state_tier", "pin_weights"},
                w);
      TrainSpec s;
      opt(j, "layers", s.layers, w);
      opt(j, "bytes_per_activation", s.bytes_per_activation, w);
      opt(j, "bytes_per_weight_per_layer", s.bytes_per_weight_per_layer, w);
      opt(j, "bytes_per_optimizer_state_per_layer", s.bytes_per_optimizer_state_per_layer, w);
      opt(j, "bytes_per_gradient", s.bytes_per_gradient, w);
      opt(j, "bytes_per_workspace", s.bytes_per_workspace, w);
      opt(j, "fwd_cost_us", s.fwd_cost_us, w);
      opt(j, "bwd_cost_us", s.bwd_cost_us, w);
      opt(j, "update_cost_us", s.update_cost_us, w);
      tier("weight_tier", s.weight_tier, w);
      tier("optimizer_state_tier", s.optimizer_state_tier, w);
      opt(j, "pin_weights", s.pin_weights, w);
      check_spec(s);
      return s;
    }
    if (kind == "decode") {
      const std::string w = "decode spec";
      only_keys(j,
                {"workload", "layers", "kv_bytes_per_layer_per_token", "weight_bytes_per_layer", "prefill_tokens",
                 "decode_steps", "prefill_cost_us_per_layer", "decode_cost_us_per_layer", "weight_tier",
                 "prefill_hidden_bytes_per_token", "decode_hidden_bytes", "prefill_workspace_bytes_per_token",
                 "kv_blocks_per_layer", "embed_cost_us", "head_cost_us", "head_weight_bytes", "logits_bytes"},
                w);
      DecodeSpec s;
      opt(j, "layers", s.layers, w);
      opt(j, "kv_bytes_per_layer_per_token", s.kv_bytes_per_layer_per_token, w);
      opt(j, "weight_bytes_per_layer", s.weight_bytes_per_layer, w);
      opt(j, "prefill_tokens", s.prefill_tokens, w);
      opt(j, "decode_steps", s.decode_steps, w);
      opt(j, "prefill_cost_us_per_layer", s.prefill_cost_us_per_layer, w);
      opt(j, "decode_cost_us_per_layer", s.decode_cost_us_per_layer, w);
      tier("weight_tier", s.weight_tier, w);
      opt(j, "prefill_hidden_bytes_per_token", s.prefill_hidden_bytes_per_token, w);
      opt(j, "decode_hidden_bytes", s.decode_hidden_bytes, w);
      opt(j, "prefill_workspace_bytes_per_token", s.prefill_workspace_bytes_per_token, w);
      opt(j, "kv_blocks_per_layer", s.kv_blocks_per_layer, w);
      opt(j, "embed_cost_us", s.embed_cost_us, w);
      opt(j, "head_cost_us", s.head_cost_us, w);
      opt(j, "head_weight_bytes", s.head_weight_bytes, w);
      opt(j, "logits_bytes", s.logits_bytes, w);
      check_spec(s);
      return s;
    }
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  throw SchemaError("spec.workload: expected \"train\" or \"decode\", got \"" + kind + "\"");
}

// ---------------------------------------------------------------------------
// Planning options

inline ordered_json to_json(const PlanOptions& o) {
  ordered_json kinds = ordered_json::array();
  for (auto k : o.policy.kinds_enabled) kinds.push_back(std::string(to_string(k)));
  return {{"min_gap_ratio", o.policy.min_gap_ratio},
          {"min_tensor_bytes", o.policy.min_tensor_bytes},
          {"kinds_enabled", kinds},
          {"all_windows", o.policy.all_windows},
          {"alpha", o.weights.alpha},
          {"beta", o.weights.beta},
          {"refine", o.refine}};
}

inline PlanOptions options_from_json(const json& j, PlanOptions o = {}) {
  using namespace detail;
  const std::string w = "options";
  only_keys(j, {"min_gap_ratio", "min_tensor_bytes", "kinds_enabled", "all_windows", "alpha", "beta", "refine"}, w);
  opt(j, "min_gap_ratio", o.policy.min_gap_ratio, w);
  opt(j, "min_tensor_bytes", o.policy.min_tensor_bytes, w);
  if (j.contains("kinds_enabled")) {
    o.policy.kinds_enabled.clear();
    for (const auto& k : id_list(j["kinds_enabled"], w + ".kinds_enabled"))
      o.policy.kinds_enabled.insert(parse_enum<TensorKind>(json(k), parse_tensor_kind, w + ".kinds_enabled"));
  }
  opt(j, "all_windows", o.policy.all_windows, w);
  opt(j, "alpha", o.weights.alpha, w);
  opt(j, "beta", o.weights.beta, w);
  opt(j, "refine", o.refine, w);
  try {
    check_policy(o.policy);
    check_weights(o.weights);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  return o;
}

// ---------------------------------------------------------------------------
// Plans, schedules and reports (write-only except the schedule)

inline ordered_json to_json(const OffloadPlan& p) {
  ordered_json entries = ordered_json::array();
  for (const auto& e : p.entries)
    entries.push_back(
        {{"tensor_id", e.tensor_id}, {"evict_after_pos", e.evict_after_pos}, {"reload_before_pos", e.reload_before_pos}});
  PlanOptions o;
  o.policy = p.policy;
  auto pol = to_json(o);
  for (const char* k : {"alpha", "beta", "refine"}) pol.erase(k);
  return {{"policy", pol}, {"entries", entries}};
}

inline ordered_json to_json(const Schedule& s) {
  ordered_json streams = ordered_json::object();
  for (const auto& [id, st] : s.stream_of) streams[std::to_string(id)] = std::string(to_string(st));
  return {{"order", s.order}, {"stream_of", streams}};
}

inline Schedule schedule_from_json(const json& j, const GraphProgram& g) {
  using namespace detail;
  only_keys(j, {"order", "stream_of"}, "schedule");
  const auto& o = need(j, "order", "schedule");
  if (!o.is_array()) throw SchemaError("schedule.order: expected an array");
  std::vector<OpId> order;
  for (const auto& x : o) order.push_back(as<OpId>(x, "schedule.order"));
  auto s = make_schedule(g, std::move(order));
  if (j.contains("stream_of")) {
    const auto& so = j["stream_of"];
    if (!so.is_object()) throw SchemaError("schedule.stream_of: expected an object");
    for (const auto& [k, v] : so.items()) {
      OpId id = 0;
      try {
        std::size_t used = 0;
        id = std::stoll(k, &used);
        if (used != k.size()) throw std::invalid_argument(k);
      } catch (const std::exception&) {
        throw SchemaError("schedule.stream_of: bad op id '" + k + "'");
      }
      auto st = parse_enum<Stream>(v, parse_stream, "schedule.stream_of");
      auto it = s.stream_of.find(id);
      if (it == s.stream_of.end() || it->second != st)
        throw SchemaError("schedule.stream_of: op " + k + " does not run on " + v.get<std::string>());
    }
  }
  return s;
}

inline ordered_json to_json(const PositionEvaluation& e) {
  return {{"position", e.position},         {"transfer_completion_us", e.transfer_completion_us},
          {"overlap_us", e.overlap_us},     {"exposed_us", e.exposed_us},
          {"residency_byte_us", e.residency_byte_us}, {"cost", e.cost}};
}

inline ordered_json to_json(const std::vector<RefineRecord>& log) {
  ordered_json out = ordered_json::array();
  for (const auto& r : log)
    out.push_back({{"cache_op_id", r.cache_op_id},
                   {"before", r.before},
                   {"after", r.after},
                   {"moved", r.moved},
                   {"original", to_json(r.original)},
                   {"chosen", to_json(r.chosen)}});
  return out;
}

/// Summary plus, when `full`, the timeline and memory samples.
inline ordered_json to_json(const SimReport& r, bool full = true) {
  ordered_json j = {{"makespan_us", r.makespan_us},
                    {"peak_device_bytes", r.peak_device_bytes},
                    {"peak_remote_bytes", r.peak_remote_bytes},
                    {"exposed_comm_us", r.exposed_comm_us},
                    {"overlapped_comm_us", r.overlapped_comm_us},
                    {"dma_busy_us", r.dma_busy_us},
                    {"compute_busy_us", r.compute_busy_us},
                    {"defrag_events", r.defrag_events},
                    {"defrag_time_us", r.defrag_time_us},
                    {"compaction_bytes_moved", r.compaction_bytes_moved},
                    {"conservation_checks", r.conservation_checks}};
  if (r.oom) {
    ordered_json o = {{"tensor", r.oom->tensor},
                      {"tier", std::string(to_string(r.oom->tier))},
                      {"requested_bytes", r.oom->requested_bytes},
                      {"free_bytes", r.oom->free_bytes},
                      {"largest_free_block", r.oom->largest_free_block},
                      {"time_us", r.oom->time_us}};
    o["op_id"] = r.oom->op_id ? ordered_json(*r.oom->op_id) : ordered_json(nullptr);
    j["oom"] = o;
  } else {
    j["oom"] = nullptr;
  }
  if (full) {
    ordered_json tl = ordered_json::array();
    for (const auto& e : r.timeline)
      tl.push_back({{"op_id", e.op_id ? ordered_json(*e.op_id) : ordered_json(nullptr)},
                    {"label", e.label},
                    {"stream", std::string(to_string(e.stream))},
                    {"start_us", e.start_us},
                    {"end_us", e.end_us}});
    ordered_json mem = ordered_json::array();
    for (const auto& s : r.memory) mem.push_back({s.time_us, s.device_bytes});
    j["timeline"] = tl;
    j["memory"] = mem;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sweep CSV

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& pts) {
  os << "bandwidth_gbps,makespan_us,exposed_us,overlapped_us,peak_bytes,defrag_events\n";
  for (const auto& p : pts) {
    const auto& r = p.graph_driven;
    os << json(p.bandwidth_gbps).dump() << ',' << r.makespan_us << ',' << r.exposed_comm_us << ','
       << r.overlapped_comm_us << ',' << r.peak_device_bytes << ',' << r.defrag_events << '\n';
  }
}

}  // namespace tierplan
