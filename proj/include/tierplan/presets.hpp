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

#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "tierplan/pipeline.hpp"

namespace tierplan {

using WorkloadSpec = std::variant<TrainSpec, DecodeSpec>;

struct Preset {
  std::string name;
  std::string description;
  WorkloadSpec workload;
  MachineModel machine;
  PlanOptions options;
};

inline GraphProgram generate(const WorkloadSpec& w) {
  return std::visit(
      [](const auto& s) -> GraphProgram {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, TrainSpec>)
          return gen_transformer_train(s);
        else
          return gen_llm_decode(s);
      },
      w);
}

namespace detail {

inline PlanOptions activation_policy(double min_gap_ratio) {
  PlanOptions o;
  o.policy.kinds_enabled = {TensorKind::activation};
  o.policy.min_gap_ratio = min_gap_ratio;
  return o;
}

inline PlanOptions kv_policy() {
  PlanOptions o;
  o.policy.kinds_enabled = {TensorKind::kv_block};
  o.policy.all_windows = true;
  o.policy.min_tensor_bytes = 0;
  return o;
}

// 32 layers, bf16-ish sizes. Activations stay under 1 GB so that a slot of
// overlap costs less residency than the stall it hides at default weights.
inline TrainSpec llama8b_train() {
  TrainSpec t;
  t.layers = 32;
  t.bytes_per_activation = 900'000'000;
  t.bytes_per_weight_per_layer = 500'000'000;
  t.bytes_per_optimizer_state_per_layer = 375'000'000;
  t.bytes_per_gradient = 500'000'000;
  t.fwd_cost_us = 25'000;
  t.bwd_cost_us = 50'000;
  t.update_cost_us = 3'000;
  return t;
}

// Weights 50 x 0.9e9 = 45.0e9 and KV 50 x 4563 x 71000 ~= 16.2e9.
inline DecodeSpec deepseek_decode() {
  DecodeSpec d;
  d.layers = 50;
  d.kv_bytes_per_layer_per_token = 4563;
  d.weight_bytes_per_layer = 900'000'000;
  d.prefill_tokens = 71'000;
  d.decode_steps = 1;
  d.prefill_cost_us_per_layer = 20'000;
  d.decode_cost_us_per_layer = 20'000;
  d.kv_blocks_per_layer = 24;
  return d;
}

}  // namespace detail

inline std::vector<Preset> presets() {
  constexpr Bytes kMiB = 1ULL << 20;
  std::vector<Preset> out;

  {
    Preset p{"tiny-train", "4-layer training step, MiB-scale tensors", {}, {}, {}};
    TrainSpec t;
    t.layers = 4;
    t.bytes_per_activation = 8 * kMiB;
    t.bytes_per_weight_per_layer = 4 * kMiB;
    t.bytes_per_optimizer_state_per_layer = 8 * kMiB;
    t.fwd_cost_us = 1'000;
    t.bwd_cost_us = 2'000;
    t.update_cost_us = 200;
    p.workload = t;
    p.machine.device_capacity_bytes = 64 * kMiB;
    out.push_back(std::move(p));
  }
  {
    Preset p{"tiny-decode", "4-layer prefill plus 4 decode steps", {}, {}, detail::kv_policy()};
    DecodeSpec d;
    d.layers = 4;
    d.kv_bytes_per_layer_per_token = 4096;
    d.weight_bytes_per_layer = 8 * kMiB;
    d.prefill_tokens = 1024;
    d.decode_steps = 4;
    d.prefill_cost_us_per_layer = 2'000;
    d.decode_cost_us_per_layer = 1'000;
    d.kv_blocks_per_layer = 2;
    p.workload = d;
    p.machine.device_capacity_bytes = 64 * kMiB;
    out.push_back(std::move(p));
  }
  {
    Preset p{"llama8b-like", "32-layer training step, activations offloaded, 48 GB device",
             detail::llama8b_train(), {}, detail::activation_policy(6.0)};
    p.machine.device_capacity_bytes = 48'000'000'000ULL;
    out.push_back(std::move(p));
  }
  {
    // Same workload squeezed until the runtime path thrashes.
    Preset p{"llama8b-reactive", "llama8b-like at 34 GB with 14 ms per-transfer orchestration cost",
             detail::llama8b_train(), {}, detail::activation_policy(6.0)};
    p.machine.device_capacity_bytes = 34'000'000'000ULL;
    p.machine.reactive_orchestration_overhead_us = 14'000;
    out.push_back(std::move(p));
  }
  {
    Preset p{"deepseekv3-like", "61-layer training step with remote optimizer states, 80 GB device", {}, {},
             detail::activation_policy(6.0)};
    TrainSpec t = detail::llama8b_train();
    t.layers = 61;
    t.bytes_per_weight_per_layer = 600'000'000;
    t.bytes_per_optimizer_state_per_layer = 450'000'000;
    t.bytes_per_gradient = 600'000'000;
    t.optimizer_state_tier = Tier::remote;
    p.workload = t;
    p.machine.device_capacity_bytes = 80'000'000'000ULL;
    out.push_back(std::move(p));
  }
  {
    // Offloaded runs are bounded by the remote pool: 1.73 x the KV at 71k tokens.
    Preset p{"deepseekv3-decode", "50-layer decode, 45.0e9 weights, paged KV offload", detail::deepseek_decode(),
             {}, detail::kv_policy()};
    p.machine.device_capacity_bytes = 61'250'000'000ULL;
    p.machine.remote_capacity_bytes = 28'026'000'000ULL;
    out.push_back(std::move(p));
  }
  {
    // A large prefill scratch buffer leaves a hole under the KV; the logits
    // buffer at the first head then needs compaction unless KV has left.
    Preset p{"deepseekv3-decode-frag", "long-sequence decode at 95% of the no-offload peak", {}, {},
             detail::kv_policy()};
    DecodeSpec d = detail::deepseek_decode();
    d.decode_steps = 2;
    d.kv_blocks_per_layer = 1;
    d.prefill_workspace_bytes_per_token = 56'000;
    d.head_cost_us = 12'000;
    d.logits_bytes = 4'500'000'000ULL;
    p.workload = d;
    auto g = gen_llm_decode(d);
    p.machine.device_capacity_bytes =
        static_cast<Bytes>(static_cast<double>(peak_memory_no_offload(g, topo_order(g), p.machine)) / 0.95);
    out.push_back(std::move(p));
  }
  return out;
}

inline Preset find_preset(const std::string& name) {
  for (auto& p : presets())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace tierplan
