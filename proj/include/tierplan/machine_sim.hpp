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
#include <cmath>
#include <deque>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tierplan/allocator.hpp"
#include "tierplan/graph_ir.hpp"
#include "tierplan/machine.hpp"

namespace tierplan {

struct TimelineEntry {
  std::optional<OpId> op_id;  // empty for runtime-issued transfers and compaction
  std::string label;
  Stream stream = Stream::compute;
  Micros start_us = 0;
  Micros end_us = 0;
  friend bool operator==(const TimelineEntry&, const TimelineEntry&) = default;
};

struct MemorySample {
  Micros time_us = 0;
  Bytes device_bytes = 0;
  friend bool operator==(const MemorySample&, const MemorySample&) = default;
};

struct OomRecord {
  std::optional<OpId> op_id;
  TensorId tensor;
  Tier tier = Tier::device;
  Bytes requested_bytes = 0;
  Bytes free_bytes = 0;
  Bytes largest_free_block = 0;
  Micros time_us = 0;
  friend bool operator==(const OomRecord&, const OomRecord&) = default;
};

struct SimReport {
  Micros makespan_us = 0;
  Bytes peak_device_bytes = 0;
  Bytes peak_remote_bytes = 0;
  Micros exposed_comm_us = 0;
  Micros overlapped_comm_us = 0;
  Micros dma_busy_us = 0;
  Micros compute_busy_us = 0;
  std::int64_t defrag_events = 0;
  Micros defrag_time_us = 0;
  Bytes compaction_bytes_moved = 0;
  std::int64_t conservation_checks = 0;
  std::vector<TimelineEntry> timeline;
  std::vector<MemorySample> memory;
  std::optional<OomRecord> oom;
  friend bool operator==(const SimReport&, const SimReport&) = default;
};

namespace detail {

/// Device and remote residency shared by the planned and reactive engines.
/// Keeps two independent views of device occupancy (the allocator's extents
/// and a per-group residency ledger) and checks they agree after every change.
class MemoryBook {
 public:
  MemoryBook(const GraphProgram& g, const MachineModel& m, SimReport& report)
      : m_(m), report_(report), alloc_(m.device_capacity_bytes, m.allocator_alignment_bytes) {
    auto roots = alias_roots(g);
    std::unordered_map<TensorId, const TensorDecl*> decls;
    for (const auto& t : g.tensors) decls.emplace(t.id, &t);
    for (const auto& t : g.tensors) {
      const auto& root = roots.at(t.id);
      auto [it, fresh] = group_of_root_.emplace(root, groups_.size());
      if (fresh) {
        const auto* rd = decls.at(root);
        groups_.push_back({root, rd->bytes, m.align(rd->bytes), rd->initial_tier, rd->pinned});
      }
      if (t.pinned) groups_[it->second].pinned = true;
      group_of_.emplace(t.id, it->second);
    }
  }

  std::size_t group(const TensorId& t) const { return group_of_.at(t); }
  std::size_t group_count() const { return groups_.size(); }
  const TensorId& root(std::size_t gi) const { return groups_[gi].root; }
  Bytes bytes(std::size_t gi) const { return groups_[gi].bytes; }
  bool resident(std::size_t gi) const { return groups_[gi].resident; }
  bool has_remote_copy(std::size_t gi) const { return groups_[gi].remote_copy; }
  bool pinned(std::size_t gi) const { return groups_[gi].pinned; }
  Tier initial_tier(std::size_t gi) const { return groups_[gi].initial_tier; }
  const DeviceAllocator& allocator() const { return alloc_; }

  /// Allocates a device copy, compacting if the space exists but is
  /// fragmented. Returns the compaction stall, or nullopt (with the OOM
  /// recorded) when total free space is insufficient.
  std::optional<Micros> allocate(std::size_t gi, Micros now, std::optional<OpId> op) {
    auto& gr = groups_[gi];
    if (gr.resident) throw std::logic_error("group '" + gr.root + "' is already resident");
    Micros stall = 0;
    if (alloc_.free_bytes() < gr.aligned) {
      record_oom(op, gr.root, Tier::device, gr.aligned, now);
      return std::nullopt;
    }
    if (!alloc_.allocate(gr.root, gr.bytes)) {
      Bytes moved = alloc_.compact_for(gr.bytes);
      if (auto err = alloc_.check_invariants(); !err.empty())
        throw std::logic_error("allocator invariant broken after compaction: " + err);
      stall = static_cast<Micros>(
          std::ceil(static_cast<double>(moved) / m_.compaction_bandwidth_bytes_per_us));
      report_.defrag_events += 1;
      report_.defrag_time_us += stall;
      report_.compaction_bytes_moved += moved;
      if (!alloc_.allocate(gr.root, gr.bytes)) throw std::logic_error("allocation failed after compaction");
    }
    gr.resident = true;
    resident_bytes_ += gr.aligned;
    sample(now + stall);
    return stall;
  }

  void release(std::size_t gi, Micros now) {
    auto& gr = groups_[gi];
    if (!gr.resident) throw std::logic_error("release of non-resident group '" + gr.root + "'");
    alloc_.release(gr.root);
    gr.resident = false;
    resident_bytes_ -= gr.aligned;
    sample(now);
  }

  /// Reserves the remote copy. Returns false (with the OOM recorded) when
  /// the remote pool is full.
  bool reserve_remote(std::size_t gi, Micros now, std::optional<OpId> op) {
    auto& gr = groups_[gi];
    if (gr.remote_copy) return true;
    if (m_.remote_capacity_bytes - remote_bytes_ < gr.bytes) {
      record_oom(op, gr.root, Tier::remote, gr.bytes, now);
      return false;
    }
    gr.remote_copy = true;
    remote_bytes_ += gr.bytes;
    report_.peak_remote_bytes = std::max(report_.peak_remote_bytes, remote_bytes_);
    return true;
  }

  void drop_remote(std::size_t gi) {
    auto& gr = groups_[gi];
    if (!gr.remote_copy) return;
    gr.remote_copy = false;
    remote_bytes_ -= gr.bytes;
  }

  void final_check() const {
    if (auto err = alloc_.check_invariants(); !err.empty())
      throw std::logic_error("allocator invariant broken: " + err);
  }

 private:
  struct Group {
    TensorId root;
    Bytes bytes;
    Bytes aligned;
    Tier initial_tier;
    bool pinned;
    bool resident = false;
    bool remote_copy = false;
  };

  void sample(Micros now) {
    if (resident_bytes_ != alloc_.live_bytes())
      throw std::logic_error("device byte conservation violated: ledger " + std::to_string(resident_bytes_) +
                             " vs allocator " + std::to_string(alloc_.live_bytes()));
    report_.conservation_checks += 1;
    report_.peak_device_bytes = std::max(report_.peak_device_bytes, resident_bytes_);
    report_.memory.push_back({now, resident_bytes_});
  }

  void record_oom(std::optional<OpId> op, const TensorId& t, Tier tier, Bytes want, Micros now) {
    OomRecord r;
    r.op_id = op;
    r.tensor = t;
    r.tier = tier;
    r.requested_bytes = want;
    if (tier == Tier::device) {
      r.free_bytes = alloc_.free_bytes();
      r.largest_free_block = alloc_.largest_free_extent();
    } else {
      r.free_bytes = m_.remote_capacity_bytes - remote_bytes_;
      r.largest_free_block = r.free_bytes;
    }
    r.time_us = now;
    report_.oom = r;
  }

  const MachineModel& m_;
  SimReport& report_;
  DeviceAllocator alloc_;
  std::vector<Group> groups_;
  std::unordered_map<TensorId, std::size_t> group_of_root_;
  std::unordered_map<TensorId, std::size_t> group_of_;
  Bytes resident_bytes_ = 0;
  Bytes remote_bytes_ = 0;
};

inline void finish_report(SimReport& r) {
  for (const auto& e : r.timeline) {
    r.makespan_us = std::max(r.makespan_us, e.end_us);
    if (e.stream != Stream::compute && e.label != "defrag") r.dma_busy_us += e.end_us - e.start_us;
  }
  if (r.oom) r.makespan_us = std::max(r.makespan_us, r.oom->time_us);
  r.overlapped_comm_us = r.dma_busy_us - r.exposed_comm_us;
}

}  // namespace detail

/// Event-driven execution of a scheduled graph.
///
/// Issue model: a front end walks the order. DMA ops are enqueued on their
/// channel (one FIFO per direction) the moment the front end reaches them;
/// compute-stream ops run one at a time and the front end does not advance
/// past one until it has finished. A transfer placed at position p therefore
/// overlaps exactly the compute ops after p, as the static cost model
/// assumes. An op starts once its dependencies have completed, its stream is
/// free and its device allocation succeeds.
///
/// Residency: device inputs are allocated at t = 0, compute outputs at op
/// start, Prefetch allocates at its start, Detach frees immediately, and any
/// other copy is freed when the last access of its residency interval
/// completes. Alias versions share their root's allocation.
inline SimReport simulate(const GraphProgram& g, const Schedule& s, const MachineModel& m) {
  check_machine(m);
  if (auto err = check_order(g, s.order); !err.empty())
    throw std::invalid_argument("simulate: invalid schedule: " + err);

  SimReport report;
  detail::MemoryBook mem(g, m, report);
  const auto deps = build_dependencies(g);
  const std::size_t n = s.order.size();

  std::vector<std::size_t> order_idx(n);  // position -> DepGraph/ops index
  for (std::size_t k = 0; k < n; ++k) order_idx[k] = deps.at(s.order[k]);

  // Residency intervals per group, derived from the order.
  struct Segment { std::size_t pending = 0; bool closed_by_detach = false; };
  std::vector<std::vector<Segment>> segments(mem.group_count());
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> op_segments(n);  // ops idx -> (group, seg)
  std::vector<std::size_t> detach_seg(n, 0);  // ops idx -> segment a Detach closes
  std::vector<std::int64_t> open(mem.group_count(), -1);
  // A group is a graph input when nothing produces its root; only then does
  // its initial tier matter.
  std::vector<char> is_input(mem.group_count(), 1);
  for (const auto& op : g.ops)
    if (op.kind == OpKind::compute)
      for (const auto& t : op.outputs)
        if (mem.root(mem.group(t)) == t) is_input[mem.group(t)] = 0;
  for (std::size_t gi = 0; gi < mem.group_count(); ++gi)
    if (is_input[gi] && mem.initial_tier(gi) == Tier::device) {
      segments[gi].push_back({});
      open[gi] = 0;
    }
  std::vector<char> touched_group(mem.group_count(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& op = g.ops[order_idx[k]];
    std::vector<std::size_t> seen;
    for (const auto& t : op.touched()) {
      const auto gi = mem.group(t);
      if (std::find(seen.begin(), seen.end(), gi) != seen.end()) continue;
      seen.push_back(gi);
      touched_group[gi] = 1;
      if (op.kind == OpKind::prefetch || open[gi] < 0) {
        segments[gi].push_back({});
        open[gi] = static_cast<std::int64_t>(segments[gi].size()) - 1;
      }
      auto& seg = segments[gi][open[gi]];
      if (op.kind == OpKind::detach) {
        seg.closed_by_detach = true;
        detach_seg[order_idx[k]] = static_cast<std::size_t>(open[gi]);
        open[gi] = -1;
        continue;
      }
      seg.pending += 1;
      op_segments[order_idx[k]].emplace_back(gi, static_cast<std::size_t>(open[gi]));
    }
  }

  // Remote-resident inputs occupy the remote pool from the start.
  for (std::size_t gi = 0; gi < mem.group_count(); ++gi)
    if (is_input[gi] && mem.initial_tier(gi) == Tier::remote && touched_group[gi] &&
        !mem.reserve_remote(gi, 0, std::nullopt)) {
      detail::finish_report(report);
      return report;
    }
  for (std::size_t gi = 0; gi < mem.group_count(); ++gi)
    if (is_input[gi] && mem.initial_tier(gi) == Tier::device && touched_group[gi] &&
        !mem.allocate(gi, 0, std::nullopt)) {
      detail::finish_report(report);
      return report;
    }

  std::vector<char> done(g.ops.size(), 0);
  auto deps_done = [&](std::size_t i) {
    return std::all_of(deps.pred[i].begin(), deps.pred[i].end(), [&](auto p) { return done[p] != 0; });
  };

  using Event = std::tuple<Micros, int, OpId, std::size_t>;  // time, stream, op id, ops index
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;

  auto retire_access = [&](std::size_t i, Micros now) {
    for (auto [gi, si] : op_segments[i]) {
      auto& seg = segments[gi][si];
      if (--seg.pending != 0 || seg.closed_by_detach) continue;
      if (si + 1 == segments[gi].size()) {
        if (mem.resident(gi)) mem.release(gi, now);
        mem.drop_remote(gi);
      }
    }
  };

  bool halted = false;
  auto fail_residency = [&](const OpNode& op, const TensorId& t) {
    throw std::logic_error("residency hazard: op " + std::to_string(op.id) + " touches '" + t +
                           "' while it is not device resident");
  };

  // Returns false when the op hit an OOM.
  auto start_op = [&](std::size_t i, Micros now) -> bool {
    const auto& op = g.ops[i];
    const Stream st = stream_for(op.kind);
    Micros stall = 0;
    Micros dur = 0;
    switch (op.kind) {
      case OpKind::compute: {
        for (const auto& t : op.inputs)
          if (!mem.resident(mem.group(t))) fail_residency(op, t);
        for (const auto& t : op.outputs) {
          auto gi = mem.group(t);
          if (mem.root(gi) != t) {
            if (!mem.resident(gi)) fail_residency(op, t);
            continue;
          }
          if (mem.resident(gi)) continue;  // output listed twice
          auto st_us = mem.allocate(gi, now + stall, op.id);
          if (!st_us) return false;
          stall += *st_us;
        }
        dur = op.cost_us;
        break;
      }
      case OpKind::prefetch: {
        auto gi = mem.group(op.tensor);
        if (mem.resident(gi))
          throw std::logic_error("prefetch op " + std::to_string(op.id) + " of resident '" + op.tensor + "'");
        if (!mem.has_remote_copy(gi))
          throw std::logic_error("prefetch op " + std::to_string(op.id) + " of '" + op.tensor +
                                 "' which has no remote copy");
        auto st_us = mem.allocate(gi, now, op.id);
        if (!st_us) return false;
        stall = *st_us;
        dur = estimate_transfer_us(mem.bytes(gi), m, Channel::r2d);
        break;
      }
      case OpKind::store: {
        auto gi = mem.group(op.tensor);
        if (!mem.resident(gi)) fail_residency(op, op.tensor);
        if (!mem.reserve_remote(gi, now, op.id)) return false;
        dur = estimate_transfer_us(mem.bytes(gi), m, Channel::d2r);
        break;
      }
      case OpKind::detach: {
        auto gi = mem.group(op.tensor);
        if (!mem.resident(gi)) fail_residency(op, op.tensor);
        if (segments[gi][detach_seg[i]].pending != 0)
          throw std::logic_error("detach op " + std::to_string(op.id) + " while '" + op.tensor +
                                 "' still has pending readers");
        mem.release(gi, now);
        break;
      }
    }
    if (stall > 0) report.timeline.push_back({std::nullopt, "defrag", st, now, now + stall});
    const Micros begin = now + stall;
    report.timeline.push_back({op.id, op.label(), st, begin, begin + dur});
    if (op.kind == OpKind::compute) report.compute_busy_us += dur;
    events.emplace(begin + dur, static_cast<int>(st), op.id, i);
    return true;
  };

  std::size_t k = 0;
  bool compute_running = false;
  std::deque<std::size_t> queue_in, queue_out;
  bool in_running = false, out_running = false;
  bool waiting = false, waiting_on_dma = false;
  Micros wait_start = 0;

  auto dispatch = [&](Micros now) {
    bool progress = true;
    while (progress && !halted) {
      progress = false;
      // The front end is blocked for as long as a compute-stream op runs.
      while (k < n && !compute_running) {
        const std::size_t i = order_idx[k];
        const Stream st = stream_for(g.ops[i].kind);
        if (st == Stream::dma_in) { queue_in.push_back(i); ++k; progress = true; continue; }
        if (st == Stream::dma_out) { queue_out.push_back(i); ++k; progress = true; continue; }
        if (!deps_done(i)) {
          if (!waiting) {
            waiting = true;
            wait_start = now;
            waiting_on_dma = std::any_of(deps.pred[i].begin(), deps.pred[i].end(), [&](auto p) {
              return !done[p] && stream_for(g.ops[p].kind) != Stream::compute;
            });
          }
          break;
        }
        if (waiting) {
          if (waiting_on_dma) report.exposed_comm_us += now - wait_start;
          waiting = false;
        }
        if (!start_op(i, now)) { halted = true; return; }
        compute_running = true;
        ++k;
        progress = true;
        break;
      }
      for (auto [queue, running] : {std::pair{&queue_in, &in_running}, std::pair{&queue_out, &out_running}}) {
        if (*running || queue->empty() || !deps_done(queue->front())) continue;
        std::size_t i = queue->front();
        queue->pop_front();
        if (!start_op(i, now)) { halted = true; return; }
        *running = true;
        progress = true;
      }
    }
  };

  dispatch(0);
  while (!events.empty() && !halted) {
    const Micros now = std::get<0>(events.top());
    while (!events.empty() && std::get<0>(events.top()) == now) {
      auto [t, st, id, i] = events.top();
      events.pop();
      done[i] = 1;
      switch (static_cast<Stream>(st)) {
        case Stream::compute: compute_running = false; break;
        case Stream::dma_in: in_running = false; break;
        case Stream::dma_out: out_running = false; break;
      }
      if (g.ops[i].kind != OpKind::detach) retire_access(i, now);
    }
    dispatch(now);
  }
  if (!halted && (k < n || !queue_in.empty() || !queue_out.empty()))
    throw std::logic_error("simulation deadlocked");
  if (!halted) mem.final_check();
  detail::finish_report(report);
  return report;
}

/// Copy of g without cache ops; every tensor starts on device.
inline GraphProgram all_device_baseline(const GraphProgram& g) {
  GraphProgram out;
  out.tensors = g.tensors;
  for (auto& t : out.tensors) t.initial_tier = Tier::device;
  std::set<OpId> kept;
  for (const auto& op : g.ops)
    if (!op.is_cache()) {
      out.ops.push_back(op);
      kept.insert(op.id);
    }
  for (const auto& e : g.control_edges)
    if (kept.count(e.first) && kept.count(e.second)) out.control_edges.push_back(e);
  return out;
}

inline Schedule restrict_schedule(const GraphProgram& g, const Schedule& s) {
  std::set<OpId> ids;
  for (const auto& op : g.ops) ids.insert(op.id);
  std::vector<OpId> order;
  for (auto id : s.order)
    if (ids.count(id)) order.push_back(id);
  return make_schedule(g, std::move(order));
}

/// Peak device bytes with everything resident and unlimited capacity.
inline Bytes peak_memory_no_offload(const GraphProgram& g, const Schedule& s, const MachineModel& m) {
  auto base = all_device_baseline(g);
  auto sched = restrict_schedule(base, s);
  MachineModel unlimited = m;
  unlimited.device_capacity_bytes = kUnlimitedBytes;
  return simulate(base, sched, unlimited).peak_device_bytes;
}

}  // namespace tierplan
