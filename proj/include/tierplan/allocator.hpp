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

#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "tierplan/graph_ir.hpp"

namespace tierplan {

struct Extent {
  Bytes offset = 0;
  Bytes length = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// First-fit allocator over [0, capacity) with immediate coalescing.
/// Invariant: free and live extents tile the address space exactly.
class DeviceAllocator {
 public:
  DeviceAllocator(Bytes capacity, Bytes alignment) : capacity_(capacity), alignment_(alignment) {
    if (alignment == 0 || (alignment & (alignment - 1)) != 0)
      throw std::invalid_argument("alignment must be a power of two");
    if (capacity > 0) free_.emplace(0, capacity);
  }

  Bytes capacity() const { return capacity_; }
  Bytes live_bytes() const { return live_bytes_; }
  Bytes free_bytes() const { return capacity_ - live_bytes_; }
  Bytes aligned(Bytes b) const { return (b + alignment_ - 1) / alignment_ * alignment_; }

  Bytes largest_free_extent() const {
    Bytes best = 0;
    for (const auto& [off, len] : free_) best = std::max(best, len);
    return best;
  }

  bool owns(const TensorId& id) const { return live_.count(id) != 0; }
  const std::map<TensorId, Extent>& live() const { return live_; }
  const std::map<Bytes, Bytes>& free_extents() const { return free_; }

  /// First-fit. Returns nullopt when no single free extent is large enough.
  std::optional<Extent> allocate(const TensorId& id, Bytes bytes) {
    if (live_.count(id)) throw std::logic_error("double allocation of '" + id + "'");
    const Bytes len = aligned(bytes);
    for (auto it = free_.begin(); it != free_.end(); ++it) {
      if (it->second < len) continue;
      Extent e{it->first, len};
      Bytes rest_off = it->first + len, rest_len = it->second - len;
      free_.erase(it);
      if (rest_len > 0) free_.emplace(rest_off, rest_len);
      live_.emplace(id, e);
      live_bytes_ += len;
      return e;
    }
    return std::nullopt;
  }

  void release(const TensorId& id) {
    auto it = live_.find(id);
    if (it == live_.end()) throw std::logic_error("release of unallocated '" + id + "'");
    Extent e = it->second;
    live_.erase(it);
    live_bytes_ -= e.length;
    insert_free(e.offset, e.length);
  }

  /// Slides live extents toward offset 0 in address order until some free
  /// extent can hold `bytes`. Returns the number of bytes moved; only the
  /// prefix needed to open the hole is compacted.
  Bytes compact_for(Bytes bytes) {
    const Bytes need = aligned(bytes);
    if (free_bytes() < need) throw std::logic_error("compaction cannot create enough space");
    Bytes moved = 0;
    std::map<Bytes, TensorId> by_offset;
    for (const auto& [id, e] : live_) by_offset.emplace(e.offset, id);
    Bytes cursor = 0;
    for (const auto& [off, id] : by_offset) {
      if (largest_free_extent() >= need) break;
      auto& e = live_.at(id);
      if (e.offset != cursor) {
        // Remove the old extent and the gap below it from the free map, then
        // rebuild the free space above the new location.
        Bytes old_off = e.offset;
        erase_free_range(cursor, old_off + e.length);
        e.offset = cursor;
        moved += e.length;
        insert_free(cursor + e.length, old_off - cursor);
      }
      cursor = e.offset + e.length;
    }
    if (largest_free_extent() < need) throw std::logic_error("compaction failed to open a hole");
    return moved;
  }

  /// Checks the tiling invariant; returns an empty string when it holds.
  std::string check_invariants() const {
    std::map<Bytes, std::pair<Bytes, bool>> all;
    Bytes live_sum = 0, free_sum = 0;
    for (const auto& [id, e] : live_) {
      all.emplace(e.offset, std::make_pair(e.length, true));
      live_sum += e.length;
    }
    for (const auto& [off, len] : free_) {
      if (!all.emplace(off, std::make_pair(len, false)).second) return "overlapping extents";
      free_sum += len;
    }
    if (live_sum != live_bytes_) return "live byte counter drift";
    if (live_sum + free_sum != capacity_) return "extents do not cover capacity";
    Bytes cursor = 0;
    bool prev_free = false;
    for (const auto& [off, lf] : all) {
      if (off != cursor) return "gap or overlap at offset " + std::to_string(off);
      if (!lf.second && prev_free) return "uncoalesced free extents at " + std::to_string(off);
      prev_free = !lf.second;
      cursor = off + lf.first;
    }
    return {};
  }

 private:
  void insert_free(Bytes off, Bytes len) {
    if (len == 0) return;
    auto next = free_.lower_bound(off);
    if (next != free_.begin()) {
      auto prev = std::prev(next);
      if (prev->first + prev->second == off) {
        off = prev->first;
        len += prev->second;
        free_.erase(prev);
      }
    }
    next = free_.lower_bound(off);
    if (next != free_.end() && off + len == next->first) {
      len += next->second;
      free_.erase(next);
    }
    free_.emplace(off, len);
  }

  // Drops free extents fully inside [lo, hi); the range is free or owned by
  // the extent being moved, so no partial overlaps occur.
  void erase_free_range(Bytes lo, Bytes hi) {
    auto it = free_.lower_bound(lo);
    while (it != free_.end() && it->first < hi) it = free_.erase(it);
  }

  Bytes capacity_;
  Bytes alignment_;
  Bytes live_bytes_ = 0;
  std::map<Bytes, Bytes> free_;
  std::map<TensorId, Extent> live_;
};

}  // namespace tierplan
