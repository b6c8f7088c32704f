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

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tierplan/graph_ir.hpp"

namespace tierplan {

inline constexpr Bytes kUnlimitedBytes = std::numeric_limits<Bytes>::max();

/// GB/s (GB = 1e9 bytes) to bytes per microsecond.
inline double gbps_to_bytes_per_us(double gbps) { return gbps * 1e3; }

enum class Channel { r2d, d2r, h2r, r2h, d2d };

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::r2d: return "R2D";
    case Channel::d2r: return "D2R";
    case Channel::h2r: return "H2R";
    case Channel::r2h: return "R2H";
    case Channel::d2d: return "D2D";
  }
  return "?";
}

/// Two-tier machine: one device pool behind a first-fit allocator, one remote
/// pool, one DMA channel per direction. Host channels are representable but
/// the default pipeline never issues them.
struct MachineModel {
  Bytes device_capacity_bytes = 64'000'000'000ULL;
  Bytes remote_capacity_bytes = kUnlimitedBytes;
  double r2d_bandwidth_bytes_per_us = 33'600.0;
  double d2r_bandwidth_bytes_per_us = 33'600.0;
  double h2r_bandwidth_bytes_per_us = 25'000.0;
  double r2h_bandwidth_bytes_per_us = 25'000.0;
  Micros transfer_fixed_latency_us = 10;
  double compaction_bandwidth_bytes_per_us = 400'000.0;  // D2D copy rate
  Micros reactive_orchestration_overhead_us = 200;
  Bytes allocator_alignment_bytes = 512;

  double bandwidth(Channel c) const {
    switch (c) {
      case Channel::r2d: return r2d_bandwidth_bytes_per_us;
      case Channel::d2r: return d2r_bandwidth_bytes_per_us;
      case Channel::h2r: return h2r_bandwidth_bytes_per_us;
      case Channel::r2h: return r2h_bandwidth_bytes_per_us;
      case Channel::d2d: return compaction_bandwidth_bytes_per_us;
    }
    return 0.0;
  }

  Bytes align(Bytes b) const {
    const Bytes a = allocator_alignment_bytes;
    return (b + a - 1) / a * a;
  }

  friend bool operator==(const MachineModel&, const MachineModel&) = default;
};

/// Throws std::invalid_argument naming the first broken invariant.
inline void check_machine(const MachineModel& m) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("machine model: " + what); };
  if (m.device_capacity_bytes == 0) fail("device_capacity_bytes must be > 0");
  if (m.remote_capacity_bytes == 0) fail("remote_capacity_bytes must be > 0");
  for (auto c : {Channel::r2d, Channel::d2r, Channel::h2r, Channel::r2h, Channel::d2d})
    if (!(m.bandwidth(c) > 0.0)) fail(std::string(to_string(c)) + " bandwidth must be > 0");
  if (m.transfer_fixed_latency_us < 0) fail("transfer_fixed_latency_us must be >= 0");
  if (m.reactive_orchestration_overhead_us < 0) fail("reactive_orchestration_overhead_us must be >= 0");
  const Bytes a = m.allocator_alignment_bytes;
  if (a == 0 || (a & (a - 1)) != 0) fail("allocator_alignment_bytes must be a power of two");
}

/// fixed latency + bytes / bandwidth, rounded to the nearest microsecond.
inline Micros estimate_transfer_us(Bytes bytes, const MachineModel& m, Channel c) {
  const double bw = m.bandwidth(c);
  if (!(bw > 0.0))
    throw std::invalid_argument("zero bandwidth on channel " + std::string(to_string(c)));
  if (std::isinf(bw)) return m.transfer_fixed_latency_us;
  return static_cast<Micros>(
      std::llround(static_cast<double>(m.transfer_fixed_latency_us) + static_cast<double>(bytes) / bw));
}

inline Micros estimate_transfer_us(const TensorDecl& t, const MachineModel& m, Channel c) {
  return estimate_transfer_us(t.bytes, m, c);
}

}  // namespace tierplan
