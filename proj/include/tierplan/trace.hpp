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

#include "tierplan/machine_sim.hpp"

namespace tierplan {

/// Chrome trace-event document: one complete ("X") event per timeline entry
/// on pid 1 with tid = stream id, and one counter ("C") event per memory
/// sample. Thread-name metadata is added only when there is something to name.
inline nlohmann::json emit_trace(const SimReport& r) {
  using nlohmann::json;
  json events = json::array();
  if (!r.timeline.empty()) {
    for (auto s : {Stream::compute, Stream::dma_in, Stream::dma_out})
      events.push_back({{"name", "thread_name"},
                        {"ph", "M"},
                        {"pid", 1},
                        {"tid", static_cast<int>(s)},
                        {"args", {{"name", std::string(to_string(s))}}}});
  }
  for (const auto& e : r.timeline) {
    json ev = {{"name", e.label},
               {"cat", std::string(to_string(e.stream))},
               {"ph", "X"},
               {"pid", 1},
               {"tid", static_cast<int>(e.stream)},
               {"ts", e.start_us},
               {"dur", e.end_us - e.start_us}};
    if (e.op_id) ev["args"] = {{"op_id", *e.op_id}};
    events.push_back(std::move(ev));
  }
  for (const auto& m : r.memory)
    events.push_back({{"name", "device_memory"},
                      {"ph", "C"},
                      {"pid", 1},
                      {"ts", m.time_us},
                      {"args", {{"bytes", m.device_bytes}}}});
  return {{"traceEvents", std::move(events)}, {"displayTimeUnit", "ms"}};
}

/// Checks the subset of the trace-event format viewers rely on. Returns an
/// empty string when the document conforms.
inline std::string check_trace(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("traceEvents") || !doc["traceEvents"].is_array())
    return "missing traceEvents array";
  std::size_t i = 0;
  for (const auto& ev : doc["traceEvents"]) {
    const std::string where = "event " + std::to_string(i++);
    if (!ev.is_object()) return where + " is not an object";
    for (const char* key : {"name", "ph", "pid"})
      if (!ev.contains(key)) return where + " lacks '" + key + "'";
    if (!ev["name"].is_string() || !ev["ph"].is_string()) return where + " has non-string name or ph";
    const auto ph = ev["ph"].get<std::string>();
    if (ph == "X") {
      if (!ev.contains("ts") || !ev.contains("dur") || !ev.contains("tid")) return where + " is incomplete";
      if (!ev["ts"].is_number() || !ev["dur"].is_number() || ev["dur"].get<double>() < 0)
        return where + " has bad timing";
    } else if (ph == "C") {
      if (!ev.contains("ts") || !ev["ts"].is_number() || !ev.contains("args") || !ev["args"].is_object())
        return where + " is a malformed counter";
    } else if (ph != "M") {
      return where + " has unsupported phase '" + ph + "'";
    }
  }
  return {};
}

}  // namespace tierplan
