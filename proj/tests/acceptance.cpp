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
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here and printed with each result.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "tierplan/tierplan.hpp"

namespace {

using namespace tierplan;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void criterion(int n, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs >= budget_s) {
    o.pass = false;
    o.detail += "; over time budget";
  }
  if (!o.pass) ++g_failures;
  std::printf("CRITERION %d %s %s (%.2f s of %.0f s): %s\n", n, o.pass ? "PASS" : "FAIL", name, secs, budget_s,
              o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome schedule_validity() {
  MachineModel m;
  int ok = 0, max_nodes = 0, max_cache = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto g = gen_random_dag(RandomDagSpec{}, seed);
    int cache = 0;
    for (const auto& op : g.ops) cache += op.is_cache();
    max_nodes = std::max(max_nodes, static_cast<int>(g.ops.size()));
    max_cache = std::max(max_cache, cache);
    ok += testing::respects(g, refine_order(g, topo_order(g), m).order);
  }
  std::ostringstream d;
  d << ok << "/1000 refined orders topological (independent edge check); largest graph " << max_nodes
    << " ops, most cache ops " << max_cache;
  return {ok == 1000 && max_nodes <= 50 && max_cache <= 12, d.str()};
}

// 2 ------------------------------------------------------------------------
// The toy graph plus 24 seeded random graphs of at most 10 ops.
std::vector<GraphProgram> curated_suite() {
  std::vector<GraphProgram> out{toy_prefetch_graph()};
  RandomDagSpec small;
  small.max_nodes = 10;
  small.max_cache_ops = 4;
  for (std::uint64_t seed = 0; seed < 24; ++seed) out.push_back(gen_random_dag(small, seed));
  return out;
}

Outcome oracle_proximity() {
  MachineModel m;
  auto suite = curated_suite();
  int within = 0, regressions = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& g = suite[i];
    const auto& mm = i == 0 ? toy_prefetch_machine() : m;
    auto s = topo_order(g);
    auto initial = simulate(g, s, mm).makespan_us;
    auto refined = simulate(g, refine_order(g, s, mm), mm).makespan_us;
    auto best = exhaustive_oracle(g, mm).best_makespan.makespan_us;
    double ratio = static_cast<double>(refined) / static_cast<double>(best);
    worst = std::max(worst, ratio);
    within += ratio <= 1.10;
    regressions += refined > initial;
  }
  std::ostringstream d;
  d << within << "/" << suite.size() << " within 10% of the exhaustive best (worst ratio " << fmt("%.4f", worst)
    << "), " << regressions << " regressions vs the initial order";
  return {within == static_cast<int>(suite.size()) && regressions == 0 && suite.size() == 25, d.str()};
}

// 3 ------------------------------------------------------------------------
Outcome prefetch_regimes() {
  auto g = toy_prefetch_graph();
  auto m = toy_prefetch_machine();
  const auto order = topo_order(g).order;
  const OpId c = 5;
  auto range = feasible_positions(g, order, c);
  auto at = [&](Pos p) { return evaluate_position(g, order, c, p, m, {}); };
  auto earliest = at(range.lo);
  auto latest_minus_one = at(range.hi - 1);
  auto refined = refine_order(g, topo_order(g), m).order;
  Pos chosen = static_cast<Pos>(std::find(refined.begin(), refined.end(), c) - refined.begin());
  auto pick = evaluate_position(g, refined, c, chosen, m, {});
  double min_zero_residency = INFINITY;
  for (Pos p = range.lo; p <= range.hi; ++p)
    if (at(p).exposed_us == 0) min_zero_residency = std::min(min_zero_residency, at(p).residency_byte_us);
  bool pass = earliest.exposed_us == 0 && earliest.residency_byte_us > pick.residency_byte_us &&
              latest_minus_one.exposed_us > 0 && pick.exposed_us == 0 &&
              pick.residency_byte_us == min_zero_residency;
  std::ostringstream d;
  d << "earliest p=" << range.lo << " exposed " << earliest.exposed_us << " residency "
    << fmt("%.0f", earliest.residency_byte_us) << "; latest-1 p=" << range.hi - 1 << " exposed "
    << latest_minus_one.exposed_us << "; refined p=" << chosen << " exposed " << pick.exposed_us << " residency "
    << fmt("%.0f", pick.residency_byte_us) << " (min over zero-exposure slots " << fmt("%.0f", min_zero_residency)
    << ")";
  return {pass, d.str()};
}

// 4 ------------------------------------------------------------------------
// Figures are compared at the one-decimal precision they are quoted with:
// |x - 61.2e9| < 0.05e9 and |x - 45.0e9| < 0.05e9.
Outcome kv_identity() {
  auto p = find_preset("deepseekv3-decode");
  auto d = std::get<DecodeSpec>(p.workload);
  auto g = gen_llm_decode(d);
  auto s = topo_order(g);
  auto base = all_device_baseline(g);
  auto unlimited = p.machine;
  unlimited.device_capacity_bytes = kUnlimitedBytes;
  auto no_off = simulate(base, restrict_schedule(base, s), unlimited);
  auto plan = plan_offload(g, p.machine, p.options);
  auto off = simulate(plan.graph, plan.schedule, p.machine);
  const double b = static_cast<double>(no_off.peak_device_bytes);
  const double o = static_cast<double>(off.peak_device_bytes);
  const double reduction = (b - o) / b;
  auto max_base = max_prefill_tokens(d, p.machine, false, 200'000, 100, p.options);
  auto max_off = max_prefill_tokens(d, p.machine, true, 200'000, 100, p.options);
  const double ratio = max_base > 0 ? static_cast<double>(max_off) / static_cast<double>(max_base) : 0.0;
  bool pass = std::fabs(b - 61.2e9) < 0.05e9 && std::fabs(o - 45.0e9) < 0.05e9 && !off.oom &&
              off.exposed_comm_us == 0 && std::fabs(reduction - 0.26) <= 0.01 && std::fabs(ratio - 1.73) <= 0.05;
  std::ostringstream d2;
  d2 << "baseline peak " << fmt("%.4f", b / 1e9) << " GB (61.2), offloaded " << fmt("%.4f", o / 1e9)
     << " GB (45.0), reduction " << fmt("%.2f", reduction * 100) << "% (26 +/- 1), max tokens " << max_base << " -> "
     << max_off << " ratio " << fmt("%.3f", ratio) << " (1.73 +/- 0.05), exposed " << off.exposed_comm_us << " us";
  return {pass, d2.str()};
}

// 5 ------------------------------------------------------------------------
Outcome defrag_elimination() {
  auto p = find_preset("deepseekv3-decode-frag");
  auto c = compare(generate(p.workload), p.machine, p.options);
  bool pass = !c.reactive.oom && !c.graph_driven.oom && c.reactive.defrag_events >= 1 &&
              c.graph_driven.defrag_events == 0 && c.reactive.makespan_us > c.graph_driven.makespan_us;
  std::ostringstream d;
  d << "reactive " << c.reactive.defrag_events << " defrag events (" << fmt("%.2f", c.reactive.compaction_bytes_moved / 1e9)
    << " GB moved), makespan " << c.reactive.makespan_us << " us; graph-driven " << c.graph_driven.defrag_events
    << " events, makespan " << c.graph_driven.makespan_us << " us";
  return {pass, d.str()};
}

// 6 ------------------------------------------------------------------------
Outcome bandwidth_sweep() {
  auto p = find_preset("llama8b-like");
  auto pts = sweep_bandwidth(generate(p.workload), p.machine, {33.6, 40, 50, 60, 70}, false, p.options);
  bool monotone = true, oom = false;
  std::ostringstream d;
  d << "exposed us:";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    d << ' ' << pts[i].bandwidth_gbps << "->" << pts[i].graph_driven.exposed_comm_us;
    oom = oom || pts[i].graph_driven.oom.has_value();
    if (i > 0) monotone = monotone && pts[i].graph_driven.exposed_comm_us <= pts[i - 1].graph_driven.exposed_comm_us;
  }
  const double slow = static_cast<double>(pts.front().graph_driven.makespan_us) /
                      static_cast<double>(pts.front().no_offload.makespan_us);
  d << "; makespan at 33.6 is " << fmt("%.4f", slow) << "x no-offload (<= 1.05)";
  return {monotone && !oom && pts.back().graph_driven.exposed_comm_us == 0 && slow <= 1.05, d.str()};
}

// 7 ------------------------------------------------------------------------
Outcome reactive_dominance() {
  std::ostringstream d;
  bool dominates = true;
  for (const auto& p : presets()) {
    auto c = compare(generate(p.workload), p.machine, p.options);
    if (c.reactive.exposed_comm_us < c.graph_driven.exposed_comm_us) {
      dominates = false;
      d << p.name << " violates (" << c.reactive.exposed_comm_us << " < " << c.graph_driven.exposed_comm_us << "); ";
    }
  }
  auto cal = find_preset("llama8b-reactive");
  auto c = compare(generate(cal.workload), cal.machine, cal.options);
  const double slow =
      static_cast<double>(c.reactive.makespan_us) / static_cast<double>(c.no_offload.makespan_us);
  d << "reactive exposed >= graph-driven on " << (dominates ? "all " : "not all ") << presets().size()
    << " presets; llama8b-reactive slowdown " << fmt("%.3f", slow) << "x (> 2.5)";
  return {dominates && !c.reactive.oom && slow > 2.5, d.str()};
}

// 8 ------------------------------------------------------------------------
std::string stages(const GraphProgram& g, const MachineModel& m, const PlanOptions& o) {
  auto s = topo_order(g);
  auto plan = plan_offload(g, m, o);
  auto rep = simulate(plan.graph, plan.schedule, m);
  std::ostringstream all;
  all << to_json(s).dump() << to_json(plan.plan).dump() << to_json(plan.graph).dump() << to_json(plan.initial).dump()
      << to_json(plan.schedule).dump() << to_json(plan.log).dump() << to_json(rep).dump()
      << to_json(run_reactive_baseline(g, s, m)).dump();
  return all.str();
}

Outcome conservation_and_determinism() {
  // The simulator throws on any conservation mismatch, so reaching the end
  // means the check never fired. Count how many times it ran.
  std::int64_t checks = 0;
  int identical = 0, total = 0;
  auto run = [&](const GraphProgram& g, const MachineModel& m, const PlanOptions& o) {
    auto a = stages(g, m, o);
    auto b = stages(g, m, o);
    ++total;
    identical += a == b;
    auto plan = plan_offload(g, m, o);
    checks += simulate(plan.graph, plan.schedule, m).conservation_checks;
  };
  for (const auto& p : presets()) run(generate(p.workload), p.machine, p.options);
  MachineModel tight;
  tight.device_capacity_bytes = 96ULL << 20;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    // Random DAGs already carry cache ops, so run them through the simulator
    // directly in both orders.
    auto g = gen_random_dag(RandomDagSpec{}, seed);
    auto s = topo_order(g);
    auto r = refine_order(g, s, tight);
    auto a = to_json(simulate(g, r, tight)).dump() + to_json(r).dump();
    auto b = to_json(simulate(g, refine_order(g, s, tight), tight)).dump() + to_json(r).dump();
    ++total;
    identical += a == b;
    checks += simulate(g, s, tight).conservation_checks + simulate(g, r, tight).conservation_checks;
  }
  std::ostringstream d;
  d << identical << "/" << total << " runs byte-identical across two executions; " << checks
    << " conservation checks, none fired";
  return {identical == total && checks > 0, d.str()};
}

}  // namespace

int main() {
  criterion(1, "schedule-validity", 30, schedule_validity);
  criterion(2, "oracle-proximity", 120, oracle_proximity);
  criterion(3, "prefetch-regimes", 5, prefetch_regimes);
  criterion(4, "kv-offload-identity", 10, kv_identity);
  criterion(5, "defrag-elimination", 30, defrag_elimination);
  criterion(6, "bandwidth-sweep", 30, bandwidth_sweep);
  criterion(7, "reactive-dominance", 60, reactive_dominance);
  criterion(8, "conservation-determinism", 120, conservation_and_determinism);
  std::printf("%d of 8 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
