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
#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tierplan/tierplan.hpp"

namespace {

using namespace tierplan;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitOom = 2;
constexpr int kExitCheckFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw UsageError("cannot write " + path);
    }
  }
  std::ostream& get() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

void write(const std::string& path, const ordered_json& j) {
  Output out(path);
  out.get() << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shared inputs. Precedence: flags > files > preset.

struct Inputs {
  std::string preset;
  std::string spec_file;
  std::string graph_file;
  std::string machine_file;
  std::string options_file;
  std::optional<std::uint64_t> capacity_bytes;
  std::optional<std::uint64_t> remote_capacity_bytes;
  std::optional<double> bandwidth_gbps;
  std::optional<std::int64_t> overhead_us;
  std::optional<std::uint64_t> alignment_bytes;
  std::vector<std::string> kinds;
  std::optional<double> min_gap_ratio;
  std::optional<std::uint64_t> min_tensor_bytes;
  bool all_windows = false;
  std::optional<double> alpha;
  std::optional<double> beta;
  bool no_refine = false;
};

void add_workload_flags(CLI::App* c, Inputs& in) {
  auto* p = c->add_option("--preset", in.preset, "Built-in workload and machine (see `presets`)");
  auto* s = c->add_option("--spec", in.spec_file, "Workload spec JSON ({\"workload\": \"train\"|\"decode\", ...})");
  auto* g = c->add_option("--graph", in.graph_file, "Graph JSON (compute ops only)");
  s->excludes(g);
  g->excludes(s);
  (void)p;
}

void add_machine_flags(CLI::App* c, Inputs& in) {
  c->add_option("--machine", in.machine_file, "Machine JSON; missing keys keep defaults");
  c->add_option("--capacity-bytes", in.capacity_bytes, "Device capacity");
  c->add_option("--remote-capacity-bytes", in.remote_capacity_bytes, "Remote pool capacity");
  c->add_option("--bandwidth", in.bandwidth_gbps, "R2D and D2R bandwidth in GB/s (GB = 1e9 bytes)")
      ->check(CLI::PositiveNumber);
  c->add_option("--overhead-us", in.overhead_us, "Reactive per-transfer orchestration cost")->check(CLI::NonNegativeNumber);
  c->add_option("--alignment-bytes", in.alignment_bytes, "Allocator alignment");
}

void add_plan_flags(CLI::App* c, Inputs& in) {
  c->add_option("--options", in.options_file, "Planning options JSON");
  c->add_option("--kinds", in.kinds, "Offloadable tensor kinds")->delimiter(',');
  c->add_option("--min-gap-ratio", in.min_gap_ratio, "Idle window / round-trip transfer time threshold");
  c->add_option("--min-tensor-bytes", in.min_tensor_bytes, "Smallest offload candidate");
  c->add_flag("--all-windows", in.all_windows, "One offload per qualifying idle window");
  c->add_option("--alpha", in.alpha, "Cost weight per exposed microsecond");
  c->add_option("--beta", in.beta, "Cost weight per resident byte-microsecond");
  c->add_flag("--no-refine", in.no_refine, "Keep the topological order after insertion");
}

struct Resolved {
  GraphProgram graph;
  MachineModel machine;
  PlanOptions options;
};

Resolved resolve(const Inputs& in) {
  Resolved r;
  std::optional<Preset> preset;
  if (!in.preset.empty()) {
    try {
      preset = find_preset(in.preset);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    r.machine = preset->machine;
    r.options = preset->options;
  }
  if (!in.spec_file.empty()) {
    r.graph = generate(spec_from_json(read_json_file(in.spec_file)));
  } else if (!in.graph_file.empty()) {
    r.graph = graph_from_json(read_json_file(in.graph_file));
  } else if (preset) {
    r.graph = generate(preset->workload);
  } else {
    throw UsageError("need one of --preset, --spec or --graph");
  }
  auto report = validate(r.graph);
  if (!report.empty()) throw SchemaError("invalid graph:\n" + describe(report));

  if (!in.machine_file.empty()) r.machine = machine_from_json(read_json_file(in.machine_file), r.machine);
  if (in.capacity_bytes) r.machine.device_capacity_bytes = *in.capacity_bytes;
  if (in.remote_capacity_bytes) r.machine.remote_capacity_bytes = *in.remote_capacity_bytes;
  if (in.bandwidth_gbps)
    r.machine.r2d_bandwidth_bytes_per_us = r.machine.d2r_bandwidth_bytes_per_us = gbps_to_bytes_per_us(*in.bandwidth_gbps);
  if (in.overhead_us) r.machine.reactive_orchestration_overhead_us = *in.overhead_us;
  if (in.alignment_bytes) r.machine.allocator_alignment_bytes = *in.alignment_bytes;
  check_machine(r.machine);

  if (!in.options_file.empty()) r.options = options_from_json(read_json_file(in.options_file), r.options);
  if (!in.kinds.empty()) {
    r.options.policy.kinds_enabled.clear();
    for (const auto& k : in.kinds) r.options.policy.kinds_enabled.insert(parse_tensor_kind(k));
  }
  if (in.min_gap_ratio) r.options.policy.min_gap_ratio = *in.min_gap_ratio;
  if (in.min_tensor_bytes) r.options.policy.min_tensor_bytes = *in.min_tensor_bytes;
  if (in.all_windows) r.options.policy.all_windows = true;
  if (in.alpha) r.options.weights.alpha = *in.alpha;
  if (in.beta) r.options.weights.beta = *in.beta;
  if (in.no_refine) r.options.refine = false;
  check_policy(r.options.policy);
  check_weights(r.options.weights);
  return r;
}

// A planned bundle: everything `sim`, `sweep` and `trace` need without
// re-planning.
struct Planned {
  GraphProgram graph;
  Schedule schedule;
  MachineModel machine;
};

ordered_json bundle_json(const Resolved& r, const PlanResult& p, bool emit_plan) {
  ordered_json j = {{"machine", to_json(r.machine)},
                    {"options", to_json(r.options)},
                    {"graph", to_json(p.graph)},
                    {"schedule", to_json(p.schedule)},
                    {"log", to_json(p.log)}};
  if (emit_plan) j["plan"] = to_json(p.plan);
  return j;
}

Planned planned_from_json(const json& j) {
  detail::only_keys(j, {"machine", "options", "graph", "schedule", "log", "plan"}, "planned");
  Planned p;
  p.machine = machine_from_json(detail::need(j, "machine", "planned"));
  p.graph = graph_from_json(detail::need(j, "graph", "planned"));
  auto report = validate(p.graph);
  if (!report.empty()) throw SchemaError("invalid graph:\n" + describe(report));
  p.schedule = schedule_from_json(detail::need(j, "schedule", "planned"), p.graph);
  if (auto err = check_order(p.graph, p.schedule.order); !err.empty()) throw SchemaError("schedule: " + err);
  return p;
}

// Inputs for commands that simulate a plan: a bundle, or a workload planned here.
Planned planned_or_plan(const std::string& bundle, const Inputs& in) {
  if (!bundle.empty()) {
    auto p = planned_from_json(read_json_file(bundle));
    // Machine flags still apply on top of the bundle's machine.
    if (in.capacity_bytes) p.machine.device_capacity_bytes = *in.capacity_bytes;
    if (in.remote_capacity_bytes) p.machine.remote_capacity_bytes = *in.remote_capacity_bytes;
    if (in.bandwidth_gbps)
      p.machine.r2d_bandwidth_bytes_per_us = p.machine.d2r_bandwidth_bytes_per_us =
          gbps_to_bytes_per_us(*in.bandwidth_gbps);
    if (in.overhead_us) p.machine.reactive_orchestration_overhead_us = *in.overhead_us;
    check_machine(p.machine);
    return p;
  }
  auto r = resolve(in);
  auto plan = plan_offload(r.graph, r.machine, r.options);
  return {std::move(plan.graph), std::move(plan.schedule), r.machine};
}

int report_result(const SimReport& rep, const std::string& out, bool full) {
  auto j = to_json(rep, full);
  if (rep.oom) {
    // The oom record always goes to stdout, even when a file was requested.
    std::cout << j["oom"].dump(2) << '\n';
    if (!out.empty() && out != "-") write(out, j);
    return kExitOom;
  }
  write(out, j);
  return kExitOk;
}

std::string fmt_bytes(Bytes b) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << static_cast<double>(b) / 1e9 << " GB";
  return os.str();
}

std::string fmt_us(Micros us) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << static_cast<double>(us) / 1e3 << " ms";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tierplan: plan and simulate tensor offload between device and remote memory.\n"
      "Settings resolve as CLI flags > spec/graph/machine/options files > preset defaults.\n"
      "Exit codes: 0 ok, 1 invalid input, 2 out of memory (oom record on stdout), 3 sweep self-check failed."};
  app.require_subcommand(1);

  Inputs in;
  std::string out;
  std::string bundle;
  std::uint64_t seed = 0;

  auto* presets_cmd = app.add_subcommand("presets", "List built-in presets");

  auto* gen = app.add_subcommand("gen", "Write a graph from a preset, a spec file or a random DAG");
  add_workload_flags(gen, in);
  bool random = false;
  gen->add_flag("--random", random, "Random DAG with injected cache ops (uses --seed)");
  gen->add_option("--seed", seed, "Seed for --random")->capture_default_str();
  gen->add_option("-o,--out", out, "Output file (default stdout)");

  auto* plan = app.add_subcommand("plan", "Insert cache ops and refine the order; writes a planned bundle");
  add_workload_flags(plan, in);
  add_machine_flags(plan, in);
  add_plan_flags(plan, in);
  bool emit_plan = false;
  plan->add_flag("--emit-plan", emit_plan, "Include the offload plan in the bundle");
  plan->add_option("-o,--out", out, "Output file (default stdout)");

  auto* sim = app.add_subcommand("sim", "Simulate a planned bundle (or plan a workload first)");
  bool summary = false;
  for (auto* c : {sim, app.add_subcommand("trace", "Chrome trace-event JSON of a simulated run")}) {
    c->add_option("--planned", bundle, "Bundle written by `plan`");
    add_workload_flags(c, in);
    add_machine_flags(c, in);
    add_plan_flags(c, in);
    c->add_option("-o,--out", out, "Output file (default stdout)");
  }
  sim->add_flag("--summary", summary, "Omit the timeline and memory samples");
  auto* trace = app.get_subcommand("trace");

  auto* cmp = app.add_subcommand("compare", "No-offload vs reactive vs graph-driven on one workload");
  add_workload_flags(cmp, in);
  add_machine_flags(cmp, in);
  add_plan_flags(cmp, in);
  bool as_json = false;
  cmp->add_flag("--json", as_json, "Emit JSON instead of a table");
  cmp->add_option("-o,--out", out, "Output file (default stdout)");

  auto* sweep = app.add_subcommand("sweep", "Exposed communication across R2D/D2R bandwidths (CSV)");
  std::vector<double> bandwidths{33.6, 40, 50, 60, 70};
  bool replan = false;
  add_workload_flags(sweep, in);
  add_machine_flags(sweep, in);
  add_plan_flags(sweep, in);
  sweep->add_option("--bandwidths", bandwidths, "GB/s values, ascending")->delimiter(',')->capture_default_str();
  sweep->add_flag("--replan", replan, "Plan each point from scratch instead of fixing the schedule");
  sweep->add_option("-o,--out", out, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (presets_cmd->parsed()) {
      for (const auto& p : presets()) std::cout << std::left << std::setw(24) << p.name << p.description << '\n';
      return kExitOk;
    }
    if (gen->parsed()) {
      if (random) {
        if (!in.preset.empty() || !in.spec_file.empty() || !in.graph_file.empty())
          throw UsageError("--random takes no other workload source");
        write(out, to_json(gen_random_dag(RandomDagSpec{}, seed)));
      } else {
        write(out, to_json(resolve(in).graph));
      }
      return kExitOk;
    }
    if (plan->parsed()) {
      auto r = resolve(in);
      auto p = plan_offload(r.graph, r.machine, r.options);
      write(out, bundle_json(r, p, emit_plan));
      return kExitOk;
    }
    if (sim->parsed() || trace->parsed()) {
      auto p = planned_or_plan(bundle, in);
      auto rep = simulate(p.graph, p.schedule, p.machine);
      if (sim->parsed()) return report_result(rep, out, !summary);
      write(out, emit_trace(rep));
      if (rep.oom) {
        std::cout << to_json(rep, false)["oom"].dump(2) << '\n';
        return kExitOom;
      }
      return kExitOk;
    }
    if (cmp->parsed()) {
      auto r = resolve(in);
      auto c = compare(r.graph, r.machine, r.options);
      const std::pair<const char*, const SimReport*> rows[] = {
          {"no-offload", &c.no_offload}, {"reactive", &c.reactive}, {"graph-driven", &c.graph_driven}};
      Output o(out);
      if (as_json) {
        ordered_json j = ordered_json::object();
        for (const auto& [name, rep] : rows) j[name] = to_json(*rep, false);
        o.get() << j.dump(2) << '\n';
      } else {
        auto& os = o.get();
        os << std::left << std::setw(14) << "run" << std::right << std::setw(14) << "peak" << std::setw(16)
           << "makespan" << std::setw(16) << "exposed" << std::setw(8) << "defrag" << "  oom\n";
        for (const auto& [name, rep] : rows)
          os << std::left << std::setw(14) << name << std::right << std::setw(14) << fmt_bytes(rep->peak_device_bytes)
             << std::setw(16) << fmt_us(rep->makespan_us) << std::setw(16) << fmt_us(rep->exposed_comm_us)
             << std::setw(8) << rep->defrag_events << "  " << (rep->oom ? "yes" : "no") << '\n';
      }
      // Only the planned run decides the exit code; the reactive baseline may
      // legitimately fail where the plan fits.
      if (c.graph_driven.oom) {
        std::cout << to_json(c.graph_driven, false)["oom"].dump(2) << '\n';
        return kExitOom;
      }
      return kExitOk;
    }
    if (sweep->parsed()) {
      if (bandwidths.empty()) throw UsageError("--bandwidths is empty");
      auto r = resolve(in);
      auto pts = sweep_bandwidth(r.graph, r.machine, bandwidths, replan, r.options);
      {
        Output o(out);
        write_sweep_csv(o.get(), pts);
      }
      for (const auto& p : pts)
        if (p.graph_driven.oom) {
          std::cout << to_json(p.graph_driven, false)["oom"].dump(2) << '\n';
          return kExitOom;
        }
      // Self-check: with one fixed schedule, more bandwidth never exposes more.
      if (!replan) {
        for (std::size_t i = 1; i < pts.size(); ++i)
          if (pts[i].bandwidth_gbps > pts[i - 1].bandwidth_gbps &&
              pts[i].graph_driven.exposed_comm_us > pts[i - 1].graph_driven.exposed_comm_us) {
            std::cerr << "sweep self-check failed: exposed time rises from " << pts[i - 1].bandwidth_gbps << " to "
                      << pts[i].bandwidth_gbps << " GB/s\n";
            return kExitCheckFailed;
          }
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
