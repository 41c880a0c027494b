/* Copyright 2026 The streamprefill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamprefill.hpp"

namespace sp = streamprefill;

namespace {

struct RunFlags {
  std::string config_path;
  std::string scheduler;
  std::string eviction;
  std::string qps;
  std::string token_budget;
  std::string gpu_mem_bytes;
  std::string utilization;
  std::string delay_multiplier;
  bool non_streaming = false;
  std::string seed;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--scheduler", scheduler, "DEFAULT_VLLM | FCFS | MCPS | LCAS");
    app->add_option("--eviction", eviction, "recompute | swap | cost");
    app->add_option("--qps", qps, "Replay rate in queries per second");
    app->add_option("--token-budget", token_budget, "Max new tokens per scheduling step");
    app->add_option("--gpu-mem-bytes", gpu_mem_bytes, "GPU memory used to size the block pool");
    app->add_option("--utilization", utilization, "Fraction of GPU memory given to KV cache");
    app->add_option("--delay-multiplier", delay_multiplier, "Stretch intra-request chunk delays");
    app->add_flag("--non-streaming", non_streaming, "Buffer each request until its input completes");
    app->add_option("--seed", seed, "Seed for trace generation");
    app->add_option("--out", out, "Output directory");
    app->allow_extras();
  }

  // Merges flags and trailing --key=value pairs into the config JSON.
  sp::ExperimentConfig resolve(const std::vector<std::string>& extras) const {
    auto j = sp::read_config_json(config_path);
    for (const auto& arg : extras) {
      if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos) {
        throw sp::ConfigError("unrecognised argument '" + arg + "' (overrides look like --key.path=value)");
      }
      const auto eq = arg.find('=');
      sp::apply_override(j, arg.substr(2, eq - 2), arg.substr(eq + 1));
    }
    auto set = [&](const std::string& value, const char* key) {
      if (!value.empty()) sp::apply_override(j, key, value);
    };
    set(scheduler, "scheduler");
    set(eviction, "eviction");
    set(qps, "trace.qps");
    set(token_budget, "budget.max_tokens_per_step");
    if (!gpu_mem_bytes.empty()) {
      sp::apply_override(j, "pool.gpu_mem_bytes", gpu_mem_bytes);
      sp::apply_override(j, "pool.gpu_capacity_blocks", "null");
    }
    set(utilization, "pool.utilization");
    set(delay_multiplier, "delay_multiplier");
    if (non_streaming) sp::apply_override(j, "streaming", "false");
    set(seed, "seed");
    if (!seed.empty()) sp::apply_override(j, "trace.seed", seed);
    set(out, "out");
    return sp::resolve_config(j, std::filesystem::path(config_path).parent_path());
  }
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_summary(const sp::Report& rep) {
  std::printf("%-22s n=%zu  ttft_after_input p50=%.4fs p95=%.4fs p99=%.4fs  ttft p50=%.3fs  completion=%.1fs  "
              "preempt r/s=%zu/%zu  invalidated=%zu\n",
              rep.label.c_str(), rep.rows.size(), rep.ttft_after_input.p50, rep.ttft_after_input.p95,
              rep.ttft_after_input.p99, rep.ttft.p50, rep.completion_time, rep.preempt_recompute, rep.preempt_swap,
              rep.tokens_invalidated);
}

int cmd_run(const RunFlags& flags, const std::vector<std::string>& extras) {
  const auto cfg = flags.resolve(extras);
  const auto trace = sp::build_trace(cfg.trace);
  const auto out = sp::execute(cfg, trace);
  sp::write_run(out, cfg.out_dir, cfg.anchor);
  print_summary(out.report);
  std::printf("wrote %s/{requests,events,report,ccdf_ttft}.csv\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const RunFlags& flags, const std::vector<std::string>& extras, const std::string& axis_name,
              const std::string& values_csv) {
  const auto cfg = flags.resolve(extras);
  const auto axis = sp::parse_axis(axis_name);
  auto values = split_csv(values_csv);
  if (values.empty()) {
    if (axis == sp::SweepAxis::Scheduler) values = {"DEFAULT_VLLM", "FCFS", "MCPS", "LCAS"};
    else if (axis == sp::SweepAxis::Eviction) values = {"recompute", "swap", "cost"};
    else throw sp::ConfigError("--values is required for a qps sweep");
  }
  const auto out = sp::run_sweep(cfg, axis, values);
  const std::filesystem::path root(cfg.out_dir);
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    sp::write_run(out.runs[i], root / out.cells[i].name, cfg.anchor);
    print_summary(out.runs[i].report);
  }
  std::ofstream table(root / "speedup.csv");
  sp::write_speedup_table(out.table, table);
  std::cout << "\nspeedup vs non-streaming baseline\n";
  sp::write_speedup_table(out.table, std::cout);
  return 0;
}

int cmd_generate(const std::string& preset_name, const std::string& spec_path, const std::string& out_path,
                 std::size_t num_queries, double qps, std::uint64_t seed) {
  sp::SyntheticSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw std::runtime_error("cannot open spec " + spec_path);
    spec = sp::synthetic_spec_from_json(nlohmann::json::parse(in));
  } else {
    spec = sp::preset(preset_name);
  }
  if (num_queries != static_cast<std::size_t>(-1)) spec.num_queries = num_queries;
  if (qps > 0.0) spec.qps = qps;
  if (seed != 0) spec.seed = seed;
  const auto trace = sp::generate_synthetic(spec);
  sp::save_trace(trace, out_path);
  const auto s = sp::summarize(trace);
  std::printf("%s: %zu queries, %zu events -> %s\n", trace.name.c_str(), s.num_queries, trace.events.size(),
              out_path.c_str());
  std::printf("tokens/query  mean=%.0f  p50=%.0f  p95=%.0f\n", s.tokens_mean, s.tokens_p50, s.tokens_p95);
  std::printf("inter-chunk median=%.1f ms   mean query duration=%.2f s\n", s.inter_chunk_median * 1e3,
              s.duration_mean);
  std::printf("chunks/query histogram:");
  for (const auto& [chunks, count] : s.chunk_histogram) std::printf(" %zu:%zu", chunks, count);
  std::printf("\n");
  return 0;
}

int cmd_bench(const std::string& policy_name, const std::string& counts_csv, std::size_t iterations) {
  const auto policy = sp::parse_policy(policy_name);
  std::printf("%-12s %10s %12s %12s\n", "policy", "requests", "p50_us", "p99_us");
  for (const auto& c : split_csv(counts_csv)) {
    const auto r = sp::bench_scheduler(policy, std::stoul(c), iterations);
    std::printf("%-12s %10zu %12.2f %12.2f\n", std::string(sp::to_string(policy)).c_str(), r.num_requests, r.p50_us,
                r.p99_us);
  }
  return 0;
}

// Samples file: one "tokens,seconds" pair per line; '#' lines are comments.
int cmd_fit_profile(const std::string& samples_path, const std::string& name, double swap_per_block,
                    double step_overhead, const std::string& out_path) {
  std::ifstream in(samples_path);
  if (!in) throw std::runtime_error("cannot open samples " + samples_path);
  std::vector<sp::LatencySample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("tokens", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("bad sample line '" + line + "'");
    samples.push_back({std::stoul(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  sp::PerfProfile p{name, sp::fit_profile(samples), swap_per_block, step_overhead};
  sp::validate(p);
  std::ofstream out(out_path);
  out << sp::profile_to_json(p).dump(2) << '\n';
  std::printf("wrote %s (%zu samples)\n", out_path.c_str(), p.recompute_samples.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming-prefill scheduler simulator"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "Simulate one configuration");
  run_flags.attach(run);

  RunFlags sweep_flags;
  std::string axis;
  std::string values;
  auto* sweep = app.add_subcommand("sweep", "Run one configuration across an axis and tabulate speedups");
  sweep_flags.attach(sweep);
  sweep->add_option("--axis", axis, "qps | scheduler | eviction")->required();
  sweep->add_option("--values", values, "Comma-separated axis values");

  std::string preset_name;
  std::string spec_path;
  std::string gen_out;
  std::size_t num_queries = static_cast<std::size_t>(-1);
  double gen_qps = 0.0;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("generate", "Write a synthetic trace and print its statistics");
  auto* preset_opt = gen->add_option("--preset", preset_name, "crawler-like | anns-like");
  gen->add_option("--spec", spec_path, "Synthetic spec (JSON)")->excludes(preset_opt);
  gen->add_option("--out", gen_out, "Trace file to write")->required();
  gen->add_option("--num-queries", num_queries, "Number of queries");
  gen->add_option("--qps", gen_qps, "Arrival rate");
  gen->add_option("--seed", gen_seed, "Generator seed");

  std::string bench_policy = "FCFS";
  std::string bench_counts = "50,500,5000";
  std::size_t bench_iters = 1000;
  auto* bench = app.add_subcommand("bench-scheduler", "Time prioritize + feasibility per step");
  bench->add_option("--scheduler", bench_policy, "Policy to time");
  bench->add_option("--requests", bench_counts, "Comma-separated request counts");
  bench->add_option("--iterations", bench_iters, "Timed iterations per count")->check(CLI::Range(1000, 100000000));

  std::string samples_path;
  std::string profile_name = "custom";
  double swap_per_block = 0.0;
  double step_overhead = 0.0;
  std::string profile_out;
  auto* fit = app.add_subcommand("fit-profile", "Build a latency profile from measured prefill samples");
  fit->add_option("--samples", samples_path, "CSV of tokens,seconds")->required();
  fit->add_option("--name", profile_name, "Hardware name");
  fit->add_option("--swap-seconds-per-block", swap_per_block, "Measured per-block transfer time")->required();
  fit->add_option("--step-overhead", step_overhead, "Fixed per-step cost in seconds");
  fit->add_option("--out", profile_out, "Profile file to write")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_flags, run->remaining());
    if (*sweep) return cmd_sweep(sweep_flags, sweep->remaining(), axis, values);
    if (*gen) {
      if (preset_name.empty() && spec_path.empty()) throw std::invalid_argument("generate needs --preset or --spec");
      return cmd_generate(preset_name, spec_path, gen_out, num_queries, gen_qps, gen_seed);
    }
    if (*bench) return cmd_bench(bench_policy, bench_counts, bench_iters);
    if (*fit) return cmd_fit_profile(samples_path, profile_name, swap_per_block, step_overhead, profile_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
