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

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "streamprefill/metrics.hpp"
#include "streamprefill/simulator.hpp"
#include "streamprefill/workload.hpp"

namespace streamprefill {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceSource {
  std::string preset;  // empty when loading from path
  std::string path;
  std::size_t num_queries = 100;
  std::optional<double> qps;
  std::uint64_t seed = 1;
  double delay_multiplier = 1.0;
};

struct ExperimentConfig {
  TraceSource trace;
  SimConfig sim;
  TtftAnchor anchor = TtftAnchor::InputComplete;
  std::string out_dir = "runs/out";
};

// Sets a dotted key ("pool.utilization") from command-line text. Values that
// parse as JSON keep their type; anything else is stored as a string.
inline void apply_override(nlohmann::json& config, std::string_view dotted, std::string_view text) {
  nlohmann::json* node = &config;
  std::string_view rest = dotted;
  while (true) {
    const auto dot = rest.find('.');
    const std::string key(rest.substr(0, dot));
    if (key.empty()) throw ConfigError("bad override key '" + std::string(dotted) + "'");
    if (dot == std::string_view::npos) {
      auto parsed = nlohmann::json::parse(text, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(std::string(text)) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) *node = nlohmann::json::object();
    rest = rest.substr(dot + 1);
  }
}

namespace detail {

template <class T>
T field(const nlohmann::json& j, std::string_view path, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + std::string(path) + key + "' has the wrong type");
  }
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

// base_dir anchors relative profile and trace paths (the config file's directory).
inline ExperimentConfig resolve_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::field;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  const auto seed = field<std::uint64_t>(j, "", "seed", 1);
  cfg.sim.seed = seed;

  const auto& t = j.contains("trace") ? j.at("trace") : nlohmann::json::object();
  cfg.trace.preset = field<std::string>(t, "trace.", "preset", "");
  cfg.trace.path = detail::resolve_path(base_dir, field<std::string>(t, "trace.", "path", ""));
  if (cfg.trace.preset.empty() == cfg.trace.path.empty()) {
    throw ConfigError("config field 'trace' needs exactly one of 'preset' or 'path'");
  }
  cfg.trace.num_queries = field<std::size_t>(t, "trace.", "num_queries", 100);
  if (t.contains("qps") && !t.at("qps").is_null()) cfg.trace.qps = field<double>(t, "trace.", "qps", 1.0);
  cfg.trace.seed = field<std::uint64_t>(t, "trace.", "seed", seed);
  cfg.trace.delay_multiplier = field<double>(j, "", "delay_multiplier", 1.0);
  if (!(cfg.trace.delay_multiplier > 0.0)) throw ConfigError("config field 'delay_multiplier' must be positive");

  // Flag (already merged into the JSON) > config > SCHEDULER_TYPE.
  std::string scheduler = field<std::string>(j, "", "scheduler", "");
  if (scheduler.empty()) {
    const char* env = std::getenv("SCHEDULER_TYPE");
    scheduler = env && *env ? env : "DEFAULT_VLLM";
  }
  try {
    cfg.sim.policy = parse_policy(scheduler);
    cfg.sim.eviction_override = parse_eviction(field<std::string>(j, "", "eviction", "cost"));
    cfg.anchor = parse_anchor(field<std::string>(j, "", "ttft_anchor", "input_complete"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const auto& b = j.contains("budget") ? j.at("budget") : nlohmann::json::object();
  cfg.sim.budget.max_tokens_per_step = field<std::size_t>(b, "budget.", "max_tokens_per_step", 8192);
  if (cfg.sim.budget.max_tokens_per_step == 0) throw ConfigError("config field 'budget.max_tokens_per_step' must be >= 1");

  const auto& g = j.contains("model_geometry") ? j.at("model_geometry") : nlohmann::json::object();
  auto& geo = cfg.sim.geometry;
  geo.num_layers = field<std::uint64_t>(g, "model_geometry.", "num_layers", geo.num_layers);
  geo.hidden_dim = field<std::uint64_t>(g, "model_geometry.", "hidden_dim", geo.hidden_dim);
  geo.num_heads = field<std::uint64_t>(g, "model_geometry.", "num_heads", geo.num_heads);
  geo.kv_heads = field<std::uint64_t>(g, "model_geometry.", "kv_heads", geo.kv_heads);
  geo.bytes_per_param = field<std::uint64_t>(g, "model_geometry.", "bytes_per_param", geo.bytes_per_param);
  geo.block_size = field<std::size_t>(g, "model_geometry.", "block_size", geo.block_size);
  try {
    geo.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const auto& p = j.contains("pool") ? j.at("pool") : nlohmann::json::object();
  const auto gpu_bytes = field<double>(p, "pool.", "gpu_mem_bytes", 141e9);
  const auto utilization = field<double>(p, "pool.", "utilization", 0.8);
  if (!(utilization > 0.0 && utilization <= 1.0)) throw ConfigError("config field 'pool.utilization' must be in (0, 1]");
  cfg.sim.gpu_capacity_blocks = field<std::size_t>(p, "pool.", "gpu_capacity_blocks", 0);
  if (cfg.sim.gpu_capacity_blocks == 0) {
    cfg.sim.gpu_capacity_blocks = capacity_blocks(static_cast<Bytes>(gpu_bytes), utilization, geo);
  }
  const auto cpu_ratio = field<double>(p, "pool.", "cpu_to_gpu_ratio", 4.0);
  cfg.sim.cpu_capacity_blocks = field<std::size_t>(
      p, "pool.", "cpu_capacity_blocks",
      static_cast<std::size_t>(cpu_ratio * static_cast<double>(cfg.sim.gpu_capacity_blocks)));

  const auto profile_path = detail::resolve_path(base_dir, field<std::string>(j, "", "profile", ""));
  if (profile_path.empty()) throw ConfigError("config field 'profile' is required");
  try {
    cfg.sim.profile = load_profile(profile_path);
  } catch (const InvalidProfileError& e) {
    throw ConfigError(std::string("config field 'profile': ") + e.what());
  }
  cfg.sim.streaming_enabled = field<bool>(j, "", "streaming", true);
  cfg.out_dir = field<std::string>(j, "", "out", cfg.out_dir);
  return cfg;
}

inline nlohmann::json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  return resolve_config(read_config_json(path), std::filesystem::path(path).parent_path());
}

// Synthetic spec from JSON; unspecified fields come from "preset" (or defaults).
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  using detail::field;
  SyntheticSpec s = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : SyntheticSpec{};
  s.name = field<std::string>(j, "", "name", s.name);
  if (j.contains("mode")) s.mode = j.at("mode").get<std::string>() == "update" ? InputMode::Update : InputMode::Append;
  s.num_queries = field<std::size_t>(j, "", "num_queries", s.num_queries);
  s.qps = field<double>(j, "", "qps", s.qps);
  s.seed = field<std::uint64_t>(j, "", "seed", s.seed);
  s.query_tokens = field<std::size_t>(j, "", "query_tokens", s.query_tokens);
  s.max_tokens_per_query = field<std::size_t>(j, "", "max_tokens_per_query", s.max_tokens_per_query);
  if (j.contains("tokens_per_query")) {
    const auto& t = j.at("tokens_per_query");
    if (t.contains("p95")) {
      s.tokens_per_query = LogNormalDist::from_p50_p95(t.at("p50").get<double>(), t.at("p95").get<double>());
    } else {
      s.tokens_per_query = {field<double>(t, "tokens_per_query.", "median", s.tokens_per_query.median),
                            field<double>(t, "tokens_per_query.", "sigma", s.tokens_per_query.sigma)};
    }
  }
  if (j.contains("retrieval_latency")) {
    const auto& t = j.at("retrieval_latency");
    if (t.is_null()) {
      s.retrieval_latency.reset();
    } else if (t.contains("p95")) {
      s.retrieval_latency = LogNormalDist::from_p50_p95(t.at("p50").get<double>(), t.at("p95").get<double>());
    } else {
      s.retrieval_latency = LogNormalDist{t.at("median").get<double>(), t.at("sigma").get<double>()};
    }
  }
  if (j.contains("inter_chunk")) {
    const auto& t = j.at("inter_chunk");
    s.inter_chunk = {field<double>(t, "inter_chunk.", "median", s.inter_chunk.median),
                     field<double>(t, "inter_chunk.", "sigma", s.inter_chunk.sigma)};
  }
  if (j.contains("chunks_per_query")) {
    const auto& c = j.at("chunks_per_query");
    auto& d = s.chunks_per_query;
    const auto kind = field<std::string>(c, "chunks_per_query.", "kind", d.kind == ChunkCountDist::Kind::Normal ? "normal" : "geometric");
    d.kind = kind == "geometric" ? ChunkCountDist::Kind::Geometric : ChunkCountDist::Kind::Normal;
    d.mean = field<double>(c, "chunks_per_query.", "mean", d.mean);
    d.stddev = field<double>(c, "chunks_per_query.", "stddev", d.stddev);
    d.p = field<double>(c, "chunks_per_query.", "p", d.p);
    d.min_chunks = field<int>(c, "chunks_per_query.", "min", d.min_chunks);
    d.max_chunks = field<int>(c, "chunks_per_query.", "max", d.max_chunks);
  }
  s.validate();
  return s;
}

inline Trace build_trace(const TraceSource& src) {
  Trace trace;
  if (!src.preset.empty()) {
    auto spec = preset(src.preset);
    spec.num_queries = src.num_queries;
    spec.seed = src.seed;
    if (src.qps) spec.qps = *src.qps;
    trace = generate_synthetic(spec);
  } else {
    trace = load_trace(src.path);
    if (src.qps) trace = rescale_qps(trace, *src.qps, src.seed);
  }
  if (src.delay_multiplier != 1.0) trace = apply_delay_multiplier(trace, src.delay_multiplier);
  return trace;
}

inline std::string trace_id(const TraceSource& src) {
  std::ostringstream s;
  s << (src.preset.empty() ? src.path : src.preset) << "/n=" << src.num_queries << "/seed=" << src.seed
    << "/qps=" << (src.qps ? fmt6(*src.qps) : std::string("native")) << "/delay=" << fmt6(src.delay_multiplier);
  return s.str();
}

inline std::string run_label(const SimConfig& sim) {
  if (!sim.streaming_enabled) return std::string(to_string(sim.policy)) + "-NS";
  return std::string(to_string(sim.policy)) + "/" + std::string(to_string(sim.eviction_override));
}

struct RunOutput {
  SimResult result;
  Report report;
};

inline RunOutput execute(const ExperimentConfig& cfg, const Trace& trace) {
  RunOutput out;
  out.result = run(trace, cfg.sim);
  out.report = build_report(out.result, run_label(cfg.sim), trace_id(cfg.trace));
  return out;
}

// Writes requests.csv, events.csv, report.csv and ccdf_ttft.csv under dir.
inline void write_run(const RunOutput& run_out, const std::filesystem::path& dir, TtftAnchor anchor) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  auto requests = open("requests.csv");
  write_requests(run_out.report, requests);
  auto events = open("events.csv");
  write_events(run_out.result, events);
  auto report = open("report.csv");
  write_report(run_out.report, report);
  auto ccdf_file = open("ccdf_ttft.csv");
  write_ccdf(run_out.report.values(anchor), ccdf_file);
}

enum class SweepAxis { Qps, Scheduler, Eviction };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "qps") return SweepAxis::Qps;
  if (s == "scheduler") return SweepAxis::Scheduler;
  if (s == "eviction") return SweepAxis::Eviction;
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) + "' (expected qps, scheduler or eviction)");
}

struct SweepCell {
  std::string name;
  ExperimentConfig config;
  // Index of this cell's non-streaming baseline; -1 for baselines.
  int baseline = -1;
};

struct SweepOutput {
  std::vector<SweepCell> cells;
  std::vector<RunOutput> runs;
  SpeedupTable table;
};

inline std::vector<SweepCell> plan_sweep(const ExperimentConfig& base, SweepAxis axis,
                                         const std::vector<std::string>& values) {
  std::vector<SweepCell> cells;
  auto baseline_of = [](ExperimentConfig c) {
    c.sim.streaming_enabled = false;
    c.sim.policy = SchedulerPolicy::DefaultVllm;
    return c;
  };
  if (axis == SweepAxis::Qps) {
    for (const auto& v : values) {
      auto c = base;
      c.trace.qps = std::stod(v);
      cells.push_back({"qps=" + v + "-NS", baseline_of(c), -1});
      cells.push_back({"qps=" + v, c, static_cast<int>(cells.size()) - 1});
    }
    return cells;
  }
  cells.push_back({"NON_STREAMING", baseline_of(base), -1});
  for (const auto& v : values) {
    auto c = base;
    c.sim.streaming_enabled = true;
    if (axis == SweepAxis::Scheduler) c.sim.policy = parse_policy(v);
    else c.sim.eviction_override = parse_eviction(v);
    cells.push_back({v, c, 0});
  }
  return cells;
}

// Runs every cell (concurrently) and tabulates speedups over each cell's baseline.
inline SweepOutput run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                             const std::vector<double>& percentiles = {50, 75, 95, 99}) {
  SweepOutput out;
  out.cells = plan_sweep(base, axis, values);
  std::vector<std::future<RunOutput>> jobs;
  for (const auto& cell : out.cells) {
    jobs.push_back(std::async(std::launch::async, [&cell] {
      const auto trace = build_trace(cell.config.trace);
      return execute(cell.config, trace);
    }));
  }
  for (auto& job : jobs) out.runs.push_back(job.get());
  out.table.percentiles = percentiles;
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    if (out.cells[i].baseline < 0) continue;
    auto t = speedup_table(out.runs[static_cast<std::size_t>(out.cells[i].baseline)].report, {out.runs[i].report},
                           percentiles, base.anchor);
    out.table.labels.push_back(out.cells[i].name);
    out.table.cells.push_back(t.cells.front());
  }
  return out;
}

}  // namespace streamprefill
