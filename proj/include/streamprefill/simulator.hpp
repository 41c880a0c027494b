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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "streamprefill/costmodel.hpp"
#include "streamprefill/domain.hpp"
#include "streamprefill/kvcache.hpp"
#include "streamprefill/scheduler.hpp"
#include "streamprefill/workload.hpp"

namespace streamprefill {

struct SimConfig {
  SchedulerPolicy policy = SchedulerPolicy::Fcfs;
  EvictionMode eviction_override = EvictionMode::CostBased;
  TokenBudget budget;
  std::size_t gpu_capacity_blocks = 0;
  std::size_t cpu_capacity_blocks = 0;
  KVGeometry geometry;
  PerfProfile profile;
  bool streaming_enabled = true;
  std::uint64_t seed = 0;
  // Guard against livelock under pathological configurations.
  std::size_t max_steps = 20'000'000;
};

// Blocks that fit in `utilization` of `gpu_bytes`.
inline std::size_t capacity_blocks(Bytes gpu_bytes, double utilization, const KVGeometry& g) {
  if (!(utilization > 0.0 && utilization <= 1.0)) throw std::invalid_argument("utilization must be in (0, 1]");
  return static_cast<std::size_t>(static_cast<double>(gpu_bytes) * utilization / static_cast<double>(block_bytes(g)));
}

struct RequestRecord {
  RequestId id;
  InputMode mode = InputMode::Append;
  Seconds arrival_time = 0.0;
  Seconds input_complete_time = 0.0;
  std::optional<Seconds> first_token_time;
  std::size_t input_tokens = 0;
  std::size_t tokens_invalidated = 0;
  std::size_t preempt_recompute = 0;
  std::size_t preempt_swap = 0;
  std::size_t forced_fallbacks = 0;
  std::vector<EngineEvent> event_log;
};

struct SimResult {
  std::string trace_name;
  bool streaming = true;
  std::vector<RequestRecord> requests;
  Seconds trace_completion_time = 0.0;
  std::size_t steps = 0;
  // Time spent executing steps; busy_time / trace_completion_time is utilization.
  Seconds busy_time = 0.0;
  // Sum of every invalidate_from return during the run.
  std::size_t tokens_invalidated = 0;
  std::size_t preempt_recompute = 0;
  std::size_t preempt_swap = 0;
  std::size_t forced_fallbacks = 0;
};

class UndefinedMetricError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline Seconds ttft(std::span<const EngineEvent> log) {
  std::optional<Seconds> queued;
  std::optional<Seconds> finished;
  for (const auto& e : log) {
    if (e.kind == EngineEventKind::QUEUED && !queued) queued = e.timestamp;
    if (e.kind == EngineEventKind::FINISHED) finished = e.timestamp;
  }
  if (!queued || !finished) throw UndefinedMetricError("ttft: request has not finished");
  return *finished - *queued;
}

// Request arrival to first token.
inline Seconds ttft(const RequestRecord& r) { return ttft(r.event_log); }
inline Seconds ttft(const Request& r) { return ttft(r.event_log); }

// Input completion (the last stream event) to first token; the latency a
// user perceives once retrieval is done.
inline Seconds ttft_after_input(const RequestRecord& r) {
  if (!r.first_token_time) throw UndefinedMetricError("ttft: request has not finished");
  return *r.first_token_time - r.input_complete_time;
}

namespace detail {

inline RequestRecord make_record(const Request& r) {
  RequestRecord rec;
  rec.id = r.id;
  rec.mode = r.mode;
  rec.arrival_time = r.arrival_time;
  rec.input_complete_time = r.input_complete_time.value_or(r.arrival_time);
  rec.first_token_time = r.first_token_time;
  rec.input_tokens = r.current_input.size();
  rec.tokens_invalidated = r.total_tokens_invalidated;
  rec.preempt_recompute = r.num_preempt_recompute;
  rec.preempt_swap = r.num_preempt_swap;
  rec.forced_fallbacks = r.num_forced_fallbacks;
  rec.event_log = r.event_log;
  return rec;
}

// Largest input each request ever reaches, from record counts alone.
inline std::unordered_map<RequestId, std::size_t> peak_input_lengths(const Trace& trace) {
  std::unordered_map<RequestId, std::size_t> current;
  std::unordered_map<RequestId, std::size_t> peak;
  for (const auto& e : trace.events) {
    auto& c = current[e.request_id];
    if (e.kind == StreamEventKind::NewStream || e.kind == StreamEventKind::Update) c = e.num_tokens;
    if (e.kind == StreamEventKind::Append) c += e.num_tokens;
    peak[e.request_id] = std::max(peak[e.request_id], c);
  }
  return peak;
}

}  // namespace detail

// Replays a trace against the analytic executor. Each step ingests every
// event at or before the current time, runs one scheduling step, and charges
// step_overhead + recompute(step tokens) + swap(blocks moved).
inline SimResult run(const Trace& trace, const SimConfig& config) {
  validate_trace(trace);
  config.geometry.validate();
  validate(config.profile);
  if (config.budget.max_tokens_per_step == 0) throw std::invalid_argument("token budget must be positive");
  const std::size_t k = config.geometry.block_size;
  for (const auto& [id, len] : detail::peak_input_lengths(trace)) {
    if (blocks_needed(len, k) > config.gpu_capacity_blocks) {
      throw std::invalid_argument("request " + to_string(id) + " needs " + std::to_string(blocks_needed(len, k)) +
                                  " blocks but the GPU pool holds " + std::to_string(config.gpu_capacity_blocks));
    }
  }

  BlockPool pool(config.gpu_capacity_blocks, config.cpu_capacity_blocks);
  Scheduler scheduler({config.policy, config.eviction_override, config.budget, k}, config.profile);
  std::vector<Request> table;
  std::unordered_map<RequestId, std::size_t> index;
  // Non-streaming: inputs accumulate here until Finish.
  std::unordered_map<RequestId, Request> buffered;
  std::vector<std::size_t> active;

  SimResult result;
  result.trace_name = trace.name;
  result.streaming = config.streaming_enabled;

  auto admit = [&](Request req, Seconds at) {
    req.admit_time = at;
    pool.register_request(req.id);
    index[req.id] = table.size();
    active.push_back(table.size());
    table.push_back(std::move(req));
  };

  auto ingest = [&](const TraceRecord& rec) {
    if (rec.kind == StreamEventKind::NewStream) {
      auto req = make_request(to_stream_event(rec, {}));
      // Single-chunk requests never show their mode through events.
      if (trace.mode_mix == "update" || trace.mode_mix == "append") {
        req.mode = trace.mode_mix == "update" ? InputMode::Update : InputMode::Append;
        req.mode_locked = true;
      }
      if (config.streaming_enabled) {
        admit(std::move(req), rec.timestamp);
      } else {
        buffered.emplace(rec.request_id, std::move(req));
      }
      return;
    }
    if (!config.streaming_enabled) {
      auto& req = buffered.at(rec.request_id);
      apply_stream_event(req, to_stream_event(rec, req.current_input));
      if (rec.kind == StreamEventKind::Finish) {
        admit(std::move(req), rec.timestamp);
        buffered.erase(rec.request_id);
      }
      return;
    }
    auto& req = table[index.at(rec.request_id)];
    const auto effect = apply_stream_event(req, to_stream_event(rec, req.current_input));
    if (!effect.finished) result.tokens_invalidated += pool.invalidate_from(req, effect.lcp, config.geometry);
  };

  Seconds now = 0.0;
  std::size_t cursor = 0;
  const auto& events = trace.events;
  while (cursor < events.size() || !active.empty()) {
    while (cursor < events.size() && events[cursor].timestamp <= now) ingest(events[cursor++]);

    auto outcome = scheduler.step(table, pool, now);
    const bool ready = std::any_of(active.begin(), active.end(), [&](std::size_t i) {
      return table[i].input_finished && table[i].pending_tokens() == 0;
    });
    if (outcome.empty() && !ready) {
      if (cursor == events.size()) {
        throw std::logic_error("simulation stalled with " + std::to_string(active.size()) + " unfinished requests");
      }
      now = std::max(now, events[cursor].timestamp);
      continue;
    }
    if (++result.steps > config.max_steps) throw std::runtime_error("simulation exceeded max_steps");

    const Seconds latency = config.profile.step_overhead +
                            recompute_latency(config.profile, outcome.step_token_total) +
                            swap_latency(config.profile, outcome.blocks_swapped);
    now += latency;
    result.busy_time += latency;

    for (const auto& s : outcome.scheduled) {
      auto& req = table[s.index];
      req.num_computed_tokens += s.new_tokens;
      if (req.pending_tokens() == 0) req.log(EngineEventKind::KV_ON_GPU, now);
    }
    for (const auto& p : outcome.preempted) {
      if (p.strategy == Eviction::Recompute) ++result.preempt_recompute;
      else ++result.preempt_swap;
      if (p.forced_fallback) ++result.forced_fallbacks;
    }
    std::erase_if(active, [&](std::size_t i) {
      auto& req = table[i];
      if (!req.input_finished || req.pending_tokens() != 0) return false;
      req.first_token_time = now;
      req.state = RequestState::Finished;
      req.log(EngineEventKind::FINISHED, now);
      pool.release(req.id);
      scheduler.retire(i);
      result.trace_completion_time = std::max(result.trace_completion_time, now);
      return true;
    });
  }

  result.requests.reserve(table.size());
  for (const auto& req : table) result.requests.push_back(detail::make_record(req));
  std::sort(result.requests.begin(), result.requests.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.id < b.id; });
  return result;
}

}  // namespace streamprefill
