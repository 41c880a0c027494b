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
#include <cctype>
#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "streamprefill/costmodel.hpp"
#include "streamprefill/domain.hpp"
#include "streamprefill/kvcache.hpp"

namespace streamprefill {

enum class SchedulerPolicy { DefaultVllm, Fcfs, Mcps, Lcas };

enum class EvictionMode { RecomputeOnly, SwapOnly, CostBased };

inline constexpr SchedulerPolicy kAllPolicies[] = {SchedulerPolicy::DefaultVllm, SchedulerPolicy::Fcfs,
                                                   SchedulerPolicy::Mcps, SchedulerPolicy::Lcas};

inline std::string_view to_string(SchedulerPolicy p) {
  switch (p) {
    case SchedulerPolicy::DefaultVllm: return "DEFAULT_VLLM";
    case SchedulerPolicy::Fcfs: return "FCFS";
    case SchedulerPolicy::Mcps: return "MCPS";
    case SchedulerPolicy::Lcas: return "LCAS";
  }
  return "UNKNOWN";
}

inline std::string_view to_string(EvictionMode m) {
  switch (m) {
    case EvictionMode::RecomputeOnly: return "recompute";
    case EvictionMode::SwapOnly: return "swap";
    case EvictionMode::CostBased: return "cost";
  }
  return "unknown";
}

namespace detail {
inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

inline SchedulerPolicy parse_policy(std::string_view text) {
  const auto s = detail::upper(text);
  for (auto p : kAllPolicies) {
    if (s == to_string(p)) return p;
  }
  throw std::invalid_argument("unknown scheduler '" + std::string(text) +
                              "' (expected DEFAULT_VLLM, FCFS, MCPS or LCAS)");
}

inline EvictionMode parse_eviction(std::string_view text) {
  const auto s = detail::upper(text);
  if (s == "RECOMPUTE" || s == "RECOMPUTE_ONLY") return EvictionMode::RecomputeOnly;
  if (s == "SWAP" || s == "SWAP_ONLY") return EvictionMode::SwapOnly;
  if (s == "COST" || s == "COST_BASED") return EvictionMode::CostBased;
  throw std::invalid_argument("unknown eviction '" + std::string(text) + "' (expected recompute, swap or cost)");
}

struct TokenBudget {
  std::size_t max_tokens_per_step = 8192;
};

// Queue bookkeeping the DEFAULT_VLLM policy depends on. Entries are positions
// in the request table.
struct SchedulerState {
  // Order in which requests entered the running set.
  std::vector<std::size_t> running_order;
  // Preempted and not yet rescheduled; most recently preempted first.
  std::deque<std::size_t> preempted;

  void remove(std::size_t index) {
    std::erase(running_order, index);
    std::erase(preempted, index);
  }
};

// Highest priority first. Finished requests are skipped; ties resolve by id.
inline std::vector<std::size_t> prioritize(SchedulerPolicy policy, std::span<const Request> table,
                                           const SchedulerState& state = {}) {
  std::vector<std::size_t> order;
  order.reserve(table.size());
  auto live = [&](std::size_t i) { return table[i].state != RequestState::Finished; };

  if (policy == SchedulerPolicy::DefaultVllm) {
    std::vector<char> placed(table.size(), 0);
    for (auto i : state.preempted) {
      if (live(i) && table[i].state == RequestState::Waiting && !placed[i]) {
        order.push_back(i);
        placed[i] = 1;
      }
    }
    for (auto i : state.running_order) {
      if (live(i) && table[i].state == RequestState::Running && !placed[i]) {
        order.push_back(i);
        placed[i] = 1;
      }
    }
    const auto seeded = order.size();
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (live(i) && !placed[i]) order.push_back(i);
    }
    // Running requests the state does not know about go ahead of new arrivals.
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(seeded), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       const auto& x = table[a];
                       const auto& y = table[b];
                       return std::tuple(x.state != RequestState::Running, x.admit_time, x.id) <
                              std::tuple(y.state != RequestState::Running, y.admit_time, y.id);
                     });
    return order;
  }

  for (std::size_t i = 0; i < table.size(); ++i) {
    if (live(i)) order.push_back(i);
  }
  auto by = [&](auto key) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(table[a]) < key(table[b]); });
  };
  switch (policy) {
    case SchedulerPolicy::Fcfs:
      by([](const Request& r) { return std::tuple(!r.input_finished, r.admit_time, r.id); });
      break;
    case SchedulerPolicy::Mcps:
      by([](const Request& r) {
        return std::tuple(-static_cast<double>(r.num_computed_tokens), r.admit_time, r.id);
      });
      break;
    case SchedulerPolicy::Lcas:
      by([](const Request& r) { return std::tuple(!r.input_finished, -r.last_chunk_arrival_time, r.id); });
      break;
    case SchedulerPolicy::DefaultVllm:
      break;
  }
  return order;
}

inline std::vector<RequestId> ids_of(std::span<const Request> table, std::span<const std::size_t> indices) {
  std::vector<RequestId> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(table[i].id);
  return out;
}

struct Assignment {
  std::size_t index = 0;
  std::size_t new_tokens = 0;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct Feasibility {
  std::vector<Assignment> candidates;
  // Priority order; includes stalled, budget-starved and memory-blocked requests.
  std::vector<std::size_t> not_scheduled;
  // The subset of not_scheduled that had budget but lacked free blocks, with
  // the tokens it would have taken.
  std::vector<Assignment> memory_blocked;

  friend bool operator==(const Feasibility&, const Feasibility&) = default;
};

// GPU blocks a request must acquire (swap-in included) to compute new_tokens more.
inline std::size_t blocks_to_acquire(const Request& r, const BlockPool& pool, std::size_t new_tokens,
                                     std::size_t block_size) {
  const auto needed = blocks_needed(r.num_computed_tokens + new_tokens, block_size);
  const auto held = pool.gpu_blocks(r.id).size();
  return needed > held ? needed - held : 0;
}

// Phase 1. Reads the pool and requests; mutates nothing.
inline Feasibility feasibility(std::span<const Request> table, std::span<const std::size_t> ordered,
                               TokenBudget budget, const BlockPool& pool, std::size_t block_size) {
  Feasibility out;
  std::size_t remaining_budget = budget.max_tokens_per_step;
  std::size_t projected_free = pool.gpu_free();
  for (auto i : ordered) {
    const auto& r = table[i];
    const auto pending = r.pending_tokens();
    const auto new_tokens = std::min(pending, remaining_budget);
    if (new_tokens == 0) {
      out.not_scheduled.push_back(i);
      continue;
    }
    const auto required = blocks_to_acquire(r, pool, new_tokens, block_size);
    if (required <= projected_free) {
      out.candidates.push_back({i, new_tokens});
      projected_free -= required;
      remaining_budget -= new_tokens;
    } else {
      out.not_scheduled.push_back(i);
      out.memory_blocked.push_back({i, new_tokens});
    }
  }
  return out;
}

// Lowest-priority block holder. DEFAULT_VLLM evicts from the tail of the
// running order instead of the not-scheduled list.
inline std::optional<std::size_t> select_victim(SchedulerPolicy policy, std::span<const std::size_t> not_scheduled,
                                                std::span<const std::size_t> running_order,
                                                std::span<const Request> table, const BlockPool& pool) {
  const auto pool_of = policy == SchedulerPolicy::DefaultVllm ? running_order : not_scheduled;
  for (auto it = pool_of.rbegin(); it != pool_of.rend(); ++it) {
    if (!pool.gpu_blocks(table[*it].id).empty()) return *it;
  }
  return std::nullopt;
}

struct ScheduledEntry {
  RequestId id;
  std::size_t index = 0;
  std::size_t new_tokens = 0;
};

struct PreemptionEntry {
  RequestId id;
  std::size_t index = 0;
  Eviction strategy = Eviction::Recompute;
  // Swap was wanted but the CPU tier was full.
  bool forced_fallback = false;
};

struct ScheduleOutcome {
  std::vector<ScheduledEntry> scheduled;
  std::vector<PreemptionEntry> preempted;
  std::vector<RequestId> swapped_in;
  std::vector<std::size_t> not_scheduled;
  std::size_t step_token_total = 0;
  // Blocks moved across PCIe in either direction.
  std::size_t blocks_swapped = 0;

  bool empty() const { return scheduled.empty() && preempted.empty(); }
};

struct SchedulerConfig {
  SchedulerPolicy policy = SchedulerPolicy::Fcfs;
  EvictionMode eviction = EvictionMode::CostBased;
  TokenBudget budget;
  std::size_t block_size = 16;
};

// Two-phase scheduler: priority order and feasibility first, then block
// acquisition with preemption of lower-priority holders.
class Scheduler {
 public:
  Scheduler(SchedulerConfig config, const PerfProfile& profile) : config_(config), profile_(&profile) {}

  const SchedulerConfig& config() const { return config_; }
  const SchedulerState& state() const { return state_; }

  // Forget a request that left the engine.
  void retire(std::size_t index) { state_.remove(index); }

  ScheduleOutcome step(std::span<Request> table, BlockPool& pool, Seconds now) {
    const auto order = prioritize(config_.policy, table, state_);
    auto plan = feasibility(table, order, config_.budget, pool, config_.block_size);

    std::vector<std::size_t> rank(table.size(), order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;

    // Phase 2 visits candidates and memory-blocked requests in priority order.
    std::vector<Assignment> attempts = plan.candidates;
    attempts.insert(attempts.end(), plan.memory_blocked.begin(), plan.memory_blocked.end());
    std::sort(attempts.begin(), attempts.end(),
              [&](const Assignment& a, const Assignment& b) { return rank[a.index] < rank[b.index]; });

    auto& not_scheduled = plan.not_scheduled;
    auto park = [&](std::size_t i) {
      auto pos = std::lower_bound(not_scheduled.begin(), not_scheduled.end(), i,
                                  [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
      if (pos == not_scheduled.end() || *pos != i) not_scheduled.insert(pos, i);
    };
    auto unpark = [&](std::size_t i) { std::erase(not_scheduled, i); };

    ScheduleOutcome out;
    std::vector<char> scheduled(table.size(), 0);
    std::vector<char> evicted(table.size(), 0);
    std::size_t remaining_budget = config_.budget.max_tokens_per_step;
    // Nothing ranked below a victim may run in the same step.
    std::size_t floor = order.size();
    const bool lifo = config_.policy == SchedulerPolicy::DefaultVllm;

    for (const auto& attempt : attempts) {
      const auto i = attempt.index;
      auto& req = table[i];
      const auto new_tokens = std::min(req.pending_tokens(), remaining_budget);
      if (new_tokens == 0 || evicted[i] || (!lifo && rank[i] > floor)) {
        park(i);
        continue;
      }
      const auto need = blocks_to_acquire(req, pool, new_tokens, config_.block_size);
      bool self_preempted = false;
      while (pool.gpu_free() < need) {
        std::optional<std::size_t> victim;
        if (lifo) {
          // Waiting requests are admitted into free blocks only; a running
          // request evicts the newest running holder, possibly itself.
          if (req.state != RequestState::Running) break;
          std::vector<std::size_t> eligible;
          for (auto j : state_.running_order) {
            if (!scheduled[j]) eligible.push_back(j);
          }
          victim = select_victim(config_.policy, {}, eligible, table, pool);
        } else {
          auto below = std::upper_bound(not_scheduled.begin(), not_scheduled.end(), i,
                                        [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
          const auto tail = std::span<const std::size_t>(not_scheduled)
                                .subspan(static_cast<std::size_t>(below - not_scheduled.begin()));
          victim = select_victim(config_.policy, tail, {}, table, pool);
        }
        if (!victim) break;
        preempt(table, pool, *victim, now, out);
        evicted[*victim] = 1;
        park(*victim);
        floor = std::min(floor, rank[*victim]);
        if (*victim == i) {
          self_preempted = true;
          break;
        }
      }
      if (self_preempted || pool.gpu_free() < need) {
        park(i);
        continue;
      }
      if (!pool.cpu_blocks(req.id).empty()) {
        const auto moved = pool.swap_in(req);
        out.swapped_in.push_back(req.id);
        out.blocks_swapped += moved.moved;
      }
      const auto extra = blocks_to_acquire(req, pool, new_tokens, config_.block_size);
      if (pool.allocate_gpu(req.id, extra) != AllocResult::Ok) {
        throw std::logic_error("scheduler: allocation failed after reservation");
      }
      unpark(i);
      scheduled[i] = 1;
      remaining_budget -= new_tokens;
      out.step_token_total += new_tokens;
      out.scheduled.push_back({req.id, i, new_tokens});
      if (req.state != RequestState::Running) {
        req.state = RequestState::Running;
        state_.running_order.push_back(i);
        std::erase(state_.preempted, i);
      }
      req.log(EngineEventKind::SCHEDULED, now);
    }
    out.not_scheduled = std::move(not_scheduled);
    return out;
  }

 private:
  void preempt(std::span<Request> table, BlockPool& pool, std::size_t index, Seconds now, ScheduleOutcome& out) {
    auto& victim = table[index];
    Eviction wanted = Eviction::Recompute;
    switch (config_.eviction) {
      case EvictionMode::RecomputeOnly: wanted = Eviction::Recompute; break;
      case EvictionMode::SwapOnly: wanted = Eviction::Swap; break;
      case EvictionMode::CostBased: wanted = choose_eviction(*profile_, victim, pool); break;
    }
    PreemptionEntry entry{victim.id, index, wanted, false};
    if (wanted == Eviction::Swap) {
      const auto moved = pool.swap_out(victim);
      if (moved.ok) {
        out.blocks_swapped += moved.moved;
        ++victim.num_preempt_swap;
        victim.log(EngineEventKind::PREEMPTED_SWAP, now);
      } else {
        entry.strategy = Eviction::Recompute;
        entry.forced_fallback = true;
        ++victim.num_forced_fallbacks;
      }
    }
    if (entry.strategy == Eviction::Recompute) {
      pool.free_all(victim.id, Tier::Gpu);
      victim.num_computed_tokens = 0;
      ++victim.num_preempt_recompute;
      victim.log(EngineEventKind::PREEMPTED_RECOMPUTE, now);
    }
    victim.state = RequestState::Waiting;
    std::erase(state_.running_order, index);
    std::erase(state_.preempted, index);
    state_.preempted.push_front(index);
    out.preempted.push_back(entry);
  }

  SchedulerConfig config_;
  const PerfProfile* profile_;
  SchedulerState state_;
};

}  // namespace streamprefill
