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

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "streamprefill/scheduler.hpp"
#include "streamprefill/stats.hpp"

namespace streamprefill {

struct BenchResult {
  std::size_t num_requests = 0;
  std::size_t iterations = 0;
  double p50_us = 0.0;
  double p99_us = 0.0;
};

// Times prioritize + feasibility over a random in-memory request set.
inline BenchResult bench_scheduler(SchedulerPolicy policy, std::size_t num_requests, std::size_t iterations = 1000,
                                   std::uint64_t seed = 1, std::size_t block_size = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(1, 32000);
  std::uniform_real_distribution<double> when(0.0, 100.0);
  std::bernoulli_distribution coin(0.5);

  std::vector<Request> table(num_requests);
  BlockPool pool(num_requests * blocks_needed(32000, block_size) + 1024, 0);
  SchedulerState state;
  for (std::size_t i = 0; i < num_requests; ++i) {
    auto& r = table[i];
    r.id = RequestId{i};
    r.current_input.assign(len(rng), Token{0});
    r.num_computed_tokens = std::uniform_int_distribution<std::size_t>(0, r.current_input.size())(rng);
    r.arrival_time = r.admit_time = when(rng);
    r.last_chunk_arrival_time = r.arrival_time + when(rng);
    r.input_finished = coin(rng);
    pool.register_request(r.id);
    pool.allocate_gpu(r.id, blocks_needed(r.num_computed_tokens, block_size));
    if (r.num_computed_tokens > 0) {
      r.state = RequestState::Running;
      state.running_order.push_back(i);
    }
  }

  std::vector<double> samples;
  samples.reserve(iterations);
  std::size_t sink = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = prioritize(policy, table, state);
    const auto plan = feasibility(table, order, TokenBudget{8192}, pool, block_size);
    const auto t1 = std::chrono::steady_clock::now();
    sink += plan.candidates.size();
    samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  BenchResult out{num_requests, iterations, 0.0, 0.0};
  if (!samples.empty() && sink != static_cast<std::size_t>(-1)) {
    out.p50_us = percentile(samples, 50);
    out.p99_us = percentile(samples, 99);
  }
  return out;
}

}  // namespace streamprefill
