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

#include "streamprefill/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

namespace streamprefill {
namespace {

const std::string kProfile = STREAMPREFILL_SOURCE_DIR "/profiles/h200-like.json";

nlohmann::json minimal() {
  return {{"trace", {{"preset", "crawler-like"}, {"num_queries", 20}, {"qps", 2.0}}},
          {"profile", kProfile},
          {"seed", 5}};
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) ::setenv("SCHEDULER_TYPE", value, 1);
    else ::unsetenv("SCHEDULER_TYPE");
  }
  ~EnvGuard() { ::unsetenv("SCHEDULER_TYPE"); }
};

TEST(ConfigTest, Defaults) {
  EnvGuard env(nullptr);
  const auto cfg = resolve_config(minimal(), ".");
  EXPECT_EQ(cfg.sim.policy, SchedulerPolicy::DefaultVllm);
  EXPECT_EQ(cfg.sim.eviction_override, EvictionMode::CostBased);
  EXPECT_EQ(cfg.sim.budget.max_tokens_per_step, 8192u);
  EXPECT_EQ(cfg.sim.seed, 5u);
  EXPECT_EQ(cfg.trace.seed, 5u);
  EXPECT_EQ(cfg.sim.gpu_capacity_blocks, capacity_blocks(141'000'000'000ULL, 0.8, KVGeometry{}));
  EXPECT_EQ(cfg.sim.cpu_capacity_blocks, 4 * cfg.sim.gpu_capacity_blocks);
  EXPECT_EQ(cfg.anchor, TtftAnchor::InputComplete);
  EXPECT_TRUE(cfg.sim.streaming_enabled);
}

TEST(ConfigTest, SchedulerPrecedence) {
  EnvGuard env("MCPS");
  auto j = minimal();
  EXPECT_EQ(resolve_config(j, ".").sim.policy, SchedulerPolicy::Mcps);
  j["scheduler"] = "LCAS";
  EXPECT_EQ(resolve_config(j, ".").sim.policy, SchedulerPolicy::Lcas);
  apply_override(j, "scheduler", "FCFS");
  EXPECT_EQ(resolve_config(j, ".").sim.policy, SchedulerPolicy::Fcfs);
}

TEST(ConfigTest, DottedOverrides) {
  auto j = minimal();
  apply_override(j, "pool.gpu_capacity_blocks", "1234");
  apply_override(j, "budget.max_tokens_per_step", "512");
  apply_override(j, "trace.preset", "anns-like");
  const auto cfg = resolve_config(j, ".");
  EXPECT_EQ(cfg.sim.gpu_capacity_blocks, 1234u);
  EXPECT_EQ(cfg.sim.budget.max_tokens_per_step, 512u);
  EXPECT_EQ(cfg.trace.preset, "anns-like");
  EXPECT_THROW(apply_override(j, "pool..x", "1"), ConfigError);
}

void expect_config_error(const nlohmann::json& j, const std::string& fragment) {
  try {
    resolve_config(j, ".");
    FAIL() << "expected ConfigError mentioning " << fragment;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(ConfigTest, NamedFieldErrors) {
  auto j = minimal();
  j["budget"] = {{"max_tokens_per_step", "lots"}};
  expect_config_error(j, "budget.max_tokens_per_step");
  j = minimal();
  j["budget"] = {{"max_tokens_per_step", 0}};
  expect_config_error(j, "budget.max_tokens_per_step");
  j = minimal();
  j["pool"] = {{"utilization", 1.5}};
  expect_config_error(j, "pool.utilization");
  j = minimal();
  j["scheduler"] = "SJF";
  expect_config_error(j, "SJF");
  j = minimal();
  j.erase("profile");
  expect_config_error(j, "profile");
  j = minimal();
  j["trace"]["path"] = "x.jsonl";
  expect_config_error(j, "trace");
  j = minimal();
  j["profile"] = "/nonexistent/profile.json";
  EXPECT_THROW(resolve_config(j, "."), std::exception);
}

TEST(ConfigTest, BundledConfigsLoad) {
  for (const auto& entry : std::filesystem::directory_iterator(STREAMPREFILL_SOURCE_DIR "/configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
  }
}

TEST(SyntheticSpecJsonTest, OverridesPreset) {
  const auto s = synthetic_spec_from_json(
      {{"preset", "anns-like"}, {"num_queries", 7}, {"retrieval_latency", nullptr}, {"inter_chunk", {{"median", 0.5}}}});
  EXPECT_EQ(s.mode, InputMode::Update);
  EXPECT_EQ(s.num_queries, 7u);
  EXPECT_FALSE(s.retrieval_latency.has_value());
  EXPECT_EQ(s.inter_chunk.median, 0.5);
  EXPECT_THROW(synthetic_spec_from_json({{"num_queries", 0}}), std::invalid_argument);
}

TEST(SweepTest, PlanShapes) {
  EnvGuard env(nullptr);
  const auto base = resolve_config(minimal(), ".");
  const auto by_sched = plan_sweep(base, SweepAxis::Scheduler, {"FCFS", "LCAS", "MCPS"});
  ASSERT_EQ(by_sched.size(), 4u);
  EXPECT_FALSE(by_sched[0].config.sim.streaming_enabled);
  EXPECT_EQ(by_sched[2].config.sim.policy, SchedulerPolicy::Lcas);
  EXPECT_EQ(by_sched[3].baseline, 0);
  const auto by_qps = plan_sweep(base, SweepAxis::Qps, {"1", "2"});
  ASSERT_EQ(by_qps.size(), 4u);
  EXPECT_EQ(by_qps[3].baseline, 2);
  EXPECT_EQ(*by_qps[3].config.trace.qps, 2.0);
  EXPECT_EQ(plan_sweep(base, SweepAxis::Eviction, {"recompute", "swap", "cost"}).size(), 4u);
  EXPECT_THROW(parse_axis("budget"), std::invalid_argument);
}

TEST(SweepTest, RepeatedSweepsAgree) {
  EnvGuard env(nullptr);
  const auto base = resolve_config(minimal(), ".");
  const auto a = run_sweep(base, SweepAxis::Scheduler, {"FCFS", "LCAS"});
  const auto b = run_sweep(base, SweepAxis::Scheduler, {"FCFS", "LCAS"});
  ASSERT_EQ(a.runs.size(), 3u);
  EXPECT_EQ(a.table.cells, b.table.cells);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].result.steps, b.runs[i].result.steps);
    EXPECT_EQ(a.runs[i].report.ttft.p99, b.runs[i].report.ttft.p99);
  }
  ASSERT_EQ(a.table.labels, (std::vector<std::string>{"FCFS", "LCAS"}));
  for (const auto& row : a.table.cells) {
    for (double c : row) EXPECT_GT(c, 1.0);
  }
}

TEST(RunTest, WritesArtifacts) {
  EnvGuard env(nullptr);
  const auto cfg = resolve_config(minimal(), ".");
  const auto out = execute(cfg, build_trace(cfg.trace));
  const auto dir = std::filesystem::temp_directory_path() / "streamprefill-run-test";
  std::filesystem::remove_all(dir);
  write_run(out, dir, cfg.anchor);
  for (const char* f : {"requests.csv", "events.csv", "report.csv", "ccdf_ttft.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "requests.csv");
  EXPECT_EQ(read_requests_csv(in).size(), 20u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace streamprefill
