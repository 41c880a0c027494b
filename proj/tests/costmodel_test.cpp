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

#include "streamprefill/costmodel.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace streamprefill {
namespace {

PerfProfile linear_profile(double per_token, double per_block) {
  return {"linear", {{1000, 1000 * per_token}, {2000, 2000 * per_token}}, per_block, 0.0};
}

TEST(RecomputeLatencyTest, Examples) {
  const auto p = linear_profile(1e-5, 1e-4);
  EXPECT_DOUBLE_EQ(recompute_latency(p, 0), 0.0);
  EXPECT_DOUBLE_EQ(recompute_latency(p, 1500), 0.015);
  // Through the origin below the first sample, last slope above the last.
  EXPECT_DOUBLE_EQ(recompute_latency(p, 500), 0.005);
  EXPECT_DOUBLE_EQ(recompute_latency(p, 8000), 0.08);

  const PerfProfile wide{"wide", {{1000, 0.010}, {128000, 2.0}}, 1e-4, 0.0};
  // 0.010 + 1.99 * 63000 / 127000
  EXPECT_NEAR(recompute_latency(wide, 64000), 0.99716535433, 1e-10);
}

TEST(RecomputeLatencyTest, RecoversSamplesAndIsMonotone) {
  const auto p = load_profile(STREAMPREFILL_SOURCE_DIR "/profiles/h200-like.json");
  for (const auto& s : p.recompute_samples) EXPECT_DOUBLE_EQ(recompute_latency(p, s.tokens), s.latency);
  double prev = 0.0;
  for (std::size_t t = 0; t <= 200000; t += 97) {
    const auto v = recompute_latency(p, t);
    ASSERT_GE(v, prev) << t;
    prev = v;
  }
}

TEST(SwapLatencyTest, Linear) {
  const auto p = linear_profile(1e-5, 1e-4);
  EXPECT_DOUBLE_EQ(swap_latency(p, 0), 0.0);
  EXPECT_DOUBLE_EQ(swap_latency(p, 100), 0.010);
}

TEST(SwapLatencyTest, FromGeometryAndBandwidth) {
  // 2 MiB block over 25 GiB/s.
  EXPECT_DOUBLE_EQ(swap_seconds_per_block(KVGeometry{}, 25.0 * (1ull << 30)), 7.8125e-05);
}

TEST(ChooseEvictionTest, Examples) {
  // 8000 tokens: 0.08 s recompute vs 2 * 500 blocks * 0.00005 s = 0.05 s.
  EXPECT_EQ(choose_eviction(linear_profile(1e-5, 5e-5), 8000, blocks_needed(8000, 16)), Eviction::Swap);
  // 800 tokens: 0.008 s vs 2 * 50 * 0.0002 = 0.020 s.
  EXPECT_EQ(choose_eviction(linear_profile(1e-5, 2e-4), 800, blocks_needed(800, 16)), Eviction::Recompute);
  EXPECT_EQ(choose_eviction(linear_profile(1e-5, 2e-4), 0, 0), Eviction::Recompute);
}

TEST(ChooseEvictionTest, TieGoesToRecompute) {
  // 1600 tokens = 0.016 s; 100 blocks * 0.00008 * 2 = 0.016 s.
  EXPECT_EQ(choose_eviction(linear_profile(1e-5, 8e-5), 1600, 100), Eviction::Recompute);
}

TEST(ChooseEvictionTest, InvariantUnderCommonScaling) {
  std::mt19937_64 rng(3);
  const auto base = load_profile(STREAMPREFILL_SOURCE_DIR "/profiles/h200-like.json");
  std::uniform_int_distribution<std::size_t> tokens(0, 100000);
  for (int i = 0; i < 500; ++i) {
    const double c = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    auto scaled = base;
    for (auto& s : scaled.recompute_samples) s.latency *= c;
    scaled.swap_seconds_per_block *= c;
    const auto t = tokens(rng);
    const auto b = blocks_needed(t, 16);
    const double r = recompute_latency(base, t);
    const double s = 2.0 * swap_latency(base, b);
    // Skip knife-edge cases where rounding of the scaled values could flip.
    if (std::abs(r - s) < 1e-12 * std::max(r, s)) continue;
    ASSERT_EQ(choose_eviction(base, t, b), choose_eviction(scaled, t, b)) << t << " x" << c;
  }
}

TEST(ChooseEvictionTest, UsesHeldGpuBlocks) {
  BlockPool pool(1000, 0);
  Request r;
  r.id = RequestId{1};
  r.num_computed_tokens = 8000;
  pool.register_request(r.id);
  pool.allocate_gpu(r.id, 500);
  EXPECT_EQ(choose_eviction(linear_profile(1e-5, 5e-5), r, pool), Eviction::Swap);
}

TEST(FitProfileTest, SortsAndValidates) {
  const auto fitted = fit_profile({{2000, 0.02}, {1000, 0.01}, {4000, 0.05}});
  ASSERT_EQ(fitted.size(), 3u);
  EXPECT_EQ(fitted[0].tokens, 1000u);
  EXPECT_EQ(fitted[2].tokens, 4000u);
  EXPECT_THROW(fit_profile({{1000, 0.02}, {2000, 0.01}}), InvalidProfileError);
  EXPECT_THROW(fit_profile({{1000, 0.01}}), InvalidProfileError);
  EXPECT_THROW(fit_profile({{1000, 0.01}, {1000, 0.02}}), InvalidProfileError);
  EXPECT_THROW(fit_profile({{1000, -0.01}, {2000, 0.02}}), InvalidProfileError);
}

TEST(ProfileIoTest, BundledProfiles) {
  const auto h200 = load_profile(STREAMPREFILL_SOURCE_DIR "/profiles/h200-like.json");
  const auto a40 = load_profile(STREAMPREFILL_SOURCE_DIR "/profiles/a40-like.json");
  EXPECT_EQ(h200.hardware_name, "h200-like");
  EXPECT_EQ(a40.hardware_name, "a40-like");
  for (std::size_t t : {1024u, 5000u, 32768u, 100000u}) {
    EXPECT_NEAR(recompute_latency(a40, t) / recompute_latency(h200, t), 4.0, 0.01) << t;
  }
}

TEST(ProfileIoTest, JsonRoundTrip) {
  const PerfProfile p{"x", {{1, 0.5}, {10, 1.5}}, 0.25, 0.125};
  const auto back = profile_from_json(profile_to_json(p));
  EXPECT_EQ(back.hardware_name, "x");
  EXPECT_EQ(back.recompute_samples, p.recompute_samples);
  EXPECT_EQ(back.swap_seconds_per_block, 0.25);
  EXPECT_EQ(back.step_overhead, 0.125);
}

TEST(ProfileIoTest, Errors) {
  EXPECT_THROW(load_profile("/nonexistent/profile.json"), InvalidProfileError);
  auto j = profile_to_json({"x", {{1, 0.5}, {10, 1.5}}, 0.25, 0.0});
  j["swap_seconds_per_block"] = 0.0;
  EXPECT_THROW(profile_from_json(j), InvalidProfileError);
  j.erase("swap_seconds_per_block");
  EXPECT_THROW(profile_from_json(j), InvalidProfileError);

  const auto dir = std::filesystem::temp_directory_path() / "streamprefill_costmodel_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_profile((dir / "bad.json").string()), InvalidProfileError);
}

}  // namespace
}  // namespace streamprefill
