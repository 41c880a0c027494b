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

#include "streamprefill/workload.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace streamprefill {
namespace {

using K = StreamEventKind;

Trace generate(SyntheticSpec spec, std::size_t n, std::uint64_t seed = 1) {
  spec.num_queries = n;
  spec.seed = seed;
  return generate_synthetic(spec);
}

double rel(double got, double want) { return std::abs(got - want) / want; }

// Reference statistics for the two retrieval workloads; generated traces must
// land within 15% over at least 1000 queries.
TEST(PresetTest, CrawlerMatchesTargets) {
  const auto s = summarize(generate(crawler_like_preset(), 2000));
  EXPECT_EQ(s.num_queries, 2000u);
  EXPECT_LT(rel(s.tokens_p50, 5800.0), 0.15) << s.tokens_p50;
  EXPECT_LT(rel(s.tokens_p95, 28900.0), 0.15) << s.tokens_p95;
  EXPECT_LT(rel(s.inter_chunk_median, 0.7007), 0.15) << s.inter_chunk_median;
  double chunks = 0;
  for (auto [c, n] : s.chunk_histogram) chunks += static_cast<double>(c * n);
  EXPECT_LT(rel(chunks / 2000.0, 8.0), 0.15);
}

TEST(PresetTest, AnnsMatchesTargets) {
  const auto trace = generate(anns_like_preset(), 2000);
  const auto s = summarize(trace);
  EXPECT_LT(rel(s.tokens_p50, 10000.0), 0.15) << s.tokens_p50;
  EXPECT_LT(rel(s.tokens_p95, 31000.0), 0.15) << s.tokens_p95;
  EXPECT_LT(rel(s.inter_chunk_median, 0.0367), 0.15) << s.inter_chunk_median;
  EXPECT_LT(rel(s.duration_mean, 4.5), 0.15) << s.duration_mean;
  std::size_t few = 0;
  for (auto [c, n] : s.chunk_histogram) {
    if (c >= 1 && c <= 3) few += n;
  }
  EXPECT_GT(few, 1000u);
  EXPECT_EQ(trace.mode_mix, "update");
}

TEST(PresetTest, UnknownName) {
  EXPECT_EQ(preset("crawler-like").mode, InputMode::Append);
  EXPECT_EQ(preset("anns-like").mode, InputMode::Update);
  EXPECT_THROW(preset("nope"), std::invalid_argument);
}

TEST(GeneratorTest, SameSeedSameTrace) {
  for (auto spec : {crawler_like_preset(), anns_like_preset()}) {
    EXPECT_EQ(generate(spec, 300, 42), generate(spec, 300, 42));
    EXPECT_NE(generate(spec, 300, 42), generate(spec, 300, 43));
  }
}

TEST(GeneratorTest, TracesAreValidAndNeverMixModes) {
  for (auto spec : {crawler_like_preset(), anns_like_preset()}) {
    const auto trace = generate(spec, 500, 8);
    EXPECT_NO_THROW(validate_trace(trace));
    for (const auto& e : trace.events) {
      const auto forbidden = spec.mode == InputMode::Append ? K::Update : K::Append;
      EXPECT_NE(e.kind, forbidden);
    }
  }
}

TEST(GeneratorTest, SingleChunkAppend) {
  auto spec = crawler_like_preset();
  spec.chunks_per_query = {ChunkCountDist::Kind::Normal, 1.0, 0.0, 0.3, 1, 1};
  const auto trace = generate(spec, 5, 3);
  std::map<RequestId, std::vector<K>> kinds;
  for (const auto& e : trace.events) kinds[e.request_id].push_back(e.kind);
  for (const auto& [_, k] : kinds) EXPECT_EQ(k, (std::vector<K>{K::NewStream, K::Append, K::Finish}));
}

TEST(GeneratorTest, RejectsBadSpecs) {
  auto spec = crawler_like_preset();
  spec.num_queries = 0;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
  spec = crawler_like_preset();
  spec.qps = 0.0;
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
  spec = anns_like_preset();
  spec.retrieval_latency = LogNormalDist{-1.0, 1.0};
  EXPECT_THROW(generate_synthetic(spec), std::invalid_argument);
}

TEST(MaterializeTest, UpdateSharesExactlyKeepTokens) {
  const TokenSeq prev = materialize({RequestId{3}, K::NewStream, 0.0, 500, 1}, {});
  const auto next = materialize({RequestId{3}, K::Update, 1.0, 400, 2, 123}, prev);
  ASSERT_EQ(next.size(), 400u);
  EXPECT_EQ(longest_common_prefix(prev, next), 123u);
}

TEST(DelayMultiplierTest, StretchesOffsetsOnly) {
  Trace t;
  t.events = {{RequestId{0}, K::NewStream, 10.0, 32, 1},
              {RequestId{0}, K::Append, 10.1, 100, 2},
              {RequestId{0}, K::Append, 10.2, 100, 3},
              {RequestId{0}, K::Finish, 10.2, 0, 0}};
  EXPECT_EQ(apply_delay_multiplier(t, 1.0), t);
  const auto s = apply_delay_multiplier(t, 10.0);
  EXPECT_DOUBLE_EQ(s.events[0].timestamp, 10.0);
  EXPECT_NEAR(s.events[1].timestamp, 11.0, 1e-12);
  EXPECT_NEAR(s.events[2].timestamp, 12.0, 1e-12);
  EXPECT_THROW(apply_delay_multiplier(t, 0.0), std::invalid_argument);
}

TEST(DelayMultiplierTest, ScalesGapMedianAndKeepsContent) {
  const auto base = generate(crawler_like_preset(), 1000, 6);
  const auto stretched = apply_delay_multiplier(base, 5.0);
  const auto a = summarize(base);
  const auto b = summarize(stretched);
  EXPECT_NEAR(b.inter_chunk_median, 5.0 * a.inter_chunk_median, 1e-9);
  EXPECT_EQ(a.chunk_histogram, b.chunk_histogram);
  EXPECT_EQ(a.tokens_mean, b.tokens_mean);
  EXPECT_EQ(base.events.size(), stretched.events.size());
  EXPECT_NO_THROW(validate_trace(stretched));
}

TEST(SuggestedMultiplierTest, Examples) {
  EXPECT_DOUBLE_EQ(suggested_delay_multiplier(1e6, 1e4, 10.0, 1.0), 10.0);
  EXPECT_DOUBLE_EQ(suggested_delay_multiplier(1e6, 1e4, 10.0, 2.0), 5.0);
  EXPECT_THROW(suggested_delay_multiplier(0.0, 1e4, 10.0, 1.0), std::invalid_argument);
}

TEST(RescaleQpsTest, KeepsOffsetsAndHitsRate) {
  const auto base = generate(anns_like_preset(), 2000, 2);
  const auto out = rescale_qps(base, 4.0, 77);
  const auto s0 = stream_starts(base);
  const auto s1 = stream_starts(out);
  std::map<RequestId, std::vector<double>> off0, off1;
  for (const auto& e : base.events) off0[e.request_id].push_back(e.timestamp - s0.at(e.request_id));
  for (const auto& e : out.events) off1[e.request_id].push_back(e.timestamp - s1.at(e.request_id));
  for (const auto& [id, v] : off0) {
    ASSERT_EQ(v.size(), off1[id].size());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], off1[id][i], 1e-9);
  }
  std::vector<double> arrivals;
  for (const auto& [_, t] : s1) arrivals.push_back(t);
  std::sort(arrivals.begin(), arrivals.end());
  const double mean_gap = arrivals.back() / static_cast<double>(arrivals.size());
  EXPECT_LT(rel(mean_gap, 0.25), 0.10);
  EXPECT_NO_THROW(validate_trace(out));
}

TEST(TraceFileTest, RoundTrip) {
  const auto trace = generate(anns_like_preset(), 50, 4);
  std::stringstream ss;
  write_trace(trace, ss);
  EXPECT_EQ(read_trace(ss), trace);
}

TEST(TraceFileTest, CorruptLineNamesLine) {
  std::stringstream ss;
  ss << R"({"request_id":0,"kind":"new_stream","timestamp_s":0,"num_tokens":4})" << '\n' << "{oops\n";
  try {
    read_trace(ss);
    FAIL();
  } catch (const TraceError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(TraceFileTest, EventAfterFinishIsNamed) {
  Trace t;
  t.events = {{RequestId{0}, K::NewStream, 0.0, 4, 1},
              {RequestId{0}, K::Finish, 1.0, 0, 0},
              {RequestId{0}, K::Append, 2.0, 4, 2}};
  try {
    validate_trace(t);
    FAIL();
  } catch (const TraceError& e) {
    EXPECT_NE(std::string(e.what()).find("after finish"), std::string::npos) << e.what();
  }
}

TEST(TraceFileTest, OtherViolations) {
  Trace t;
  t.events = {{RequestId{0}, K::NewStream, 1.0, 4, 1}, {RequestId{0}, K::Finish, 0.5, 0, 0}};
  EXPECT_THROW(validate_trace(t), TraceError);
  t.events = {{RequestId{0}, K::NewStream, 0.0, 4, 1},
              {RequestId{0}, K::Append, 1.0, 4, 2},
              {RequestId{0}, K::Update, 2.0, 4, 3},
              {RequestId{0}, K::Finish, 3.0, 0, 0}};
  EXPECT_THROW(validate_trace(t), TraceError);
  t.events = {{RequestId{0}, K::NewStream, 0.0, 4, 1}};
  EXPECT_THROW(validate_trace(t), TraceError);
  t.events = {{RequestId{0}, K::Append, 0.0, 4, 1}};
  EXPECT_THROW(validate_trace(t), TraceError);
}

}  // namespace
}  // namespace streamprefill
