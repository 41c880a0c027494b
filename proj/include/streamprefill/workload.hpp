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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "streamprefill/domain.hpp"
#include "streamprefill/stats.hpp"

namespace streamprefill {

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One line of a trace file. Token contents are not stored; they are
// regenerated from (request_id, content_seed, position).
struct TraceRecord {
  RequestId request_id;
  StreamEventKind kind = StreamEventKind::NewStream;
  Seconds timestamp = 0.0;
  std::size_t num_tokens = 0;
  std::uint64_t content_seed = 0;
  // Update only: leading tokens carried over from the previous input.
  std::size_t keep_tokens = 0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Trace {
  std::string name;
  std::string mode_mix;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> events;

  friend bool operator==(const Trace&, const Trace&) = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Token content_token(RequestId rid, std::uint64_t content_seed, std::size_t position) {
  const auto h = splitmix64(splitmix64(splitmix64(rid.value) ^ content_seed) ^ position);
  return static_cast<Token>(h >> 32);
}

// Token payload of a record given the request's input before it. Update
// records reuse exactly keep_tokens of the previous input; the next token is
// forced to differ so the common prefix is exactly that long.
inline TokenSeq materialize(const TraceRecord& rec, const TokenSeq& previous) {
  TokenSeq out;
  if (rec.kind == StreamEventKind::Finish) return out;
  out.reserve(rec.num_tokens);
  std::size_t start = 0;
  if (rec.kind == StreamEventKind::Update) {
    start = std::min({rec.keep_tokens, previous.size(), rec.num_tokens});
    out.assign(previous.begin(), previous.begin() + static_cast<std::ptrdiff_t>(start));
  }
  for (std::size_t pos = start; pos < rec.num_tokens; ++pos) {
    Token t = content_token(rec.request_id, rec.content_seed, pos);
    if (pos == start && rec.kind == StreamEventKind::Update && pos < previous.size() && t == previous[pos]) ++t;
    out.push_back(t);
  }
  return out;
}

inline StreamEvent to_stream_event(const TraceRecord& rec, const TokenSeq& previous) {
  return {rec.request_id, rec.kind, materialize(rec, previous), rec.timestamp};
}

// Checks ordering and per-request protocol rules.
inline void validate_trace(const Trace& trace) {
  struct Seen {
    bool started = false;
    bool finished = false;
    bool appended = false;
    bool updated = false;
    Seconds start = 0.0;
  };
  std::unordered_map<RequestId, Seen> seen;
  Seconds last = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    const auto& e = trace.events[i];
    auto fail = [&](std::string_view rule) {
      throw TraceError("trace event " + std::to_string(i + 1) + " (request " + to_string(e.request_id) + ", " +
                       std::string(to_string(e.kind)) + "): " + std::string(rule));
    };
    if (!std::isfinite(e.timestamp) || e.timestamp < 0.0) fail("timestamp must be finite and non-negative");
    if (e.timestamp < last) fail("events not sorted by timestamp");
    last = e.timestamp;
    auto& s = seen[e.request_id];
    if (s.finished) fail("event after finish");
    if (e.kind == StreamEventKind::NewStream) {
      if (s.started) fail("duplicate new_stream");
      s.started = true;
      s.start = e.timestamp;
      continue;
    }
    if (!s.started) fail("event before new_stream");
    if (!(e.timestamp > s.start)) fail("must come strictly after new_stream");
    switch (e.kind) {
      case StreamEventKind::Append:
        if (s.updated) fail("append in an update-mode request");
        s.appended = true;
        break;
      case StreamEventKind::Update:
        if (s.appended) fail("update in an append-mode request");
        s.updated = true;
        break;
      case StreamEventKind::Finish:
        if (e.num_tokens != 0) fail("finish carries no tokens");
        s.finished = true;
        break;
      case StreamEventKind::NewStream:
        break;
    }
    if (e.kind != StreamEventKind::Update && e.keep_tokens != 0) fail("keep_tokens only applies to update");
  }
  for (const auto& [id, s] : seen) {
    if (!s.finished) throw TraceError("request " + to_string(id) + " never finishes");
  }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct LogNormalDist {
  double median = 1.0;
  double sigma = 1.0;

  // Fit from two quantiles of the target distribution.
  static LogNormalDist from_p50_p95(double p50, double p95) {
    constexpr double z95 = 1.6448536269514722;
    return {p50, std::log(p95 / p50) / z95};
  }
  double mean() const { return median * std::exp(sigma * sigma / 2.0); }

  template <class Rng>
  double operator()(Rng& rng) const {
    return std::lognormal_distribution<double>(std::log(median), sigma)(rng);
  }
};

struct ChunkCountDist {
  enum class Kind { Normal, Geometric };
  Kind kind = Kind::Normal;
  double mean = 8.0;
  double stddev = 2.5;
  // Geometric success probability; count = min_chunks + failures.
  double p = 0.3;
  int min_chunks = 1;
  int max_chunks = 30;

  template <class Rng>
  int operator()(Rng& rng) const {
    int n = 0;
    if (kind == Kind::Normal) {
      n = static_cast<int>(std::lround(std::normal_distribution<double>(mean, stddev)(rng)));
    } else {
      n = min_chunks + std::geometric_distribution<int>(p)(rng);
    }
    return std::clamp(n, min_chunks, max_chunks);
  }
};

struct SyntheticSpec {
  std::string name = "synthetic";
  InputMode mode = InputMode::Append;
  std::size_t num_queries = 100;
  LogNormalDist tokens_per_query{5800.0, 0.976};
  ChunkCountDist chunks_per_query;
  LogNormalDist inter_chunk{0.7007, 1.5};
  double qps = 1.0;
  std::uint64_t seed = 1;
  std::size_t query_tokens = 32;
  std::size_t max_tokens_per_query = 65536;
  // Time from arrival to Finish. When set, Finish waits for it after the last
  // content chunk; unset, Finish follows the last chunk (append) or one more gap.
  std::optional<LogNormalDist> retrieval_latency;

  void validate() const {
    if (num_queries == 0) throw std::invalid_argument("synthetic spec: num_queries must be positive");
    if (!(qps > 0.0)) throw std::invalid_argument("synthetic spec: qps must be positive");
    if (!(tokens_per_query.median > 0.0) || !(tokens_per_query.sigma > 0.0) || !(inter_chunk.median > 0.0) ||
        !(inter_chunk.sigma > 0.0)) {
      throw std::invalid_argument("synthetic spec: distribution parameters must be positive");
    }
    if (chunks_per_query.min_chunks < 1 || chunks_per_query.max_chunks < chunks_per_query.min_chunks) {
      throw std::invalid_argument("synthetic spec: chunk bounds must satisfy 1 <= min <= max");
    }
    if (query_tokens == 0 || max_tokens_per_query <= query_tokens) {
      throw std::invalid_argument("synthetic spec: need 0 < query_tokens < max_tokens_per_query");
    }
    if (retrieval_latency && (!(retrieval_latency->median > 0.0) || !(retrieval_latency->sigma > 0.0))) {
      throw std::invalid_argument("synthetic spec: retrieval latency parameters must be positive");
    }
  }
};

// Web-crawler retrieval: append mode, many slow chunks.
inline SyntheticSpec crawler_like_preset() {
  SyntheticSpec s;
  s.name = "crawler-like";
  s.mode = InputMode::Append;
  s.tokens_per_query = LogNormalDist::from_p50_p95(5800.0, 28900.0);
  s.chunks_per_query = {ChunkCountDist::Kind::Normal, 8.0, 2.5, 0.3, 1, 30};
  s.inter_chunk = {0.7007, 1.5};
  return s;
}

// ANNS refinement: update mode, few fast chunks.
inline SyntheticSpec anns_like_preset() {
  SyntheticSpec s;
  s.name = "anns-like";
  s.mode = InputMode::Update;
  s.tokens_per_query = LogNormalDist::from_p50_p95(10000.0, 31000.0);
  s.chunks_per_query = {ChunkCountDist::Kind::Geometric, 0.0, 0.0, 0.3, 1, 20};
  s.inter_chunk = {0.0367, 1.3};
  s.retrieval_latency = LogNormalDist::from_p50_p95(3.9, 8.5);
  return s;
}

inline SyntheticSpec preset(std::string_view name) {
  if (name == "crawler-like") return crawler_like_preset();
  if (name == "anns-like") return anns_like_preset();
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected crawler-like or anns-like)");
}

namespace detail {

// Splits total into n positive parts with uniformly random proportions.
template <class Rng>
std::vector<std::size_t> split_tokens(std::size_t total, std::size_t n, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(n);
  for (auto& x : w) x = expo(rng);
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> parts(n, 1);
  const std::size_t spare = total - n;
  double acc = 0.0;
  std::size_t given = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += w[i];
    const auto upto = i + 1 == n ? spare : static_cast<std::size_t>(std::floor(acc / sum * static_cast<double>(spare)));
    parts[i] += upto - given;
    given = upto;
  }
  return parts;
}

inline void sort_events(std::vector<TraceRecord>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const TraceRecord& a, const TraceRecord& b) { return a.timestamp < b.timestamp; });
}

}  // namespace detail

inline Trace generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> interarrival(spec.qps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Trace trace;
  trace.name = spec.name;
  trace.mode_mix = std::string(to_string(spec.mode));
  trace.seed = spec.seed;

  Seconds arrival = 0.0;
  std::uint64_t next_seed = 1;
  for (std::size_t q = 0; q < spec.num_queries; ++q) {
    arrival += interarrival(rng);
    const RequestId rid{q};
    const auto total = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(spec.tokens_per_query(rng))),
                                               spec.query_tokens + 1, spec.max_tokens_per_query);
    auto chunks = static_cast<std::size_t>(spec.chunks_per_query(rng));
    Seconds t = arrival;
    auto emit = [&](StreamEventKind kind, std::size_t n, std::size_t keep = 0) {
      trace.events.push_back({rid, kind, t, n, kind == StreamEventKind::Finish ? 0 : next_seed++, keep});
    };
    if (spec.mode == InputMode::Append) {
      const std::size_t docs = total - spec.query_tokens;
      chunks = std::min(chunks, docs);
      emit(StreamEventKind::NewStream, spec.query_tokens);
      for (auto part : detail::split_tokens(docs, chunks, rng)) {
        t += spec.inter_chunk(rng);
        emit(StreamEventKind::Append, part);
      }
      if (spec.retrieval_latency) t = std::max(t, arrival + (*spec.retrieval_latency)(rng));
      emit(StreamEventKind::Finish, 0);
    } else {
      // Earlier top-k sets are similar in size to the final one.
      std::vector<std::size_t> lengths(chunks, total);
      for (std::size_t c = 0; c + 1 < chunks; ++c) {
        const double scale = 0.75 + 0.3 * unit(rng);
        lengths[c] = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(total) * scale)),
                                             spec.query_tokens + 1, spec.max_tokens_per_query);
      }
      emit(StreamEventKind::NewStream, lengths[0]);
      for (std::size_t c = 1; c < chunks; ++c) {
        t += spec.inter_chunk(rng);
        const auto doc_region = std::min(lengths[c - 1], lengths[c]) - spec.query_tokens;
        const auto keep = std::min<std::size_t>(static_cast<std::size_t>(unit(rng) * static_cast<double>(doc_region + 1)),
                                                doc_region);
        emit(StreamEventKind::Update, lengths[c], keep);
      }
      t += spec.inter_chunk(rng);
      if (spec.retrieval_latency) t = std::max(t, arrival + (*spec.retrieval_latency)(rng));
      emit(StreamEventKind::Finish, 0);
    }
  }
  detail::sort_events(trace.events);
  return trace;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

inline std::unordered_map<RequestId, Seconds> stream_starts(const Trace& trace) {
  std::unordered_map<RequestId, Seconds> start;
  for (const auto& e : trace.events) {
    if (e.kind == StreamEventKind::NewStream) start.emplace(e.request_id, e.timestamp);
  }
  return start;
}

// Stretches every request's intra-request offsets; arrival times stay put.
inline Trace apply_delay_multiplier(const Trace& trace, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("delay multiplier must be positive");
  const auto start = stream_starts(trace);
  Trace out = trace;
  for (auto& e : out.events) {
    const auto t0 = start.at(e.request_id);
    e.timestamp = t0 + (e.timestamp - t0) * factor;
  }
  detail::sort_events(out.events);
  return out;
}

// Delay stretch at which steady-state KV demand reaches the given capacity.
inline double suggested_delay_multiplier(double total_kv_token_capacity, double avg_tokens_per_query,
                                         double avg_query_duration, double qps) {
  if (!(total_kv_token_capacity > 0.0) || !(avg_tokens_per_query > 0.0) || !(avg_query_duration > 0.0) ||
      !(qps > 0.0)) {
    throw std::invalid_argument("suggested_delay_multiplier: inputs must be positive");
  }
  return total_kv_token_capacity / (avg_tokens_per_query * avg_query_duration * qps);
}

// Redraws arrivals as a Poisson process at new_qps, in original arrival order.
inline Trace rescale_qps(const Trace& trace, double new_qps, std::uint64_t seed) {
  if (!(new_qps > 0.0)) throw std::invalid_argument("qps must be positive");
  const auto start = stream_starts(trace);
  std::vector<std::pair<Seconds, RequestId>> arrivals;
  for (const auto& [id, t] : start) arrivals.emplace_back(t, id);
  std::sort(arrivals.begin(), arrivals.end());

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(new_qps);
  std::unordered_map<RequestId, Seconds> shifted;
  Seconds t = 0.0;
  for (const auto& [_, id] : arrivals) {
    t += gap(rng);
    shifted[id] = t;
  }
  Trace out = trace;
  for (auto& e : out.events) e.timestamp = shifted.at(e.request_id) + (e.timestamp - start.at(e.request_id));
  detail::sort_events(out.events);
  return out;
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

struct TraceSummary {
  std::size_t num_queries = 0;
  double tokens_mean = 0.0;
  double tokens_p50 = 0.0;
  double tokens_p95 = 0.0;
  double inter_chunk_median = 0.0;
  double duration_mean = 0.0;
  std::map<std::size_t, std::size_t> chunk_histogram;
};

inline TraceSummary summarize(const Trace& trace) {
  struct Acc {
    std::size_t tokens = 0;
    std::size_t chunks = 0;
    Seconds start = 0.0;
    Seconds last_content = 0.0;
    Seconds end = 0.0;
  };
  std::map<RequestId, Acc> per;
  std::vector<double> gaps;
  for (const auto& e : trace.events) {
    auto& a = per[e.request_id];
    switch (e.kind) {
      case StreamEventKind::NewStream:
        a.start = a.last_content = e.timestamp;
        a.tokens = e.num_tokens;
        // The query alone is not a retrieved chunk in append mode.
        if (trace.mode_mix == "update") a.chunks = 1;
        break;
      case StreamEventKind::Append:
        gaps.push_back(e.timestamp - a.last_content);
        a.last_content = e.timestamp;
        a.tokens += e.num_tokens;
        ++a.chunks;
        break;
      case StreamEventKind::Update:
        gaps.push_back(e.timestamp - a.last_content);
        a.last_content = e.timestamp;
        a.tokens = e.num_tokens;
        ++a.chunks;
        break;
      case StreamEventKind::Finish:
        a.end = e.timestamp;
        break;
    }
  }
  TraceSummary s;
  s.num_queries = per.size();
  if (per.empty()) return s;
  std::vector<double> tokens;
  std::vector<double> durations;
  for (const auto& [_, a] : per) {
    tokens.push_back(static_cast<double>(a.tokens));
    durations.push_back(a.end - a.start);
    ++s.chunk_histogram[a.chunks];
  }
  s.tokens_mean = mean(tokens);
  s.tokens_p50 = percentile(tokens, 50);
  s.tokens_p95 = percentile(tokens, 95);
  s.duration_mean = mean(durations);
  if (!gaps.empty()) s.inter_chunk_median = percentile(gaps, 50);
  return s;
}

// ---------------------------------------------------------------------------
// File format: one JSON object per line; an optional first line carries a
// "trace" header object with metadata.
// ---------------------------------------------------------------------------

inline StreamEventKind parse_event_kind(std::string_view s) {
  if (s == "new_stream") return StreamEventKind::NewStream;
  if (s == "append") return StreamEventKind::Append;
  if (s == "update") return StreamEventKind::Update;
  if (s == "finish") return StreamEventKind::Finish;
  throw std::invalid_argument("unknown event kind '" + std::string(s) + "'");
}

inline void write_trace(const Trace& trace, std::ostream& out) {
  nlohmann::json header = {{"trace", {{"name", trace.name}, {"mode_mix", trace.mode_mix}, {"seed", trace.seed}}}};
  out << header.dump() << '\n';
  for (const auto& e : trace.events) {
    nlohmann::json j = {{"request_id", e.request_id.value},
                        {"kind", to_string(e.kind)},
                        {"timestamp_s", e.timestamp},
                        {"num_tokens", e.num_tokens},
                        {"content_seed", e.content_seed}};
    if (e.kind == StreamEventKind::Update) j["keep_tokens"] = e.keep_tokens;
    out << j.dump() << '\n';
  }
}

inline Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("trace")) {
        if (!trace.events.empty()) throw std::invalid_argument("header must precede events");
        const auto& h = j.at("trace");
        trace.name = h.value("name", "");
        trace.mode_mix = h.value("mode_mix", "");
        trace.seed = h.value("seed", std::uint64_t{0});
        continue;
      }
      TraceRecord r;
      r.request_id = RequestId{j.at("request_id").get<std::uint64_t>()};
      r.kind = parse_event_kind(j.at("kind").get<std::string>());
      r.timestamp = j.at("timestamp_s").get<double>();
      r.num_tokens = j.at("num_tokens").get<std::size_t>();
      r.content_seed = j.value("content_seed", std::uint64_t{0});
      r.keep_tokens = j.value("keep_tokens", std::size_t{0});
      trace.events.push_back(r);
    } catch (const std::exception& e) {
      throw TraceError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_trace(trace);
  return trace;
}

inline void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TraceError("cannot write trace " + path);
  write_trace(trace, out);
}

inline Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace " + path);
  return read_trace(in);
}

}  // namespace streamprefill
