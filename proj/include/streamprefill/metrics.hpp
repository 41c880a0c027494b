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

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "streamprefill/simulator.hpp"
#include "streamprefill/stats.hpp"

namespace streamprefill {

// Which instant TTFT is measured from.
enum class TtftAnchor {
  Arrival,        // QUEUED (the stream's first event)
  InputComplete,  // the Finish event
};

inline TtftAnchor parse_anchor(std::string_view s) {
  if (s == "arrival") return TtftAnchor::Arrival;
  if (s == "input_complete") return TtftAnchor::InputComplete;
  throw std::invalid_argument("unknown ttft anchor '" + std::string(s) + "' (expected arrival or input_complete)");
}

struct RequestRow {
  RequestId id;
  InputMode mode = InputMode::Append;
  double arrival = 0.0;
  double input_complete = 0.0;
  double first_token = 0.0;
  double ttft = 0.0;
  double ttft_after_input = 0.0;
  std::size_t input_tokens = 0;
  std::size_t tokens_invalidated = 0;
  std::size_t preempt_recompute = 0;
  std::size_t preempt_swap = 0;
  std::size_t forced_fallbacks = 0;
};

struct LatencySummary {
  double mean = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};

struct Report {
  std::string label;
  std::string trace_id;
  std::vector<RequestRow> rows;
  LatencySummary ttft;
  LatencySummary ttft_after_input;
  double completion_time = 0.0;
  std::size_t steps = 0;
  double utilization = 0.0;
  std::size_t preempt_recompute = 0;
  std::size_t preempt_swap = 0;
  std::size_t forced_fallbacks = 0;
  std::size_t tokens_invalidated = 0;

  std::vector<double> values(TtftAnchor anchor) const {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(anchor == TtftAnchor::Arrival ? r.ttft : r.ttft_after_input);
    return v;
  }
  double at(TtftAnchor anchor, double p) const { return percentile(values(anchor), p); }

  // Share of preemptions per strategy, in percent; 0 when none happened.
  double recompute_pct() const {
    const auto total = preempt_recompute + preempt_swap;
    return total ? 100.0 * static_cast<double>(preempt_recompute) / static_cast<double>(total) : 0.0;
  }
  double swap_pct() const {
    const auto total = preempt_recompute + preempt_swap;
    return total ? 100.0 * static_cast<double>(preempt_swap) / static_cast<double>(total) : 0.0;
  }
};

inline LatencySummary summarize_latency(const std::vector<double>& v) {
  LatencySummary s;
  if (v.empty()) return s;
  s.mean = mean(v);
  s.p50 = percentile(v, 50);
  s.p75 = percentile(v, 75);
  s.p95 = percentile(v, 95);
  s.p99 = percentile(v, 99);
  s.max = percentile(v, 100);
  return s;
}

inline Report build_report(const SimResult& result, std::string label, std::string trace_id) {
  Report rep;
  rep.label = std::move(label);
  rep.trace_id = std::move(trace_id);
  for (const auto& r : result.requests) {
    RequestRow row;
    row.id = r.id;
    row.mode = r.mode;
    row.arrival = r.arrival_time;
    row.input_complete = r.input_complete_time;
    row.first_token = r.first_token_time.value_or(0.0);
    row.ttft = streamprefill::ttft(r);
    row.ttft_after_input = ttft_after_input(r);
    row.input_tokens = r.input_tokens;
    row.tokens_invalidated = r.tokens_invalidated;
    row.preempt_recompute = r.preempt_recompute;
    row.preempt_swap = r.preempt_swap;
    row.forced_fallbacks = r.forced_fallbacks;
    rep.rows.push_back(row);
  }
  rep.ttft = summarize_latency(rep.values(TtftAnchor::Arrival));
  rep.ttft_after_input = summarize_latency(rep.values(TtftAnchor::InputComplete));
  rep.completion_time = result.trace_completion_time;
  rep.steps = result.steps;
  rep.utilization = result.trace_completion_time > 0.0 ? result.busy_time / result.trace_completion_time : 0.0;
  rep.preempt_recompute = result.preempt_recompute;
  rep.preempt_swap = result.preempt_swap;
  rep.forced_fallbacks = result.forced_fallbacks;
  for (const auto& r : rep.rows) rep.tokens_invalidated += r.tokens_invalidated;
  return rep;
}

struct SpeedupTable {
  std::vector<double> percentiles;
  std::vector<std::string> labels;
  // cells[row][col] = baseline / variant at percentiles[col]; > 1 is faster.
  std::vector<std::vector<double>> cells;
};

inline SpeedupTable speedup_table(const Report& baseline, const std::vector<Report>& variants,
                                  const std::vector<double>& percentiles,
                                  TtftAnchor anchor = TtftAnchor::InputComplete) {
  SpeedupTable t;
  t.percentiles = percentiles;
  const auto base = baseline.values(anchor);
  for (const auto& v : variants) {
    if (v.trace_id != baseline.trace_id) {
      throw std::invalid_argument("speedup_table: report '" + v.label + "' is from trace '" + v.trace_id +
                                  "', baseline is from '" + baseline.trace_id + "'");
    }
    const auto vals = v.values(anchor);
    std::vector<double> row;
    for (double p : percentiles) row.push_back(percentile(base, p) / percentile(vals, p));
    t.labels.push_back(v.label);
    t.cells.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Export. Numbers are printed with 6 significant digits.
// ---------------------------------------------------------------------------

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

enum class ExportFormat { Csv, JsonLines };

inline constexpr std::string_view kRequestColumns =
    "request_id,mode,arrival_s,input_complete_s,first_token_s,ttft_s,ttft_after_input_s,input_tokens,"
    "tokens_invalidated,preempt_recompute,preempt_swap,forced_fallbacks";

inline void write_requests(const Report& rep, std::ostream& out, ExportFormat format = ExportFormat::Csv) {
  if (format == ExportFormat::Csv) out << kRequestColumns << '\n';
  for (const auto& r : rep.rows) {
    if (format == ExportFormat::Csv) {
      out << r.id.value << ',' << to_string(r.mode) << ',' << fmt6(r.arrival) << ',' << fmt6(r.input_complete) << ','
          << fmt6(r.first_token) << ',' << fmt6(r.ttft) << ',' << fmt6(r.ttft_after_input) << ',' << r.input_tokens
          << ',' << r.tokens_invalidated << ',' << r.preempt_recompute << ',' << r.preempt_swap << ','
          << r.forced_fallbacks << '\n';
    } else {
      // Values go through the same 6-digit formatting so both formats agree.
      nlohmann::json j = {{"request_id", r.id.value},
                          {"mode", to_string(r.mode)},
                          {"arrival_s", std::stod(fmt6(r.arrival))},
                          {"input_complete_s", std::stod(fmt6(r.input_complete))},
                          {"first_token_s", std::stod(fmt6(r.first_token))},
                          {"ttft_s", std::stod(fmt6(r.ttft))},
                          {"ttft_after_input_s", std::stod(fmt6(r.ttft_after_input))},
                          {"input_tokens", r.input_tokens},
                          {"tokens_invalidated", r.tokens_invalidated},
                          {"preempt_recompute", r.preempt_recompute},
                          {"preempt_swap", r.preempt_swap},
                          {"forced_fallbacks", r.forced_fallbacks}};
      out << j.dump() << '\n';
    }
  }
}

inline std::vector<RequestRow> read_requests_csv(std::istream& in) {
  std::vector<RequestRow> rows;
  std::string line;
  if (!std::getline(in, line) || line != kRequestColumns) throw std::runtime_error("requests csv: bad header");
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 12) throw std::runtime_error("requests csv: expected 12 columns in '" + line + "'");
    RequestRow r;
    r.id = RequestId{std::stoull(f[0])};
    r.mode = f[1] == "update" ? InputMode::Update : InputMode::Append;
    r.arrival = std::stod(f[2]);
    r.input_complete = std::stod(f[3]);
    r.first_token = std::stod(f[4]);
    r.ttft = std::stod(f[5]);
    r.ttft_after_input = std::stod(f[6]);
    r.input_tokens = std::stoull(f[7]);
    r.tokens_invalidated = std::stoull(f[8]);
    r.preempt_recompute = std::stoull(f[9]);
    r.preempt_swap = std::stoull(f[10]);
    r.forced_fallbacks = std::stoull(f[11]);
    rows.push_back(r);
  }
  return rows;
}

inline void write_events(const SimResult& result, std::ostream& out) {
  out << "request_id,event,timestamp_s\n";
  for (const auto& r : result.requests) {
    for (const auto& e : r.event_log) out << r.id.value << ',' << to_string(e.kind) << ',' << fmt6(e.timestamp) << '\n';
  }
}

inline void write_report(const Report& rep, std::ostream& out) {
  out << "metric,value\n";
  auto row = [&](std::string_view k, double v) { out << k << ',' << fmt6(v) << '\n'; };
  out << "label," << rep.label << '\n' << "trace_id," << rep.trace_id << '\n';
  row("num_requests", static_cast<double>(rep.rows.size()));
  for (const auto& [prefix, s] : {std::pair{"ttft", rep.ttft}, std::pair{"ttft_after_input", rep.ttft_after_input}}) {
    const std::string p(prefix);
    row(p + "_mean_s", s.mean);
    row(p + "_p50_s", s.p50);
    row(p + "_p75_s", s.p75);
    row(p + "_p95_s", s.p95);
    row(p + "_p99_s", s.p99);
    row(p + "_max_s", s.max);
  }
  row("trace_completion_s", rep.completion_time);
  row("steps", static_cast<double>(rep.steps));
  row("utilization", rep.utilization);
  row("preempt_recompute", static_cast<double>(rep.preempt_recompute));
  row("preempt_swap", static_cast<double>(rep.preempt_swap));
  row("preempt_recompute_pct", rep.recompute_pct());
  row("preempt_swap_pct", rep.swap_pct());
  row("forced_fallbacks", static_cast<double>(rep.forced_fallbacks));
  row("tokens_invalidated", static_cast<double>(rep.tokens_invalidated));
}

inline void write_ccdf(std::span<const double> values, std::ostream& out) {
  out << "threshold_s,fraction\n";
  if (values.empty()) return;
  for (const auto& p : ccdf(values)) out << fmt6(p.threshold) << ',' << fmt6(p.fraction) << '\n';
}

inline void write_speedup_table(const SpeedupTable& t, std::ostream& out) {
  out << "variant";
  for (double p : t.percentiles) out << ",p" << fmt6(p);
  out << '\n';
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    out << t.labels[i];
    for (double c : t.cells[i]) out << ',' << fmt6(c);
    out << '\n';
  }
}

}  // namespace streamprefill
