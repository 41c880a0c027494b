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
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "streamprefill/kvcache.hpp"

namespace streamprefill {

class InvalidProfileError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LatencySample {
  std::size_t tokens = 0;
  Seconds latency = 0.0;

  friend bool operator==(const LatencySample&, const LatencySample&) = default;
};

struct PerfProfile {
  std::string hardware_name;
  std::vector<LatencySample> recompute_samples;
  Seconds swap_seconds_per_block = 0.0;
  Seconds step_overhead = 0.0;
};

enum class Eviction { Recompute, Swap };

inline std::string_view to_string(Eviction e) { return e == Eviction::Recompute ? "recompute" : "swap"; }

// Sorts samples by token count and checks that latency never decreases. The
// interpolant through the sorted samples is the fitted model.
inline std::vector<LatencySample> fit_profile(std::vector<LatencySample> samples) {
  if (samples.size() < 2) throw InvalidProfileError("profile needs at least 2 recompute samples");
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.tokens < b.tokens; });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].latency < 0.0) throw InvalidProfileError("profile latency must be non-negative");
    if (i == 0) continue;
    if (samples[i].tokens == samples[i - 1].tokens) {
      throw InvalidProfileError("duplicate sample at " + std::to_string(samples[i].tokens) + " tokens");
    }
    if (samples[i].latency < samples[i - 1].latency) {
      throw InvalidProfileError("latency decreases between " + std::to_string(samples[i - 1].tokens) +
                                " and " + std::to_string(samples[i].tokens) + " tokens");
    }
  }
  return samples;
}

inline void validate(const PerfProfile& p) {
  if (p.recompute_samples.size() < 2) throw InvalidProfileError("profile needs at least 2 recompute samples");
  if (fit_profile(p.recompute_samples) != p.recompute_samples) {
    throw InvalidProfileError("recompute samples must be sorted by tokens");
  }
  if (!(p.swap_seconds_per_block > 0.0)) throw InvalidProfileError("swap_seconds_per_block must be positive");
  if (p.step_overhead < 0.0) throw InvalidProfileError("step_overhead must be non-negative");
}

// Piecewise-linear; through the origin below the first sample and along the
// last segment's slope past the final one.
inline Seconds recompute_latency(const PerfProfile& p, std::size_t tokens) {
  const auto& s = p.recompute_samples;
  if (tokens == 0) return 0.0;
  const double t = static_cast<double>(tokens);
  if (tokens <= s.front().tokens) return t / static_cast<double>(s.front().tokens) * s.front().latency;
  auto hi = std::lower_bound(s.begin(), s.end(), tokens,
                             [](const LatencySample& a, std::size_t v) { return a.tokens < v; });
  if (hi == s.end()) hi = s.end() - 1;
  const auto lo = hi - 1;
  const double x0 = static_cast<double>(lo->tokens);
  const double x1 = static_cast<double>(hi->tokens);
  return lo->latency + (hi->latency - lo->latency) * (t - x0) / (x1 - x0);
}

inline Seconds swap_latency(const PerfProfile& p, std::size_t blocks) {
  return static_cast<double>(blocks) * p.swap_seconds_per_block;
}

// Per-block transfer time of a block over a link of the given bandwidth.
inline Seconds swap_seconds_per_block(const KVGeometry& g, double bytes_per_second) {
  return static_cast<double>(block_bytes(g)) / bytes_per_second;
}

// Swap pays the transfer twice (out now, in on resume); ties favour recompute.
inline Eviction choose_eviction(const PerfProfile& p, std::size_t computed_tokens, std::size_t gpu_blocks) {
  return recompute_latency(p, computed_tokens) <= 2.0 * swap_latency(p, gpu_blocks) ? Eviction::Recompute
                                                                                     : Eviction::Swap;
}

inline Eviction choose_eviction(const PerfProfile& p, const Request& req, const BlockPool& pool) {
  return choose_eviction(p, req.num_computed_tokens, pool.gpu_blocks(req.id).size());
}

inline PerfProfile profile_from_json(const nlohmann::json& j) {
  PerfProfile p;
  try {
    p.hardware_name = j.at("hardware_name").get<std::string>();
    std::vector<LatencySample> raw;
    for (const auto& pair : j.at("recompute_samples")) {
      raw.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<double>()});
    }
    p.recompute_samples = fit_profile(std::move(raw));
    p.swap_seconds_per_block = j.at("swap_seconds_per_block").get<double>();
    p.step_overhead = j.value("step_overhead", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidProfileError(std::string("profile: ") + e.what());
  }
  validate(p);
  return p;
}

inline nlohmann::json profile_to_json(const PerfProfile& p) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : p.recompute_samples) samples.push_back({s.tokens, s.latency});
  return {{"hardware_name", p.hardware_name},
          {"recompute_samples", samples},
          {"swap_seconds_per_block", p.swap_seconds_per_block},
          {"step_overhead", p.step_overhead}};
}

inline PerfProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidProfileError("profile file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidProfileError("profile " + path + ": " + e.what());
  }
  return profile_from_json(j);
}

}  // namespace streamprefill
