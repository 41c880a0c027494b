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
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace streamprefill {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;
using Seconds = double;

struct RequestId {
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(const RequestId&, const RequestId&) = default;
};

inline std::string to_string(RequestId id) { return std::to_string(id.value); }

enum class StreamEventKind { NewStream, Append, Update, Finish };

enum class InputMode { Append, Update };

enum class RequestState { Waiting, Running, Finished };

enum class EngineEventKind {
  QUEUED,
  SCHEDULED,
  KV_ON_GPU,
  PREEMPTED_SWAP,
  PREEMPTED_RECOMPUTE,
  FINISHED
};

inline std::string_view to_string(StreamEventKind kind) {
  switch (kind) {
    case StreamEventKind::NewStream: return "new_stream";
    case StreamEventKind::Append: return "append";
    case StreamEventKind::Update: return "update";
    case StreamEventKind::Finish: return "finish";
  }
  return "unknown";
}

inline std::string_view to_string(InputMode mode) {
  return mode == InputMode::Append ? "append" : "update";
}

inline std::string_view to_string(RequestState state) {
  switch (state) {
    case RequestState::Waiting: return "WAITING";
    case RequestState::Running: return "RUNNING";
    case RequestState::Finished: return "FINISHED";
  }
  return "UNKNOWN";
}

inline std::string_view to_string(EngineEventKind kind) {
  switch (kind) {
    case EngineEventKind::QUEUED: return "QUEUED";
    case EngineEventKind::SCHEDULED: return "SCHEDULED";
    case EngineEventKind::KV_ON_GPU: return "KV_ON_GPU";
    case EngineEventKind::PREEMPTED_SWAP: return "PREEMPTED_SWAP";
    case EngineEventKind::PREEMPTED_RECOMPUTE: return "PREEMPTED_RECOMPUTE";
    case EngineEventKind::FINISHED: return "FINISHED";
  }
  return "UNKNOWN";
}

// Raised when a stream violates the NewStream -> (Append|Update)* -> Finish
// protocol for a request.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StreamEvent {
  RequestId request_id;
  StreamEventKind kind = StreamEventKind::NewStream;
  // Appended delta for Append, full replacement for Update, empty for Finish.
  TokenSeq tokens;
  Seconds timestamp = 0.0;
};

struct EngineEvent {
  EngineEventKind kind;
  Seconds timestamp;

  friend bool operator==(const EngineEvent&, const EngineEvent&) = default;
};

struct Request {
  RequestId id;
  InputMode mode = InputMode::Append;
  RequestState state = RequestState::Waiting;
  Seconds arrival_time = 0.0;
  // Time the engine first saw the request. Equals arrival_time when streaming;
  // the Finish time when inputs are buffered until complete.
  Seconds admit_time = 0.0;
  Seconds last_chunk_arrival_time = 0.0;
  std::optional<Seconds> input_complete_time;
  TokenSeq current_input;
  bool input_finished = false;
  std::size_t num_computed_tokens = 0;
  std::size_t total_tokens_invalidated = 0;
  std::vector<EngineEvent> event_log;
  std::optional<Seconds> first_token_time;

  // Counters surfaced in per-request metrics.
  std::size_t num_preempt_recompute = 0;
  std::size_t num_preempt_swap = 0;
  std::size_t num_forced_fallbacks = 0;
  bool mode_locked = false;

  std::size_t pending_tokens() const {
    return current_input.size() > num_computed_tokens
               ? current_input.size() - num_computed_tokens
               : 0;
  }

  void log(EngineEventKind kind, Seconds at) { event_log.push_back({kind, at}); }
};

struct InputUpdateEffect {
  std::size_t lcp = 0;
  std::size_t new_len = 0;
  bool finished = false;

  friend bool operator==(const InputUpdateEffect&, const InputUpdateEffect&) = default;
};

inline std::size_t longest_common_prefix(std::span<const Token> old_seq,
                                         std::span<const Token> new_seq) {
  const auto limit = std::min(old_seq.size(), new_seq.size());
  const auto [it, _] = std::mismatch(old_seq.begin(), old_seq.begin() + limit, new_seq.begin());
  return static_cast<std::size_t>(it - old_seq.begin());
}

// Creates the engine-side record for a NewStream event and logs QUEUED.
inline Request make_request(const StreamEvent& ev) {
  if (ev.kind != StreamEventKind::NewStream) {
    throw ProtocolError("request " + to_string(ev.request_id) + ": first event is " +
                        std::string(to_string(ev.kind)) + ", expected new_stream");
  }
  Request req;
  req.id = ev.request_id;
  req.arrival_time = ev.timestamp;
  req.admit_time = ev.timestamp;
  req.last_chunk_arrival_time = ev.timestamp;
  req.current_input = ev.tokens;
  req.log(EngineEventKind::QUEUED, ev.timestamp);
  return req;
}

// Applies an input-changing event to the request's token sequence. Blocks and
// num_computed_tokens are left untouched; invalidation is the cache's job.
inline InputUpdateEffect apply_stream_event(Request& req, StreamEvent ev) {
  auto violation = [&](std::string_view why) {
    return ProtocolError("request " + to_string(req.id) + ": " + std::string(to_string(ev.kind)) +
                         " event " + std::string(why));
  };
  if (ev.request_id != req.id) throw violation("addressed to request " + to_string(ev.request_id));
  if (req.state == RequestState::Finished) throw violation("after request finished");
  if (req.input_finished) throw violation("after finish");

  InputUpdateEffect effect;
  switch (ev.kind) {
    case StreamEventKind::NewStream:
      throw violation("repeats new_stream");
    case StreamEventKind::Append: {
      if (req.mode_locked && req.mode != InputMode::Append) throw violation("in update-mode stream");
      req.mode = InputMode::Append;
      req.mode_locked = true;
      effect.lcp = req.current_input.size();
      req.current_input.insert(req.current_input.end(), ev.tokens.begin(), ev.tokens.end());
      req.last_chunk_arrival_time = ev.timestamp;
      break;
    }
    case StreamEventKind::Update: {
      if (req.mode_locked && req.mode != InputMode::Update) throw violation("in append-mode stream");
      req.mode = InputMode::Update;
      req.mode_locked = true;
      effect.lcp = longest_common_prefix(req.current_input, ev.tokens);
      req.current_input = std::move(ev.tokens);
      req.last_chunk_arrival_time = ev.timestamp;
      break;
    }
    case StreamEventKind::Finish:
      req.input_finished = true;
      req.input_complete_time = ev.timestamp;
      effect.lcp = req.current_input.size();
      effect.finished = true;
      break;
  }
  effect.new_len = req.current_input.size();
  return effect;
}

}  // namespace streamprefill

template <>
struct std::hash<streamprefill::RequestId> {
  std::size_t operator()(streamprefill::RequestId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
