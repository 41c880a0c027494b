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

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "streamprefill/domain.hpp"

namespace streamprefill {

using Bytes = std::uint64_t;
using BlockId = std::uint32_t;

// Transformer dimensions that determine KV footprint, plus the paging block
// size in tokens.
struct KVGeometry {
  std::uint64_t num_layers = 32;
  std::uint64_t hidden_dim = 4096;
  std::uint64_t num_heads = 32;
  std::uint64_t kv_heads = 8;
  std::uint64_t bytes_per_param = 2;
  std::size_t block_size = 16;

  void validate() const {
    if (num_layers == 0 || hidden_dim == 0 || num_heads == 0 || kv_heads == 0 ||
        bytes_per_param == 0 || block_size == 0) {
      throw std::invalid_argument("model_geometry: all fields must be positive");
    }
    if (num_heads % kv_heads != 0) {
      throw std::invalid_argument("model_geometry: kv_heads must divide num_heads");
    }
  }
};

// Bytes of K and V for one token across all layers.
inline Bytes kv_bytes_per_token(const KVGeometry& g) {
  return 2 * g.num_layers * g.hidden_dim * g.kv_heads * g.bytes_per_param / g.num_heads;
}

inline Bytes kv_bytes(const KVGeometry& g, std::size_t tokens) {
  return static_cast<Bytes>(tokens) * kv_bytes_per_token(g);
}

inline Bytes block_bytes(const KVGeometry& g) { return kv_bytes(g, g.block_size); }

constexpr std::size_t blocks_needed(std::size_t tokens, std::size_t block_size) {
  return (tokens + block_size - 1) / block_size;
}

enum class Tier { Gpu, Cpu };

enum class AllocResult { Ok, InsufficientMemory };

struct SwapResult {
  bool ok = false;
  std::size_t moved = 0;
};

class UnknownRequestError : public std::out_of_range {
 public:
  explicit UnknownRequestError(RequestId id)
      : std::out_of_range("block pool: unknown request " + to_string(id)) {}
};

// GPU and CPU block inventories with per-request ownership. Blocks are never
// shared between requests.
class BlockPool {
 public:
  BlockPool() = default;
  BlockPool(std::size_t gpu_capacity, std::size_t cpu_capacity)
      : gpu_capacity_(gpu_capacity), cpu_capacity_(cpu_capacity) {
    gpu_free_list_.resize(gpu_capacity);
    cpu_free_list_.resize(cpu_capacity);
    // Hand out low ids first.
    std::iota(gpu_free_list_.rbegin(), gpu_free_list_.rend(), BlockId{0});
    std::iota(cpu_free_list_.rbegin(), cpu_free_list_.rend(), BlockId{0});
  }

  std::size_t gpu_capacity() const { return gpu_capacity_; }
  std::size_t cpu_capacity() const { return cpu_capacity_; }
  std::size_t gpu_free() const { return gpu_free_list_.size(); }
  std::size_t cpu_free() const { return cpu_free_list_.size(); }

  void register_request(RequestId id) { holdings_.try_emplace(id); }
  bool contains(RequestId id) const { return holdings_.contains(id); }

  // Frees everything the request holds and forgets it.
  void release(RequestId id) {
    free_all(id, Tier::Gpu);
    free_all(id, Tier::Cpu);
    holdings_.erase(id);
  }

  std::span<const BlockId> gpu_blocks(RequestId id) const { return at(id).gpu; }
  std::span<const BlockId> cpu_blocks(RequestId id) const { return at(id).cpu; }

  // All-or-nothing.
  AllocResult allocate_gpu(RequestId id, std::size_t n) {
    auto& h = at(id);
    if (gpu_free_list_.size() < n) return AllocResult::InsufficientMemory;
    for (std::size_t i = 0; i < n; ++i) {
      h.gpu.push_back(gpu_free_list_.back());
      gpu_free_list_.pop_back();
    }
    return AllocResult::Ok;
  }

  std::size_t free_all(RequestId id, Tier tier) {
    auto& held = tier == Tier::Gpu ? at(id).gpu : at(id).cpu;
    auto& free_list = tier == Tier::Gpu ? gpu_free_list_ : cpu_free_list_;
    return release_tail(held, free_list, 0);
  }

  // Moves every GPU block of the request to the CPU tier, preserving order.
  // Fails without side effects when the CPU tier cannot absorb them.
  SwapResult swap_out(const Request& req) {
    auto& h = at(req.id);
    if (cpu_free_list_.size() < h.gpu.size()) return {false, 0};
    return {true, move_all(h.gpu, gpu_free_list_, h.cpu, cpu_free_list_)};
  }

  SwapResult swap_in(const Request& req) {
    auto& h = at(req.id);
    if (gpu_free_list_.size() < h.cpu.size()) return {false, 0};
    return {true, move_all(h.cpu, cpu_free_list_, h.gpu, gpu_free_list_)};
  }

  // Discards cached state past the longest common prefix. The boundary is
  // rounded down to a block edge, so a block straddling the prefix is dropped
  // and recomputed. Returns the number of computed tokens discarded.
  std::size_t invalidate_from(Request& req, std::size_t lcp, const KVGeometry& g) {
    auto& h = at(req.id);
    if (lcp >= req.num_computed_tokens) return 0;
    const std::size_t k = g.block_size;
    const std::size_t boundary = lcp / k * k;
    const std::size_t keep = boundary / k;
    if (!h.gpu.empty()) release_tail(h.gpu, gpu_free_list_, keep);
    if (!h.cpu.empty()) release_tail(h.cpu, cpu_free_list_, keep);
    const std::size_t invalidated = req.num_computed_tokens - boundary;
    req.num_computed_tokens = boundary;
    req.total_tokens_invalidated += invalidated;
    return invalidated;
  }

  // free + held == capacity on both tiers.
  bool conserved() const {
    std::size_t gpu_held = 0;
    std::size_t cpu_held = 0;
    for (const auto& [_, h] : holdings_) {
      gpu_held += h.gpu.size();
      cpu_held += h.cpu.size();
    }
    return gpu_held + gpu_free() == gpu_capacity_ && cpu_held + cpu_free() == cpu_capacity_;
  }

 private:
  struct Holdings {
    std::vector<BlockId> gpu;
    std::vector<BlockId> cpu;
  };

  Holdings& at(RequestId id) {
    auto it = holdings_.find(id);
    if (it == holdings_.end()) throw UnknownRequestError(id);
    return it->second;
  }
  const Holdings& at(RequestId id) const {
    auto it = holdings_.find(id);
    if (it == holdings_.end()) throw UnknownRequestError(id);
    return it->second;
  }

  static std::size_t release_tail(std::vector<BlockId>& held, std::vector<BlockId>& free_list,
                                  std::size_t keep) {
    if (held.size() <= keep) return 0;
    const std::size_t n = held.size() - keep;
    free_list.insert(free_list.end(), held.rbegin(), held.rbegin() + static_cast<std::ptrdiff_t>(n));
    held.resize(keep);
    return n;
  }

  static std::size_t move_all(std::vector<BlockId>& from, std::vector<BlockId>& from_free,
                              std::vector<BlockId>& to, std::vector<BlockId>& to_free) {
    const std::size_t n = from.size();
    for (std::size_t k = 0; k < n; ++k) {
      to.push_back(to_free.back());
      to_free.pop_back();
    }
    // Reversed so an immediate move back gets the same ids in the same order.
    from_free.insert(from_free.end(), from.rbegin(), from.rend());
    from.clear();
    return n;
  }

  std::size_t gpu_capacity_ = 0;
  std::size_t cpu_capacity_ = 0;
  std::vector<BlockId> gpu_free_list_;
  std::vector<BlockId> cpu_free_list_;
  std::unordered_map<RequestId, Holdings> holdings_;
};

}  // namespace streamprefill
