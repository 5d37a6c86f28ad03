/* Copyright 2026 The vattn Authors. All Rights Reserved.

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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vattn/common.h"
#include "vattn/model_geometry.h"

namespace vattn {

// Orca-style allocator: every admitted request is given a full max-context
// KV cache up front.
class StaticAllocator {
 public:
  StaticAllocator(const ModelGeometry& geometry, Bytes capacity);

  // 2N * S bytes, the commitment of one request regardless of its length.
  Bytes commitment_bytes() const { return commitment_; }
  // Requests that fit at once: min(B, capacity / commitment).
  std::uint64_t max_requests() const { return max_requests_; }

  // Commits one request; nullopt when the next commitment would exceed
  // capacity or all B slots are taken.
  std::optional<int> reserve();
  // Throws kDoubleFree for a slot that is not reserved.
  void release(int slot);

  std::size_t slot_count() const { return in_use_.size(); }
  std::uint64_t active_count() const { return active_; }
  Bytes committed_bytes() const { return active_ * commitment_; }

  // Unused bytes of a request that actually holds `actual_len` tokens.
  Bytes waste_bytes(Tokens actual_len) const;
  // (L - actual_len) / L.
  double waste_fraction(Tokens actual_len) const;

 private:
  ModelGeometry geometry_;
  Bytes capacity_;
  Bytes commitment_;
  std::uint64_t max_requests_;
  std::vector<bool> in_use_;
  std::uint64_t active_ = 0;
};

using BlockId = std::uint32_t;

// Fixed pool of KV blocks with a LIFO free list. Ids start at 1; 0 is the
// block-table padding value.
class BlockPool {
 public:
  BlockPool(std::uint64_t total_blocks, Tokens block_size_tokens);

  std::optional<BlockId> allocate();
  // Throws kInvalidFree for ids that are not currently allocated.
  void free(BlockId block);

  std::uint64_t total_blocks() const { return total_; }
  std::uint64_t free_blocks() const { return free_list_.size(); }
  std::uint64_t allocated_blocks() const { return total_ - free_list_.size(); }
  Tokens block_size_tokens() const { return block_size_; }

 private:
  std::uint64_t total_;
  Tokens block_size_;
  std::vector<BlockId> free_list_;
  std::vector<bool> allocated_;
};

// Padded 2D block table, one row per request in the batch.
struct BlockTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<BlockId> entries;  // row-major, 0 = padding

  BlockId at(std::size_t row, std::size_t col) const {
    return entries[row * cols + col];
  }
};

// PagedAttention-style allocator: a request's KV lives in fixed-size blocks
// scattered through one pre-allocated pool, located through a block table.
class PagedAllocator {
 public:
  // One block holds block_size_tokens tokens of K and V for every layer.
  PagedAllocator(const ModelGeometry& geometry, Bytes capacity,
                 Tokens block_size_tokens, std::uint64_t max_requests);

  // nullopt when all request slots are taken.
  std::optional<int> add_request();
  // Appends one block to the request. False when the pool is empty.
  bool alloc_block(int request);
  // Grows the request to cover seq_len tokens; all-or-nothing.
  bool ensure_capacity(int request, Tokens seq_len);
  // Returns every block of the request to the pool and frees its slot.
  void free_request(int request);

  const std::vector<BlockId>& blocks(int request) const;
  BlockTable build_block_table(std::span<const int> batch) const;

  // K (or V) bytes of one block in one layer.
  Bytes block_bytes() const { return block_layer_bytes_; }
  // Bytes of one block across all layers, K and V.
  Bytes block_footprint() const { return block_footprint_; }
  Tokens block_size_tokens() const { return pool_.block_size_tokens(); }
  std::uint64_t blocks_for(Tokens seq_len) const {
    return ceil_div(seq_len, pool_.block_size_tokens());
  }

  const BlockPool& pool() const { return pool_; }
  std::size_t slot_count() const { return requests_.size(); }
  bool is_active(int request) const;
  Bytes committed_bytes() const {
    return pool_.allocated_blocks() * block_footprint_;
  }
  std::uint64_t total_blocks_allocated() const { return lifetime_allocs_; }

 private:
  struct Request {
    bool active = false;
    std::vector<BlockId> blocks;
  };
  Request& live(int request);
  const Request& live(int request) const;

  ModelGeometry geometry_;
  Bytes block_layer_bytes_;
  Bytes block_footprint_;
  BlockPool pool_;
  std::vector<Request> requests_;
  std::uint64_t lifetime_allocs_ = 0;
};

// c_bt * max_num_blocks * batch_size, where max_num_blocks belongs to the
// longest request: the table is padded to that width for every row.
Nanos block_table_prep_cost(std::span<const Tokens> seq_lens,
                            Tokens block_size_tokens, double ns_per_entry);

}  // namespace vattn
