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

#include "vattn/baseline_allocators.h"

#include <algorithm>
#include <cmath>
#include <string>

namespace vattn {

StaticAllocator::StaticAllocator(const ModelGeometry& geometry, Bytes capacity)
    : geometry_(geometry), capacity_(capacity) {
  commitment_ = checked_mul(2 * geometry_.n_layers,
                            per_request_buffer_bytes(geometry_));
  if (commitment_ == 0) {
    throw Error(ErrorCode::kConfig, "static reservation needs max_context >= 1");
  }
  max_requests_ = std::min<std::uint64_t>(geometry_.max_batch,
                                          capacity_ / commitment_);
  in_use_.assign(geometry_.max_batch, false);
}

std::optional<int> StaticAllocator::reserve() {
  if (active_ >= max_requests_) return std::nullopt;
  auto it = std::find(in_use_.begin(), in_use_.end(), false);
  if (it == in_use_.end()) return std::nullopt;
  *it = true;
  ++active_;
  return static_cast<int>(it - in_use_.begin());
}

void StaticAllocator::release(int slot) {
  if (slot < 0 || static_cast<std::size_t>(slot) >= in_use_.size() ||
      !in_use_[slot]) {
    throw Error(ErrorCode::kDoubleFree,
                "static slot " + std::to_string(slot) + " is not reserved");
  }
  in_use_[slot] = false;
  --active_;
}

Bytes StaticAllocator::waste_bytes(Tokens actual_len) const {
  const Tokens len = std::min(actual_len, geometry_.max_context);
  return checked_mul(geometry_.max_context - len, per_token_kv_bytes(geometry_));
}

double StaticAllocator::waste_fraction(Tokens actual_len) const {
  const Tokens len = std::min(actual_len, geometry_.max_context);
  return static_cast<double>(geometry_.max_context - len) /
         static_cast<double>(geometry_.max_context);
}

BlockPool::BlockPool(std::uint64_t total_blocks, Tokens block_size_tokens)
    : total_(total_blocks), block_size_(block_size_tokens) {
  if (block_size_tokens == 0) {
    throw Error(ErrorCode::kConfig, "block size must be >= 1 token");
  }
  free_list_.reserve(total_);
  // Highest id at the bottom so the first allocation returns block 1.
  for (std::uint64_t i = total_; i >= 1; --i) {
    free_list_.push_back(static_cast<BlockId>(i));
  }
  allocated_.assign(total_ + 1, false);
}

std::optional<BlockId> BlockPool::allocate() {
  if (free_list_.empty()) return std::nullopt;
  const BlockId id = free_list_.back();
  free_list_.pop_back();
  allocated_[id] = true;
  return id;
}

void BlockPool::free(BlockId block) {
  if (block == 0 || block > total_ || !allocated_[block]) {
    throw Error(ErrorCode::kInvalidFree,
                "block " + std::to_string(block) + " is not allocated");
  }
  allocated_[block] = false;
  free_list_.push_back(block);
}

PagedAllocator::PagedAllocator(const ModelGeometry& geometry, Bytes capacity,
                               Tokens block_size_tokens,
                               std::uint64_t max_requests)
    : geometry_(geometry),
      block_layer_bytes_(checked_mul(block_size_tokens,
                                     geometry.token_layer_bytes())),
      block_footprint_(checked_mul(block_size_tokens,
                                   per_token_kv_bytes(geometry))),
      pool_(block_footprint_ == 0 ? 0 : capacity / block_footprint_,
            block_size_tokens),
      requests_(max_requests) {}

PagedAllocator::Request& PagedAllocator::live(int request) {
  if (request < 0 || static_cast<std::size_t>(request) >= requests_.size() ||
      !requests_[request].active) {
    throw Error(ErrorCode::kInvalidSlot,
                "paged request " + std::to_string(request) + " is not active");
  }
  return requests_[request];
}

const PagedAllocator::Request& PagedAllocator::live(int request) const {
  return const_cast<PagedAllocator*>(this)->live(request);
}

bool PagedAllocator::is_active(int request) const {
  return request >= 0 && static_cast<std::size_t>(request) < requests_.size() &&
         requests_[request].active;
}

std::optional<int> PagedAllocator::add_request() {
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    if (!requests_[i].active) {
      requests_[i].active = true;
      requests_[i].blocks.clear();
      return static_cast<int>(i);
    }
  }
  return std::nullopt;
}

bool PagedAllocator::alloc_block(int request) {
  Request& r = live(request);
  auto block = pool_.allocate();
  if (!block) return false;
  r.blocks.push_back(*block);
  ++lifetime_allocs_;
  return true;
}

bool PagedAllocator::ensure_capacity(int request, Tokens seq_len) {
  Request& r = live(request);
  const std::uint64_t need = blocks_for(seq_len);
  if (need <= r.blocks.size()) return true;
  if (need - r.blocks.size() > pool_.free_blocks()) return false;
  while (r.blocks.size() < need) alloc_block(request);
  return true;
}

void PagedAllocator::free_request(int request) {
  Request& r = live(request);
  for (BlockId b : r.blocks) pool_.free(b);
  r.blocks.clear();
  r.active = false;
}

const std::vector<BlockId>& PagedAllocator::blocks(int request) const {
  return live(request).blocks;
}

BlockTable PagedAllocator::build_block_table(std::span<const int> batch) const {
  BlockTable table;
  table.rows = batch.size();
  for (int request : batch) {
    table.cols = std::max(table.cols, live(request).blocks.size());
  }
  table.entries.assign(table.rows * table.cols, 0);
  for (std::size_t row = 0; row < batch.size(); ++row) {
    const auto& blocks = live(batch[row]).blocks;
    std::copy(blocks.begin(), blocks.end(),
              table.entries.begin() + static_cast<std::ptrdiff_t>(row * table.cols));
  }
  return table;
}

Nanos block_table_prep_cost(std::span<const Tokens> seq_lens,
                            Tokens block_size_tokens, double ns_per_entry) {
  std::uint64_t batch = 0;
  std::uint64_t max_blocks = 0;
  for (Tokens len : seq_lens) {
    if (len == 0) continue;
    ++batch;
    max_blocks = std::max(max_blocks, ceil_div(len, block_size_tokens));
  }
  return static_cast<Nanos>(std::llround(
      ns_per_entry * static_cast<double>(max_blocks) * static_cast<double>(batch)));
}

}  // namespace vattn
