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

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "test_util.h"

namespace vattn {
namespace {

using testing::tiny_geometry;

TEST(StaticAllocatorTest, CommitsFullContextPerRequest) {
  const auto g = tiny_geometry(2, 1000, 8);  // 8KB per token
  const Bytes commitment = 1000 * 8 * kKiB;
  StaticAllocator s(g, 3 * commitment + 1);
  EXPECT_EQ(s.commitment_bytes(), commitment);
  EXPECT_EQ(s.max_requests(), 3u);
  const auto a = s.reserve();
  const auto b = s.reserve();
  const auto c = s.reserve();
  ASSERT_TRUE(a && b && c);
  EXPECT_FALSE(s.reserve());
  EXPECT_EQ(s.committed_bytes(), 3 * commitment);
  s.release(*b);
  EXPECT_EQ(s.reserve(), b);
  EXPECT_THROW(s.release(7), Error);
  s.release(*a);
  EXPECT_THROW(s.release(*a), Error);
}

TEST(StaticAllocatorTest, BatchLimitCapsRequests) {
  const auto g = tiny_geometry(2, 10, 2);
  StaticAllocator s(g, 1 * kGiB);
  EXPECT_EQ(s.max_requests(), 2u);
}

TEST(StaticAllocatorTest, WasteIsUnusedContext) {
  const auto g = tiny_geometry(2, 1000, 8);
  StaticAllocator s(g, 1 * kGiB);
  EXPECT_EQ(s.waste_bytes(250), 750 * per_token_kv_bytes(g));
  EXPECT_EQ(s.waste_bytes(1000), 0u);
  EXPECT_EQ(s.waste_bytes(5000), 0u);
  EXPECT_DOUBLE_EQ(s.waste_fraction(250), 0.75);
}

TEST(BlockPoolTest, LifoFreeListStartingAtOne) {
  BlockPool pool(4, 16);
  EXPECT_EQ(pool.allocate(), 1u);
  EXPECT_EQ(pool.allocate(), 2u);
  pool.free(1);
  EXPECT_EQ(pool.allocate(), 1u);
  EXPECT_EQ(pool.allocated_blocks(), 2u);
  EXPECT_THROW(pool.free(0), Error);
  EXPECT_THROW(pool.free(3), Error);
  EXPECT_THROW(pool.free(9), Error);
  EXPECT_EQ(pool.allocate(), 3u);
  EXPECT_EQ(pool.allocate(), 4u);
  EXPECT_FALSE(pool.allocate());
  EXPECT_THROW(BlockPool(4, 0), Error);
}

TEST(BlockPoolTest, RandomChurnNeverDoubleIssues) {
  BlockPool pool(64, 16);
  std::set<BlockId> held;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20000; ++i) {
    if (rng() % 2 == 0) {
      const auto b = pool.allocate();
      if (held.size() == 64) {
        EXPECT_FALSE(b);
      } else {
        ASSERT_TRUE(b);
        EXPECT_TRUE(held.insert(*b).second);
      }
    } else if (!held.empty()) {
      auto it = held.begin();
      std::advance(it, static_cast<long>(rng() % held.size()));
      pool.free(*it);
      held.erase(it);
    }
    ASSERT_EQ(pool.allocated_blocks(), held.size());
  }
}

TEST(PagedAllocatorTest, BlockSizesAndPool) {
  const auto g = tiny_geometry(2, 4096, 4);
  PagedAllocator p(g, 1 * kMiB, 16, 4);
  EXPECT_EQ(p.block_bytes(), 16 * 2048u);
  EXPECT_EQ(p.block_footprint(), 16 * 8 * kKiB);
  EXPECT_EQ(p.pool().total_blocks(), 8u);
  EXPECT_EQ(p.blocks_for(0), 0u);
  EXPECT_EQ(p.blocks_for(16), 1u);
  EXPECT_EQ(p.blocks_for(17), 2u);
}

TEST(PagedAllocatorTest, EnsureCapacityIsAllOrNothing) {
  const auto g = tiny_geometry(2, 4096, 4);
  PagedAllocator p(g, 1 * kMiB, 16, 4);  // 8 blocks
  const int a = *p.add_request();
  const int b = *p.add_request();
  EXPECT_TRUE(p.ensure_capacity(a, 80));  // 5 blocks
  EXPECT_FALSE(p.ensure_capacity(b, 64));  // needs 4, 3 free
  EXPECT_TRUE(p.blocks(b).empty());
  EXPECT_TRUE(p.ensure_capacity(b, 48));
  EXPECT_EQ(p.pool().free_blocks(), 0u);
  EXPECT_EQ(p.committed_bytes(), 8 * p.block_footprint());
  p.free_request(a);
  EXPECT_EQ(p.pool().free_blocks(), 5u);
  EXPECT_FALSE(p.is_active(a));
  EXPECT_THROW(p.blocks(a), Error);
  EXPECT_EQ(p.total_blocks_allocated(), 8u);
}

TEST(PagedAllocatorTest, RequestSlotsAreBounded) {
  PagedAllocator p(tiny_geometry(), 1 * kMiB, 16, 2);
  EXPECT_TRUE(p.add_request());
  EXPECT_TRUE(p.add_request());
  EXPECT_FALSE(p.add_request());
}

TEST(PagedAllocatorTest, BlockTableIsPaddedToLongestRow) {
  const auto g = tiny_geometry(2, 4096, 4);
  PagedAllocator p(g, 4 * kMiB, 16, 4);
  const int a = *p.add_request();
  const int b = *p.add_request();
  ASSERT_TRUE(p.ensure_capacity(a, 40));  // 3 blocks
  ASSERT_TRUE(p.ensure_capacity(b, 10));  // 1 block
  const std::vector<int> batch = {a, b};
  const BlockTable t = p.build_block_table(batch);
  EXPECT_EQ(t.rows, 2u);
  EXPECT_EQ(t.cols, 3u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t.at(0, c), p.blocks(a)[c]);
  EXPECT_EQ(t.at(1, 0), p.blocks(b)[0]);
  EXPECT_EQ(t.at(1, 1), 0u);
  EXPECT_EQ(t.at(1, 2), 0u);
}

TEST(PagedAllocatorTest, BlockTableCost) {
  const std::vector<Tokens> lens = {1024, 16, 0, 100};
  // Widest row: 64 blocks; three live rows.
  EXPECT_EQ(block_table_prep_cost(lens, 16, 2.0), 2 * 64 * 3);
  EXPECT_EQ(block_table_prep_cost(std::vector<Tokens>{}, 16, 2.0), 0);
  EXPECT_EQ(block_table_prep_cost(std::vector<Tokens>{0, 0}, 16, 2.0), 0);
}

}  // namespace
}  // namespace vattn
