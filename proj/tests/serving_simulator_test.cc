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

#include "vattn/serving_simulator.h"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "test_util.h"

namespace vattn {
namespace {

using testing::tiny_geometry;

constexpr Nanos kMs = kNanosPerMilli;

SimConfig yi34b_config(AllocMode mode) {
  SimConfig c;
  c.geometry = *find_preset("yi-34b");
  c.allocator = AllocatorKind::kVAttention;
  c.mode = mode;
  c.page_group = PageGroupSize(PageGroupSize::k2M);
  c.pool_capacity = 80 * kGiB;
  return c;
}

SimConfig tiny_config(Bytes pool_groups, AllocatorKind kind = AllocatorKind::kVAttention) {
  SimConfig c;
  c.geometry = tiny_geometry(2, 4096, 8);
  c.allocator = kind;
  c.page_group = PageGroupSize(PageGroupSize::k64K);
  c.pool_capacity = pool_groups * PageGroupSize::k64K;
  return c;
}

SimTrace random_trace(std::uint64_t seed, std::size_t count, Tokens max_prompt,
                      Tokens max_decode, double qps) {
  TraceGenOptions o;
  o.qps = qps;
  o.count = count;
  o.prompt = LengthDistribution::uniform(1, max_prompt);
  o.decode = LengthDistribution::uniform(1, max_decode);
  o.seed = seed;
  return generate_trace(o);
}

TEST(IterationModelTest, MonotoneInTokens) {
  IterationModel m;
  EXPECT_EQ(m.compute_ns(0, 0), 15 * kMs);
  EXPECT_EQ(m.compute_ns(16000, 0), 79 * kMs);
  Nanos last = 0;
  for (Tokens t = 0; t < 5000; t += 37) {
    EXPECT_GE(m.compute_ns(t, t / 3), last);
    last = m.compute_ns(t, t / 3);
  }
  m.decode_ms_per_token = -1;
  EXPECT_THROW(m.validate(), Error);
}

TEST(IterationModelTest, BlockTableCalibration) {
  const IterationModel m;
  const double c_bt = calibrated_block_table_ns_per_entry(m);
  const std::vector<Tokens> lens(256, 1024);
  const Nanos cost = block_table_prep_cost(lens, 16, c_bt);
  EXPECT_NEAR(static_cast<double>(cost), 0.1 * static_cast<double>(m.compute_ns(0, 256)), 1.0);
}

TEST(SimulatorTest, NamesRoundTrip) {
  for (auto k : {AllocatorKind::kVAttention, AllocatorKind::kPaged, AllocatorKind::kStatic}) {
    EXPECT_EQ(parse_allocator(allocator_name(k)), k);
  }
  EXPECT_EQ(parse_mode("SYNC"), AllocMode::kSync);
  EXPECT_EQ(parse_mode(mode_name(AllocMode::kOverlapped)), AllocMode::kOverlapped);
  EXPECT_THROW(parse_allocator("buddy"), Error);
  EXPECT_THROW(parse_mode("async"), Error);
}

TEST(SimulatorTest, EmptyTraceGivesEmptyMetrics) {
  const auto m = run_simulation(SimTrace{}, tiny_config(64));
  EXPECT_TRUE(m.iterations.empty());
  EXPECT_EQ(m.max_batch, 0u);
  EXPECT_EQ(m.generated_tokens, 0u);
  EXPECT_FALSE(m.aborted);
  EXPECT_TRUE(measure_alloc_rate(m, 100).empty());
}

TEST(SimulatorTest, RejectsTraceBeyondContext) {
  SimTrace t;
  t.records = {{0, 4000, 200}};
  EXPECT_THROW(run_simulation(t, tiny_config(64)), Error);
}

TEST(SimulatorTest, SingleRequestTimeline) {
  SimTrace t;
  t.records = {{5.0, 100, 3}};
  const auto m = run_simulation(t, tiny_config(256));
  ASSERT_EQ(m.iterations.size(), 3u);
  EXPECT_EQ(m.iterations[0].start_ns, 5 * kMs);
  EXPECT_EQ(m.iterations[0].prefill_tokens, 100u);
  EXPECT_EQ(m.iterations[1].decode_tokens, 1u);
  EXPECT_EQ(m.iterations[2].completed, 1u);
  EXPECT_EQ(m.generated_tokens, 3u);
  EXPECT_EQ(m.completed_requests, 1u);
  EXPECT_EQ(m.max_batch, 1u);
  // used = tokens held * 8KB; 100, then 101, then 102 tokens.
  EXPECT_EQ(m.iterations[2].used_bytes, 102 * 8 * kKiB);
}

TEST(SimulatorTest, PrefillThenBoundarySpikesInSyncMode) {
  SimTrace t;
  t.records = {{0, 16000, 1500}};
  const auto m = run_simulation(t, yi34b_config(AllocMode::kSync));
  ASSERT_FALSE(m.aborted) << m.diagnostic;
  const Nanos row = 120 * 40 * kNanosPerMicro;
  // 16000 tokens need 16 groups of 1024.
  EXPECT_EQ(m.iterations[0].sync_alloc_ns, 16 * row);
  std::vector<std::size_t> spikes;
  for (const auto& it : m.iterations) {
    if (it.index == 0) continue;
    if (it.stall_ns != 0) {
      EXPECT_EQ(it.stall_ns, row) << "iteration " << it.index;
      spikes.push_back(it.index);
    }
  }
  // Context 16385 and 17409 open the 17th and 18th groups.
  EXPECT_EQ(spikes, (std::vector<std::size_t>{385, 1409}));
}

TEST(SimulatorTest, OverlapHidesDecodeSpikes) {
  SimTrace t;
  t.records = {{0, 16000, 1500}};
  const auto m = run_simulation(t, yi34b_config(AllocMode::kOverlapped));
  ASSERT_FALSE(m.aborted);
  EXPECT_EQ(m.iterations[0].sync_alloc_ns, 16 * 120 * 40 * kNanosPerMicro);
  for (const auto& it : m.iterations) {
    if (it.index > 0) {
      EXPECT_EQ(it.stall_ns, 0) << it.index;
    }
  }
  EXPECT_GT(m.total_background_ns, 0);
}

TEST(SimulatorTest, PreemptionRestartsAndConservesTokens) {
  // 16 handles = 4 rows of 32 tokens; three requests outgrow it.
  SimTrace t;
  t.records = {{0, 32, 40}, {0, 32, 40}, {0, 32, 40}};
  auto c = tiny_config(16);
  c.manager.eager_allocation = false;
  const auto m = run_simulation(t, c);
  ASSERT_FALSE(m.aborted) << m.diagnostic;
  EXPECT_GT(m.preemptions, 0u);
  EXPECT_EQ(m.completed_requests, 3u);
  EXPECT_EQ(m.generated_tokens, 120u);
  for (const auto& it : m.iterations) EXPECT_LE(it.committed_bytes, c.pool_capacity);
}

TEST(SimulatorTest, LoneRequestTooLargeAborts) {
  SimTrace t;
  t.records = {{0, 32, 100}};  // grows to 4 rows, pool holds 2
  const auto m = run_simulation(t, tiny_config(8));
  EXPECT_TRUE(m.aborted);
  EXPECT_NE(m.diagnostic.find("request 1"), std::string::npos);
}

TEST(SimulatorTest, PreemptionCapAborts) {
  SimTrace t;
  t.records = {{0, 32, 40}, {0, 32, 40}, {0, 32, 40}};
  auto c = tiny_config(16);
  c.max_preemptions = 0;
  const auto m = run_simulation(t, c);
  EXPECT_TRUE(m.aborted);
  EXPECT_NE(m.diagnostic.find("preemption cap"), std::string::npos);
}

TEST(SimulatorTest, Deterministic) {
  const auto t = random_trace(4, 80, 600, 300, 20);
  for (auto kind : {AllocatorKind::kVAttention, AllocatorKind::kPaged, AllocatorKind::kStatic}) {
    const auto c = tiny_config(2048, kind);
    const auto first = run_simulation(t, c);
    EXPECT_FALSE(first.aborted) << first.diagnostic;
    EXPECT_TRUE(first == run_simulation(t, c));
  }
}

TEST(SimulatorTest, CommitmentAndTokenInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = random_trace(seed, 40, 800, 200, 30);
    for (auto kind : {AllocatorKind::kVAttention, AllocatorKind::kPaged, AllocatorKind::kStatic}) {
      for (auto mode : {AllocMode::kSync, AllocMode::kOverlapped}) {
        auto c = tiny_config(2048, kind);
        c.mode = mode;
        const auto m = run_simulation(t, c);
        ASSERT_FALSE(m.aborted) << m.diagnostic;
        std::uint64_t decode_sum = 0;
        for (const auto& r : t.records) decode_sum += r.decode_tokens;
        EXPECT_EQ(m.generated_tokens, decode_sum);
        for (const auto& it : m.iterations) {
          EXPECT_LE(it.committed_bytes, c.pool_capacity);
          EXPECT_GE(it.committed_bytes, it.used_bytes);
          EXPECT_EQ(it.stall_ns, it.sync_alloc_ns + it.carried_ns);
          EXPECT_GE(it.stall_ns, 0);
        }
      }
    }
  }
}

TEST(SimulatorTest, ModesAgreeOnScheduleWhenOverlapFits) {
  SimTrace t;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 6; ++i) {
    t.records.push_back({0.0, 1 + rng() % 300, 1 + rng() % 200});
  }
  auto sync = tiny_config(512);
  sync.mode = AllocMode::kSync;
  auto over = sync;
  over.mode = AllocMode::kOverlapped;
  const auto a = run_simulation(t, sync);
  const auto b = run_simulation(t, over);
  ASSERT_EQ(a.iterations.size(), b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    EXPECT_EQ(a.iterations[i].batch_size, b.iterations[i].batch_size);
    EXPECT_EQ(a.iterations[i].completed, b.iterations[i].completed);
    EXPECT_EQ(b.iterations[i].carried_ns, 0);
  }
  EXPECT_LE(b.total_stall_ns, a.total_stall_ns);
}

TEST(SimulatorTest, PagedPaysBlockTableOverhead) {
  const auto t = random_trace(1, 30, 400, 100, 50);
  const auto m = run_simulation(t, tiny_config(400, AllocatorKind::kPaged));
  Nanos cpu = 0;
  for (const auto& it : m.iterations) {
    cpu += it.cpu_ns;
    EXPECT_EQ(it.sync_alloc_ns, 0);
  }
  EXPECT_GT(cpu, 0);
}

TEST(SimulatorTest, StaticWastesMoreThanDemandPaging) {
  SimTrace t;
  for (int i = 0; i < 4; ++i) t.records.push_back({0.0, 100, 20});
  auto vc = tiny_config(2048);
  vc.manager.deferred_reclaim = false;
  vc.manager.eager_allocation = false;
  const auto v = run_simulation(t, vc);
  const auto s = run_simulation(t, tiny_config(2048, AllocatorKind::kStatic));
  EXPECT_GT(s.mean_waste_bytes, 10 * v.mean_waste_bytes);
  // Static commits 4096 tokens per request regardless of use.
  EXPECT_EQ(s.iterations.front().committed_bytes, 4 * 4096 * 8 * kKiB);
}

TEST(SimulatorTest, AllocRateWindows) {
  SimTrace t;
  t.records = {{0, 500, 10}, {10000, 500, 10}};  // a long idle gap
  const auto m = run_simulation(t, tiny_config(512));
  const auto rates = measure_alloc_rate(m, 1000);
  ASSERT_GE(rates.size(), 10u);
  EXPECT_GT(rates.front(), 0.0);
  for (std::size_t w = 1; w < 9; ++w) EXPECT_EQ(rates[w], 0.0) << w;
  Bytes total = 0;
  for (const auto& it : m.iterations) total += it.newly_committed_bytes;
  const double summed = std::accumulate(rates.begin(), rates.end(), 0.0) * 1.0;
  EXPECT_DOUBLE_EQ(summed, static_cast<double>(total));
  EXPECT_THROW(measure_alloc_rate(m, 0), Error);
  EXPECT_EQ(peak_alloc_rate(m, 1000), rates.front());
}

TEST(SimulatorTest, AllocRateMatchesTokenRateWithoutReuse) {
  // One long request on 64KB groups: every mapped byte eventually holds a
  // token, so commitment tracks tokens up to one partial group per buffer.
  SimTrace t;
  t.records = {{0, 32, 3200}};
  auto c = tiny_config(1024);
  c.manager.eager_allocation = false;
  const auto m = run_simulation(t, c);
  Bytes committed = 0;
  for (const auto& it : m.iterations) committed += it.newly_committed_bytes;
  const Bytes used = m.iterations.back().used_bytes;
  EXPECT_GE(committed, used);
  EXPECT_LT(committed - used, 4 * PageGroupSize::k64K);
}

TEST(SimulatorTest, MaxBatchSweepIsMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = random_trace(seed, 60, 900, 300, 100);
    auto c = tiny_config(0);
    c.pool_capacity = 16 * kMiB;
    const auto sizes = PageGroupSize::all();
    const auto sweep = max_batch_sweep(t, c, sizes);
    ASSERT_EQ(sweep.size(), 4u);
    for (std::size_t i = 1; i < sweep.size(); ++i) {
      EXPECT_GE(sweep[i - 1].second, sweep[i].second) << "seed " << seed;
    }
  }
  SimTrace one;
  one.records = {{0, 10, 10}};
  for (const auto& [t, batch] : max_batch_sweep(one, tiny_config(512), PageGroupSize::all())) {
    EXPECT_EQ(batch, 1u) << t.label();
  }
}

TEST(SimulatorTest, ObserverSeesBackedRequests) {
  const auto t = random_trace(2, 30, 500, 100, 40);
  std::uint64_t calls = 0;
  const auto m = run_simulation(t, tiny_config(400), [&](const QuiescentView& v) {
    ++calls;
    ASSERT_NE(v.manager, nullptr);
    for (const auto& r : v.running) {
      EXPECT_GE(v.manager->slot(r.slot).mapped_groups, v.manager->groups_for(r.seq_len));
    }
  });
  EXPECT_EQ(calls, m.iterations.size());
}

}  // namespace
}  // namespace vattn
