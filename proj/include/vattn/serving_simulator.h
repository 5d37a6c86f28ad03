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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vattn/baseline_allocators.h"
#include "vattn/common.h"
#include "vattn/kvcache_manager.h"
#include "vattn/model_geometry.h"
#include "vattn/trace.h"

namespace vattn {

// Per-iteration compute time: base + prefill and decode tokens at separate
// rates. Calibration constants, not measurements.
struct IterationModel {
  double base_ms = 15.0;
  double prefill_ms_per_token = 0.004;
  double decode_ms_per_token = 0.06;

  // Throws kConfig for negative or non-finite constants.
  void validate() const;
  double compute_ms(Tokens prefill_tokens, Tokens decode_tokens) const;
  Nanos compute_ns(Tokens prefill_tokens, Tokens decode_tokens) const;
};

// Block-table cost per entry chosen so that preparing the table for a
// batch-256, 1K-context, block-16 decode iteration costs 10% of that
// iteration's compute.
double calibrated_block_table_ns_per_entry(const IterationModel& model);

enum class AllocatorKind { kVAttention, kPaged, kStatic };
enum class AllocMode { kSync, kOverlapped };

std::string_view allocator_name(AllocatorKind kind);
AllocatorKind parse_allocator(std::string_view name);  // throws kConfig
std::string_view mode_name(AllocMode mode);
AllocMode parse_mode(std::string_view name);  // throws kConfig

struct SimConfig {
  ModelGeometry geometry;
  AllocatorKind allocator = AllocatorKind::kVAttention;
  AllocMode mode = AllocMode::kOverlapped;
  PageGroupSize page_group{PageGroupSize::k2M};
  // Physical KV memory per worker, shared by every allocator.
  Bytes pool_capacity = 80 * kGiB;

  // vAttention knobs. page_group, pool_capacity and overlap are overridden
  // from the fields above.
  ManagerConfig manager;
  IterationModel iteration;

  // Tokens per paged block; 0 picks the block size matching page_group.
  Tokens paged_block_tokens = 16;
  // Defaults to calibrated_block_table_ns_per_entry(iteration).
  std::optional<double> block_table_ns_per_entry;

  std::uint64_t max_preemptions = 100000;
  // 0 = unlimited.
  std::uint64_t max_iterations = 0;
};

struct IterationRecord {
  std::uint64_t index = 0;
  Nanos start_ns = 0;
  std::size_t batch_size = 0;
  std::size_t prefill_requests = 0;
  Tokens prefill_tokens = 0;
  Tokens decode_tokens = 0;
  Nanos compute_ns = 0;
  // Mapping latency charged on the critical path by this step.
  Nanos sync_alloc_ns = 0;
  // Background work charged during this iteration's compute.
  Nanos background_ns = 0;
  // Background work from the previous iteration that did not fit its budget.
  Nanos carried_ns = 0;
  // sync_alloc_ns + carried_ns.
  Nanos stall_ns = 0;
  // Host-side overhead (block-table preparation).
  Nanos cpu_ns = 0;
  Bytes committed_bytes = 0;
  Bytes used_bytes = 0;
  Bytes newly_committed_bytes = 0;
  std::uint64_t critical_maps = 0;
  std::uint64_t background_maps = 0;
  std::uint64_t preemptions = 0;
  std::size_t completed = 0;

  Nanos latency_ns() const { return compute_ns + stall_ns + cpu_ns; }
  bool operator==(const IterationRecord&) const = default;
};

struct SimMetrics {
  std::vector<IterationRecord> iterations;

  std::size_t max_batch = 0;
  double p50_iteration_ms = 0.0;
  double p99_iteration_ms = 0.0;
  double tokens_per_s = 0.0;
  std::uint64_t generated_tokens = 0;
  std::uint64_t completed_requests = 0;
  std::uint64_t preemptions = 0;
  Nanos makespan_ns = 0;
  Nanos init_ns = 0;
  Nanos total_stall_ns = 0;
  Nanos total_sync_alloc_ns = 0;
  Nanos total_background_ns = 0;
  Bytes peak_committed_bytes = 0;
  Bytes max_waste_bytes = 0;
  double mean_waste_bytes = 0.0;

  bool aborted = false;
  std::string diagnostic;

  bool operator==(const SimMetrics&) const = default;
};

struct RunningRequest {
  std::size_t trace_index = 0;
  int slot = 0;
  // Tokens whose KV the next step must hold.
  Tokens seq_len = 0;
  Tokens generated = 0;
  bool prefill = true;
};

// State handed to an observer right after a successful step, before
// compute: every running request is backed and no background work is
// in flight.
struct QuiescentView {
  std::uint64_t iteration = 0;
  std::span<const RunningRequest> running;
  const KvCacheManager* manager = nullptr;
  const PagedAllocator* paged = nullptr;
  const StaticAllocator* static_alloc = nullptr;
};

using QuiescentObserver = std::function<void(const QuiescentView&)>;

// Replays the trace through admit -> step -> compute -> retire with
// continuous batching. Deterministic. A step that cannot be backed preempts
// the most recently admitted request, which restarts from scratch later.
// Throws kConfig / kParse for invalid inputs; aborts (metrics.aborted) when
// the preemption cap is hit or a lone request cannot be backed.
SimMetrics run_simulation(const SimTrace& trace, const SimConfig& config,
                          const QuiescentObserver& observer = {});

// Bytes newly committed per second in consecutive windows of window_ms,
// covering the run's makespan. Empty for a run without iterations.
std::vector<double> measure_alloc_rate(const SimMetrics& metrics,
                                       double window_ms);
double peak_alloc_rate(const SimMetrics& metrics, double window_ms);

// Runs the trace once per page-group size with everything else fixed.
std::vector<std::pair<PageGroupSize, std::size_t>> max_batch_sweep(
    const SimTrace& trace, const SimConfig& config,
    std::span<const PageGroupSize> sizes);

}  // namespace vattn
