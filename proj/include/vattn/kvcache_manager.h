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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vattn/common.h"
#include "vattn/mock_vmm.h"
#include "vattn/model_geometry.h"

namespace vattn {

enum class SlotPhase { kInactive, kPrefill, kDecode };

// Per-reqId state. A request's sub-tensor starts at req_id * stride in every
// buffer, so the slot index is also its address.
struct RequestSlot {
  int req_id = 0;
  bool active = false;
  Tokens context_len = 0;
  // Page-groups mapped in each buffer; identical across buffers.
  std::uint64_t mapped_groups = 0;
  SlotPhase phase = SlotPhase::kInactive;
  // Monotone stamp set by free_reqid; orders reclamation victims.
  std::uint64_t freed_order = 0;
  // Page-groups this request mapped itself (all buffers) since alloc_reqid.
  std::uint64_t lifetime_maps = 0;
};

enum class ReclaimTrigger {
  // Reclaim while unmapped pool memory is below threshold * capacity.
  kFreeBelowThreshold,
  // Reclaim while groups cached in inactive slots exceed threshold * capacity.
  kCachedAboveThreshold,
};

struct ManagerConfig {
  PageGroupSize page_group{PageGroupSize::k2M};
  Bytes pool_capacity = 80 * kGiB;

  double reclaim_threshold = 0.10;
  ReclaimTrigger reclaim_trigger = ReclaimTrigger::kFreeBelowThreshold;

  // Map the next decode iteration's page-groups in the background.
  bool overlap = true;
  // Keep a freed request's page-groups mapped for the next owner of its slot.
  bool deferred_reclaim = true;
  // Keep one inactive slot pre-mapped for the next arrival.
  bool eager_allocation = true;
  // Page-groups per buffer for the eager slot; derived from
  // median_prompt_tokens when unset.
  std::optional<std::uint64_t> eager_groups;
  Tokens median_prompt_tokens = 1024;

  // Two [B, L, N, H, D] buffers instead of 2N per-layer buffers.
  bool tensor_slicing = false;

  // Fraction of the pool's handles created during init.
  double precreate_fraction = 1.0;

  LatencyModel latency = LatencyModel::defaults();
};

struct StepResult {
  bool ok = true;
  // Latency charged on the critical path by this call.
  Nanos critical_ns = 0;
  std::uint64_t map_calls = 0;
  std::uint64_t create_calls = 0;
  std::uint64_t released_groups = 0;

  // 0 on success, -1 on failure.
  int code() const { return ok ? 0 : -1; }
};

struct PlannedMapping {
  int req_id = 0;
  BufferId buffer = 0;
  Bytes offset = 0;

  bool operator==(const PlannedMapping&) const = default;
};

// Mappings the next iteration needs, grouped row by row: buffer_count()
// consecutive entries per (slot, group index).
struct AllocationPlan {
  std::vector<PlannedMapping> mappings;

  bool empty() const { return mappings.empty(); }
  std::size_t size() const { return mappings.size(); }
};

struct ManagerCounters {
  Nanos init_ns = 0;
  Nanos critical_ns = 0;
  Nanos background_ns = 0;
  std::uint64_t critical_maps = 0;
  std::uint64_t background_maps = 0;
  std::uint64_t released_groups = 0;
  std::uint64_t failed_steps = 0;
};

// Demand-paged KV cache: 2N contiguous virtual buffers reserved up front,
// physical page-groups mapped per request as its context grows.
//
// Not thread-safe. One control context drives alloc/free/step and a
// background context runs the overlap, eager and reclaim work between
// steps; the two must hand the manager off, never share it.
class KvCacheManager {
 public:
  // Reserves the buffers and pre-creates handles. Throws kConfig when the
  // geometry or pool cannot hold one page-group per buffer.
  KvCacheManager(const ModelGeometry& geometry, const ManagerConfig& config);

  // Returns the eager slot if one is prepared, otherwise the inactive slot
  // holding the most deferred page-groups (lowest index on ties).
  // Throws kBatchFull when every slot is active.
  int alloc_reqid();

  // Marks the slot inactive. With deferred reclamation its page-groups stay
  // mapped; otherwise they are released on the spot.
  void free_reqid(int req_id);

  // Backs every active slot up to seq_lens[i] tokens. Inactive slots must
  // pass 0. On failure nothing new is mapped and the caller is expected to
  // preempt something and retry.
  StepResult step(std::span<const Tokens> seq_lens);

  // Mappings decode slots need to reach next_seq_lens.
  AllocationPlan plan_overlap(std::span<const Tokens> next_seq_lens) const;
  // Best-effort: stops at the first row the pool cannot back. Returns the
  // background latency charged.
  Nanos execute_plan(const AllocationPlan& plan);

  // Releases deferred page-groups (oldest-freed slot first, eager slot last)
  // when the reclaim trigger fires. Returns page-groups released.
  std::uint64_t reclaim();

  // Pre-maps k_groups per buffer into the slot alloc_reqid would pick next.
  // Skips silently when no slot is inactive or the pool would dip below the
  // reclaim threshold. Returns the background latency charged.
  Nanos eager_prepare(std::uint64_t k_groups);

  // One background pass between iterations: overlap plan (if enabled),
  // eager preparation (if enabled) and reclamation.
  Nanos run_background(std::span<const Tokens> next_seq_lens);

  // Page-groups per buffer that `tokens` tokens occupy.
  std::uint64_t groups_for(Tokens tokens) const;

  const ModelGeometry& geometry() const { return geometry_; }
  const ManagerConfig& config() const { return config_; }
  std::size_t buffer_count() const { return buffers_.size(); }
  const std::vector<BufferId>& buffers() const { return buffers_; }
  Bytes page_group_bytes() const { return config_.page_group.bytes(); }
  Bytes token_bytes_per_buffer() const { return token_bytes_; }
  Bytes stride() const { return stride_; }
  Tokens block_tokens() const { return block_tokens_; }
  std::uint64_t eager_groups() const { return eager_groups_; }

  std::size_t slot_count() const { return slots_.size(); }
  const RequestSlot& slot(int req_id) const;
  const std::vector<RequestSlot>& slots() const { return slots_; }
  std::optional<int> eager_slot() const { return eager_slot_; }
  std::size_t active_count() const;

  const MockVmm& vmm() const { return *vmm_; }
  std::uint64_t total_handles() const { return vmm_->max_handles(); }
  std::uint64_t mapped_handles() const { return vmm_->mapped_count(); }
  std::uint64_t available_handles() const {
    return total_handles() - mapped_handles();
  }
  std::uint64_t stash_size() const { return stash_.size(); }
  // Page-groups held by inactive slots (deferred + eager).
  std::uint64_t cached_handles() const;
  Bytes committed_bytes() const { return vmm_->mapped_bytes(); }
  // Cumulative bytes ever mapped.
  Bytes total_mapped_bytes() const {
    return (counters_.critical_maps + counters_.background_maps) *
           page_group_bytes();
  }
  const ManagerCounters& counters() const { return counters_; }

  // Cross-checks slots against the VMM's mapping tables. Returns a
  // description of the first violation, or nullopt.
  std::optional<std::string> check_consistency() const;

 private:
  Bytes row_offset(int req_id, std::uint64_t group) const {
    return static_cast<Bytes>(req_id) * stride_ + group * page_group_bytes();
  }
  void check_slot(int req_id) const;

  // Maps group `mapped_groups` of the slot in every buffer. The caller
  // guarantees buffer_count() available handles.
  void map_row(RequestSlot& slot, CallSite site, std::uint64_t& creates);
  void release_row(RequestSlot& slot, CallSite site);

  // Inactive slots holding page-groups, in victim order.
  std::vector<int> reclaim_victims() const;
  // Releases victim rows until `handles` are available. Returns groups freed.
  std::uint64_t reclaim_until_available(std::uint64_t handles, CallSite site);
  int pick_inactive_slot() const;

  Nanos site_total(CallSite site) const { return vmm_->ledger().total(site); }

  ModelGeometry geometry_;
  ManagerConfig config_;
  std::unique_ptr<MockVmm> vmm_;
  std::vector<BufferId> buffers_;
  Bytes token_bytes_ = 0;
  Bytes stride_ = 0;
  Tokens block_tokens_ = 0;
  std::uint64_t eager_groups_ = 0;

  std::vector<RequestSlot> slots_;
  std::vector<HandleId> stash_;
  std::optional<int> eager_slot_;
  bool eager_pending_ = true;
  std::uint64_t free_stamp_ = 0;
  ManagerCounters counters_;
};

}  // namespace vattn
