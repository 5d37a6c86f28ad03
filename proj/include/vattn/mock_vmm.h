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

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "vattn/common.h"
#include "vattn/model_geometry.h"

namespace vattn {

// Driver entry points whose costs are modelled. The cu* calls only support
// 2MB page-groups; the v* calls cover 64KB to 256KB. vMemMap folds in
// cuMemSetAccess and vMemRelease folds in cuMemUnmap.
enum class VmmApi {
  kCuMemAddressReserve,
  kCuMemCreate,
  kCuMemMap,
  kCuMemSetAccess,
  kCuMemUnmap,
  kCuMemRelease,
  kCuMemAddressFree,
  kVMemReserve,
  kVMemCreate,
  kVMemMap,
  kVMemRelease,
  kVMemFree,
};

inline constexpr std::size_t kVmmApiCount = 12;

std::string_view api_name(VmmApi api);
// Throws kConfig for unknown names.
VmmApi parse_api(std::string_view name);

// Per-call cost in nanoseconds keyed by (api, page-group bytes).
class LatencyModel {
 public:
  // Measured driver latencies (microseconds) for 64KB/128KB/256KB/2MB.
  static LatencyModel defaults();
  void set(VmmApi api, Bytes page_group_bytes, Nanos cost);
  std::optional<Nanos> find(VmmApi api, Bytes page_group_bytes) const;
  // Throws kConfig when the pair is not configured.
  Nanos cost(VmmApi api, Bytes page_group_bytes) const;

  // Composite costs of the operations the mock performs. 2MB page-groups use
  // the cu* sequence, smaller ones the v* call.
  Nanos reserve_cost(Bytes page_group_bytes) const;
  Nanos create_cost(Bytes page_group_bytes) const;
  Nanos map_cost(Bytes page_group_bytes) const;
  Nanos unmap_release_cost(Bytes page_group_bytes) const;
  Nanos address_free_cost(Bytes page_group_bytes) const;

  const std::map<std::pair<VmmApi, Bytes>, Nanos>& entries() const {
    return costs_;
  }

 private:
  std::map<std::pair<VmmApi, Bytes>, Nanos> costs_;
};

// Who is paying for a charge. The simulator decides which of these land on
// the critical path.
enum class CallSite { kInit, kForeground, kBackground };

struct ApiTally {
  std::uint64_t calls = 0;
  Nanos total = 0;
};

class LatencyLedger {
 public:
  void add(CallSite site, VmmApi api, Nanos cost);

  const ApiTally& tally(CallSite site, VmmApi api) const;
  Nanos total(CallSite site) const;
  std::uint64_t calls(CallSite site) const;

 private:
  std::array<std::array<ApiTally, kVmmApiCount>, 3> tallies_{};
};

using BufferId = std::uint32_t;
using HandleId = std::uint32_t;

enum class HandleState { kFree, kCreated, kMapped };

struct HandleInfo {
  HandleState state = HandleState::kFree;
  BufferId buffer = 0;
  Bytes offset = 0;
};

// Detects overlapping mutation of one ownership domain. Hand-off between
// threads is allowed; two contexts inside the domain at once is not.
class ExclusiveAccess {
 public:
  class Scope {
   public:
    explicit Scope(ExclusiveAccess& owner);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    ExclusiveAccess& owner_;
  };

  bool busy() const { return busy_.load(std::memory_order_acquire); }

 private:
  std::atomic<bool> busy_{false};
};

// Software stand-in for the GPU virtual-memory layer: unbounded virtual
// reservations, a bounded pool of physical page-group handles, and per-call
// latency charging. No device memory is touched.
//
// Every failing call throws before mutating anything.
class MockVmm {
 public:
  MockVmm(Bytes capacity, PageGroupSize page_group,
          LatencyModel latency = LatencyModel::defaults());

  MockVmm(const MockVmm&) = delete;
  MockVmm& operator=(const MockVmm&) = delete;
  MockVmm(MockVmm&&) = delete;
  MockVmm& operator=(MockVmm&&) = delete;

  // Reserve `size` bytes of virtual space. Throws kAlignment unless size is a
  // multiple of the page-group size.
  BufferId reserve(Bytes size);
  // Throws kInvalidFree if the buffer still has mappings.
  void free_buffer(BufferId buffer);

  // nullopt when the pool has no room for another page-group.
  std::optional<HandleId> create_handle();
  // Destroys a created-but-unmapped handle.
  void release(HandleId handle);
  void map(BufferId buffer, Bytes offset, HandleId handle);
  // Unmaps the handle at `offset` and returns its capacity to the pool.
  // Throws kInvalidFree when nothing is mapped there.
  HandleId unmap_release(BufferId buffer, Bytes offset);

  // Returns the configured cost and records it against the current call site.
  Nanos charge(VmmApi api);
  Nanos charge(VmmApi api, Bytes page_group_bytes);

  void set_call_site(CallSite site) { site_ = site; }
  CallSite call_site() const { return site_; }

  Bytes capacity() const { return capacity_; }
  Bytes page_group_bytes() const { return page_group_.bytes(); }
  PageGroupSize page_group() const { return page_group_; }
  std::uint64_t max_handles() const { return capacity_ / page_group_.bytes(); }
  std::uint64_t created_count() const { return created_; }
  std::uint64_t mapped_count() const { return mapped_; }
  Bytes free_bytes() const { return capacity_ - created_ * page_group_bytes(); }
  Bytes created_unmapped_bytes() const {
    return (created_ - mapped_) * page_group_bytes();
  }
  Bytes mapped_bytes() const { return mapped_ * page_group_bytes(); }

  std::size_t buffer_count() const { return buffers_.size(); }
  bool is_live(BufferId buffer) const {
    return buffer < buffers_.size() && buffers_[buffer].live;
  }
  Bytes buffer_size(BufferId buffer) const;
  const std::map<Bytes, HandleId>& mappings(BufferId buffer) const;
  std::optional<HandleId> handle_at(BufferId buffer, Bytes offset) const;
  const HandleInfo& handle(HandleId handle) const;
  std::size_t handle_slots() const { return handles_.size(); }

  const LatencyModel& latency() const { return latency_; }
  const LatencyLedger& ledger() const { return ledger_; }

  const ExclusiveAccess& access() const { return access_; }

 private:
  struct VirtualBuffer {
    Bytes size = 0;
    bool live = false;
    std::map<Bytes, HandleId> mappings;
  };

  VirtualBuffer& live_buffer(BufferId buffer);
  const VirtualBuffer& live_buffer(BufferId buffer) const;
  HandleInfo& live_handle(HandleId handle);

  Bytes capacity_;
  PageGroupSize page_group_;
  LatencyModel latency_;
  LatencyLedger ledger_;
  CallSite site_ = CallSite::kInit;

  std::vector<VirtualBuffer> buffers_;
  std::vector<HandleInfo> handles_;
  std::vector<HandleId> free_handle_ids_;
  std::uint64_t created_ = 0;
  std::uint64_t mapped_ = 0;

  ExclusiveAccess access_;
};

}  // namespace vattn
