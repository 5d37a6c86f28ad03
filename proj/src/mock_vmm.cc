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

#include "vattn/mock_vmm.h"

#include <cmath>
#include <string>

namespace vattn {

namespace {

constexpr std::array<std::pair<VmmApi, std::string_view>, kVmmApiCount>
    kApiNames = {{
        {VmmApi::kCuMemAddressReserve, "cuMemAddressReserve"},
        {VmmApi::kCuMemCreate, "cuMemCreate"},
        {VmmApi::kCuMemMap, "cuMemMap"},
        {VmmApi::kCuMemSetAccess, "cuMemSetAccess"},
        {VmmApi::kCuMemUnmap, "cuMemUnmap"},
        {VmmApi::kCuMemRelease, "cuMemRelease"},
        {VmmApi::kCuMemAddressFree, "cuMemAddressFree"},
        {VmmApi::kVMemReserve, "vMemReserve"},
        {VmmApi::kVMemCreate, "vMemCreate"},
        {VmmApi::kVMemMap, "vMemMap"},
        {VmmApi::kVMemRelease, "vMemRelease"},
        {VmmApi::kVMemFree, "vMemFree"},
    }};

Nanos micros(double us) { return static_cast<Nanos>(std::llround(us * 1000.0)); }

bool uses_cu_api(Bytes page_group_bytes) {
  return page_group_bytes == PageGroupSize::k2M;
}

std::string describe(BufferId buffer, Bytes offset) {
  return "buffer " + std::to_string(buffer) + " offset " +
         std::to_string(offset);
}

}  // namespace

std::string_view api_name(VmmApi api) {
  return kApiNames[static_cast<std::size_t>(api)].second;
}

VmmApi parse_api(std::string_view name) {
  for (const auto& [api, text] : kApiNames) {
    if (text == name) return api;
  }
  throw Error(ErrorCode::kConfig, "unknown VMM API '" + std::string(name) + "'");
}

LatencyModel LatencyModel::defaults() {
  LatencyModel m;
  constexpr Bytes k64 = PageGroupSize::k64K;
  constexpr Bytes k128 = PageGroupSize::k128K;
  constexpr Bytes k256 = PageGroupSize::k256K;
  constexpr Bytes k2m = PageGroupSize::k2M;

  m.set(VmmApi::kCuMemAddressReserve, k2m, micros(2));
  m.set(VmmApi::kCuMemCreate, k2m, micros(29));
  m.set(VmmApi::kCuMemMap, k2m, micros(2));
  m.set(VmmApi::kCuMemSetAccess, k2m, micros(38));
  m.set(VmmApi::kCuMemUnmap, k2m, micros(34));
  m.set(VmmApi::kCuMemRelease, k2m, micros(23));
  m.set(VmmApi::kCuMemAddressFree, k2m, micros(1));

  const std::array<Bytes, 3> small = {k64, k128, k256};
  const std::array<double, 3> reserve = {18, 17, 16};
  const std::array<double, 3> create = {1.7, 2, 2.1};
  const std::array<double, 3> map = {8, 8.5, 9};
  const std::array<double, 3> release = {2, 3, 4};
  const std::array<double, 3> free = {35, 35, 35};
  for (std::size_t i = 0; i < small.size(); ++i) {
    m.set(VmmApi::kVMemReserve, small[i], micros(reserve[i]));
    m.set(VmmApi::kVMemCreate, small[i], micros(create[i]));
    m.set(VmmApi::kVMemMap, small[i], micros(map[i]));
    m.set(VmmApi::kVMemRelease, small[i], micros(release[i]));
    m.set(VmmApi::kVMemFree, small[i], micros(free[i]));
  }
  return m;
}

void LatencyModel::set(VmmApi api, Bytes page_group_bytes, Nanos cost) {
  if (cost < 0) {
    throw Error(ErrorCode::kConfig, "latency for " + std::string(api_name(api)) +
                                        " must be >= 0");
  }
  costs_[{api, page_group_bytes}] = cost;
}

std::optional<Nanos> LatencyModel::find(VmmApi api,
                                        Bytes page_group_bytes) const {
  auto it = costs_.find({api, page_group_bytes});
  if (it == costs_.end()) return std::nullopt;
  return it->second;
}

Nanos LatencyModel::cost(VmmApi api, Bytes page_group_bytes) const {
  if (auto c = find(api, page_group_bytes)) return *c;
  throw Error(ErrorCode::kConfig, "no latency configured for " +
                                      std::string(api_name(api)) + " at " +
                                      std::to_string(page_group_bytes) + " B");
}

Nanos LatencyModel::reserve_cost(Bytes t) const {
  return uses_cu_api(t) ? cost(VmmApi::kCuMemAddressReserve, t)
                        : cost(VmmApi::kVMemReserve, t);
}

Nanos LatencyModel::create_cost(Bytes t) const {
  return uses_cu_api(t) ? cost(VmmApi::kCuMemCreate, t)
                        : cost(VmmApi::kVMemCreate, t);
}

Nanos LatencyModel::map_cost(Bytes t) const {
  return uses_cu_api(t)
             ? cost(VmmApi::kCuMemMap, t) + cost(VmmApi::kCuMemSetAccess, t)
             : cost(VmmApi::kVMemMap, t);
}

Nanos LatencyModel::unmap_release_cost(Bytes t) const {
  return uses_cu_api(t)
             ? cost(VmmApi::kCuMemUnmap, t) + cost(VmmApi::kCuMemRelease, t)
             : cost(VmmApi::kVMemRelease, t);
}

Nanos LatencyModel::address_free_cost(Bytes t) const {
  return uses_cu_api(t) ? cost(VmmApi::kCuMemAddressFree, t)
                        : cost(VmmApi::kVMemFree, t);
}

void LatencyLedger::add(CallSite site, VmmApi api, Nanos cost) {
  ApiTally& t = tallies_[static_cast<std::size_t>(site)]
                        [static_cast<std::size_t>(api)];
  ++t.calls;
  t.total += cost;
}

const ApiTally& LatencyLedger::tally(CallSite site, VmmApi api) const {
  return tallies_[static_cast<std::size_t>(site)][static_cast<std::size_t>(api)];
}

Nanos LatencyLedger::total(CallSite site) const {
  Nanos sum = 0;
  for (const auto& t : tallies_[static_cast<std::size_t>(site)]) sum += t.total;
  return sum;
}

std::uint64_t LatencyLedger::calls(CallSite site) const {
  std::uint64_t sum = 0;
  for (const auto& t : tallies_[static_cast<std::size_t>(site)]) sum += t.calls;
  return sum;
}

ExclusiveAccess::Scope::Scope(ExclusiveAccess& owner) : owner_(owner) {
  bool expected = false;
  if (!owner_.busy_.compare_exchange_strong(expected, true,
                                            std::memory_order_acq_rel)) {
    throw Error(ErrorCode::kConcurrentAccess,
                "memory domain entered by two contexts at once");
  }
}

ExclusiveAccess::Scope::~Scope() {
  owner_.busy_.store(false, std::memory_order_release);
}

MockVmm::MockVmm(Bytes capacity, PageGroupSize page_group, LatencyModel latency)
    : capacity_(capacity), page_group_(page_group), latency_(std::move(latency)) {
  // Fail at construction rather than on the first charge.
  latency_.reserve_cost(page_group_.bytes());
  latency_.create_cost(page_group_.bytes());
  latency_.map_cost(page_group_.bytes());
  latency_.unmap_release_cost(page_group_.bytes());
}

MockVmm::VirtualBuffer& MockVmm::live_buffer(BufferId buffer) {
  if (buffer >= buffers_.size() || !buffers_[buffer].live) {
    throw Error(ErrorCode::kInvalidBuffer,
                "no reserved buffer " + std::to_string(buffer));
  }
  return buffers_[buffer];
}

const MockVmm::VirtualBuffer& MockVmm::live_buffer(BufferId buffer) const {
  return const_cast<MockVmm*>(this)->live_buffer(buffer);
}

HandleInfo& MockVmm::live_handle(HandleId handle) {
  if (handle >= handles_.size() || handles_[handle].state == HandleState::kFree) {
    throw Error(ErrorCode::kInvalidHandle,
                "handle " + std::to_string(handle) + " is not live");
  }
  return handles_[handle];
}

BufferId MockVmm::reserve(Bytes size) {
  ExclusiveAccess::Scope scope(access_);
  if (size % page_group_bytes() != 0) {
    throw Error(ErrorCode::kAlignment,
                "reservation of " + std::to_string(size) +
                    " B is not a multiple of the page-group size " +
                    page_group_.label());
  }
  buffers_.push_back(VirtualBuffer{size, true, {}});
  charge(uses_cu_api(page_group_bytes()) ? VmmApi::kCuMemAddressReserve
                                         : VmmApi::kVMemReserve);
  return static_cast<BufferId>(buffers_.size() - 1);
}

void MockVmm::free_buffer(BufferId buffer) {
  ExclusiveAccess::Scope scope(access_);
  VirtualBuffer& b = live_buffer(buffer);
  latency_.address_free_cost(page_group_bytes());  // throws before mutating
  if (!b.mappings.empty()) {
    throw Error(ErrorCode::kInvalidFree,
                "buffer " + std::to_string(buffer) + " still has " +
                    std::to_string(b.mappings.size()) + " mappings");
  }
  b.live = false;
  charge(uses_cu_api(page_group_bytes()) ? VmmApi::kCuMemAddressFree
                                         : VmmApi::kVMemFree);
}

std::optional<HandleId> MockVmm::create_handle() {
  ExclusiveAccess::Scope scope(access_);
  if (created_ >= max_handles()) return std::nullopt;
  HandleId id;
  if (!free_handle_ids_.empty()) {
    id = free_handle_ids_.back();
    free_handle_ids_.pop_back();
  } else {
    id = static_cast<HandleId>(handles_.size());
    handles_.emplace_back();
  }
  handles_[id] = HandleInfo{HandleState::kCreated, 0, 0};
  ++created_;
  charge(uses_cu_api(page_group_bytes()) ? VmmApi::kCuMemCreate
                                         : VmmApi::kVMemCreate);
  return id;
}

void MockVmm::release(HandleId handle) {
  ExclusiveAccess::Scope scope(access_);
  HandleInfo& h = live_handle(handle);
  if (h.state != HandleState::kCreated) {
    throw Error(ErrorCode::kInvalidFree,
                "handle " + std::to_string(handle) + " is still mapped");
  }
  h = HandleInfo{};
  free_handle_ids_.push_back(handle);
  --created_;
  if (uses_cu_api(page_group_bytes())) {
    charge(VmmApi::kCuMemRelease);
  } else {
    charge(VmmApi::kVMemRelease);
  }
}

void MockVmm::map(BufferId buffer, Bytes offset, HandleId handle) {
  ExclusiveAccess::Scope scope(access_);
  VirtualBuffer& b = live_buffer(buffer);
  HandleInfo& h = live_handle(handle);
  if (h.state == HandleState::kMapped) {
    throw Error(ErrorCode::kDoubleMap,
                "handle " + std::to_string(handle) + " is already mapped at " +
                    describe(h.buffer, h.offset));
  }
  if (offset % page_group_bytes() != 0) {
    throw Error(ErrorCode::kAlignment,
                describe(buffer, offset) + " is not page-group aligned");
  }
  if (offset >= b.size || b.size - offset < page_group_bytes()) {
    throw Error(ErrorCode::kOutOfRange,
                describe(buffer, offset) + " lies outside the " +
                    std::to_string(b.size) + " B reservation");
  }
  auto [it, inserted] = b.mappings.try_emplace(offset, handle);
  if (!inserted) {
    throw Error(ErrorCode::kOffsetCollision,
                describe(buffer, offset) + " is already backed by handle " +
                    std::to_string(it->second));
  }
  h = HandleInfo{HandleState::kMapped, buffer, offset};
  ++mapped_;
  if (uses_cu_api(page_group_bytes())) {
    charge(VmmApi::kCuMemMap);
    charge(VmmApi::kCuMemSetAccess);
  } else {
    charge(VmmApi::kVMemMap);
  }
}

HandleId MockVmm::unmap_release(BufferId buffer, Bytes offset) {
  ExclusiveAccess::Scope scope(access_);
  VirtualBuffer& b = live_buffer(buffer);
  auto it = b.mappings.find(offset);
  if (it == b.mappings.end()) {
    throw Error(ErrorCode::kInvalidFree,
                "nothing is mapped at " + describe(buffer, offset));
  }
  const HandleId handle = it->second;
  b.mappings.erase(it);
  handles_[handle] = HandleInfo{};
  free_handle_ids_.push_back(handle);
  --mapped_;
  --created_;
  if (uses_cu_api(page_group_bytes())) {
    charge(VmmApi::kCuMemUnmap);
    charge(VmmApi::kCuMemRelease);
  } else {
    charge(VmmApi::kVMemRelease);
  }
  return handle;
}

Nanos MockVmm::charge(VmmApi api) { return charge(api, page_group_bytes()); }

Nanos MockVmm::charge(VmmApi api, Bytes page_group_bytes) {
  const Nanos c = latency_.cost(api, page_group_bytes);
  ledger_.add(site_, api, c);
  return c;
}

Bytes MockVmm::buffer_size(BufferId buffer) const {
  return live_buffer(buffer).size;
}

const std::map<Bytes, HandleId>& MockVmm::mappings(BufferId buffer) const {
  return live_buffer(buffer).mappings;
}

std::optional<HandleId> MockVmm::handle_at(BufferId buffer, Bytes offset) const {
  const auto& m = live_buffer(buffer).mappings;
  auto it = m.find(offset);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

const HandleInfo& MockVmm::handle(HandleId handle) const {
  if (handle >= handles_.size()) {
    throw Error(ErrorCode::kInvalidHandle,
                "handle " + std::to_string(handle) + " does not exist");
  }
  return handles_[handle];
}

}  // namespace vattn
