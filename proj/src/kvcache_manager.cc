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

#include "vattn/kvcache_manager.h"

#include <algorithm>
#include <cmath>

namespace vattn {

namespace {

std::uint64_t threshold_handles(double fraction, std::uint64_t total) {
  return static_cast<std::uint64_t>(
      std::ceil(fraction * static_cast<double>(total)));
}

}  // namespace

KvCacheManager::KvCacheManager(const ModelGeometry& geometry,
                               const ManagerConfig& config)
    : geometry_(geometry), config_(config) {
  geometry_.validate();
  if (geometry_.max_context == 0 || geometry_.max_batch == 0) {
    throw Error(ErrorCode::kConfig,
                "KV-cache manager needs max_context >= 1 and max_batch >= 1");
  }
  if (!(config_.reclaim_threshold >= 0.0 && config_.reclaim_threshold <= 1.0)) {
    throw Error(ErrorCode::kConfig, "reclaim_threshold must lie in [0, 1]");
  }
  if (!(config_.precreate_fraction >= 0.0 &&
        config_.precreate_fraction <= 1.0)) {
    throw Error(ErrorCode::kConfig, "precreate_fraction must lie in [0, 1]");
  }

  const Bytes t = page_group_bytes();
  const std::uint64_t n_buffers =
      config_.tensor_slicing ? 2 : 2 * geometry_.n_layers;
  token_bytes_ = config_.tensor_slicing
                     ? checked_mul(geometry_.n_layers, geometry_.token_layer_bytes())
                     : geometry_.token_layer_bytes();
  if (t < token_bytes_) {
    throw Error(ErrorCode::kConfig,
                "page-group " + config_.page_group.label() +
                    " cannot hold one token (" + std::to_string(token_bytes_) +
                    " B per buffer)");
  }
  block_tokens_ = t / token_bytes_;
  // Offsets must be page-group aligned, so the per-request stride is S
  // rounded up to a whole number of page-groups.
  stride_ = align_up(checked_mul(geometry_.max_context, token_bytes_), t);
  const Bytes buffer_bytes = checked_mul(geometry_.max_batch, stride_);

  vmm_ = std::make_unique<MockVmm>(config_.pool_capacity, config_.page_group,
                                   config_.latency);
  if (vmm_->max_handles() < n_buffers) {
    throw Error(ErrorCode::kConfig,
                "pool of " + std::to_string(config_.pool_capacity) +
                    " B cannot back one page-group in each of " +
                    std::to_string(n_buffers) + " buffers");
  }

  vmm_->set_call_site(CallSite::kInit);
  buffers_.reserve(n_buffers);
  for (std::uint64_t i = 0; i < n_buffers; ++i) {
    buffers_.push_back(vmm_->reserve(buffer_bytes));
  }
  const auto precreate = static_cast<std::uint64_t>(
      config_.precreate_fraction * static_cast<double>(vmm_->max_handles()));
  stash_.reserve(precreate);
  for (std::uint64_t i = 0; i < precreate; ++i) {
    stash_.push_back(*vmm_->create_handle());
  }
  counters_.init_ns = site_total(CallSite::kInit);

  slots_.resize(geometry_.max_batch);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    slots_[i].req_id = static_cast<int>(i);
  }
  eager_groups_ = config_.eager_groups
                      ? *config_.eager_groups
                      : groups_for(config_.median_prompt_tokens);
  eager_pending_ = config_.eager_allocation;
}

std::uint64_t KvCacheManager::groups_for(Tokens tokens) const {
  return prefill_page_groups(checked_mul(tokens, token_bytes_),
                             page_group_bytes());
}

const RequestSlot& KvCacheManager::slot(int req_id) const {
  check_slot(req_id);
  return slots_[req_id];
}

void KvCacheManager::check_slot(int req_id) const {
  if (req_id < 0 || static_cast<std::size_t>(req_id) >= slots_.size()) {
    throw Error(ErrorCode::kInvalidSlot,
                "reqId " + std::to_string(req_id) + " outside [0, " +
                    std::to_string(slots_.size()) + ")");
  }
}

std::size_t KvCacheManager::active_count() const {
  return static_cast<std::size_t>(std::count_if(
      slots_.begin(), slots_.end(), [](const RequestSlot& s) { return s.active; }));
}

std::uint64_t KvCacheManager::cached_handles() const {
  std::uint64_t groups = 0;
  for (const auto& s : slots_) {
    if (!s.active) groups += s.mapped_groups;
  }
  return groups * buffer_count();
}

void KvCacheManager::map_row(RequestSlot& slot, CallSite site,
                             std::uint64_t& creates) {
  vmm_->set_call_site(site);
  const Bytes offset = row_offset(slot.req_id, slot.mapped_groups);
  for (BufferId buffer : buffers_) {
    HandleId handle;
    if (!stash_.empty()) {
      handle = stash_.back();
      stash_.pop_back();
    } else {
      auto created = vmm_->create_handle();
      if (!created) {
        throw Error(ErrorCode::kConfig, "pool exhausted mid-row");
      }
      handle = *created;
      ++creates;
    }
    vmm_->map(buffer, offset, handle);
  }
  ++slot.mapped_groups;
  slot.lifetime_maps += buffer_count();
  if (site == CallSite::kBackground) {
    counters_.background_maps += buffer_count();
  } else {
    counters_.critical_maps += buffer_count();
  }
}

void KvCacheManager::release_row(RequestSlot& slot, CallSite site) {
  vmm_->set_call_site(site);
  const Bytes offset = row_offset(slot.req_id, slot.mapped_groups - 1);
  for (BufferId buffer : buffers_) {
    vmm_->unmap_release(buffer, offset);
  }
  --slot.mapped_groups;
  counters_.released_groups += buffer_count();
  if (eager_slot_ == slot.req_id && slot.mapped_groups == 0) {
    eager_slot_.reset();
    eager_pending_ = config_.eager_allocation;
  }
}

std::vector<int> KvCacheManager::reclaim_victims() const {
  std::vector<int> victims;
  for (const auto& s : slots_) {
    if (!s.active && s.mapped_groups > 0 && eager_slot_ != s.req_id) {
      victims.push_back(s.req_id);
    }
  }
  std::stable_sort(victims.begin(), victims.end(), [&](int a, int b) {
    return slots_[a].freed_order < slots_[b].freed_order;
  });
  if (eager_slot_ && slots_[*eager_slot_].mapped_groups > 0) {
    victims.push_back(*eager_slot_);
  }
  return victims;
}

std::uint64_t KvCacheManager::reclaim_until_available(std::uint64_t handles,
                                                      CallSite site) {
  std::uint64_t freed = 0;
  for (int id : reclaim_victims()) {
    RequestSlot& s = slots_[id];
    while (available_handles() < handles && s.mapped_groups > 0) {
      release_row(s, site);
      freed += buffer_count();
    }
    if (available_handles() >= handles) break;
  }
  return freed;
}

int KvCacheManager::pick_inactive_slot() const {
  int best = -1;
  for (const auto& s : slots_) {
    if (s.active) continue;
    if (best < 0 || s.mapped_groups > slots_[best].mapped_groups) best = s.req_id;
  }
  return best;
}

int KvCacheManager::alloc_reqid() {
  int id = -1;
  if (eager_slot_ && !slots_[*eager_slot_].active) {
    id = *eager_slot_;
  } else {
    id = pick_inactive_slot();
  }
  if (id < 0) {
    throw Error(ErrorCode::kBatchFull,
                "all " + std::to_string(slots_.size()) + " reqIds are active");
  }
  eager_slot_.reset();
  eager_pending_ = config_.eager_allocation;

  RequestSlot& s = slots_[id];
  s.active = true;
  s.phase = SlotPhase::kPrefill;
  s.context_len = 0;
  s.lifetime_maps = 0;
  return id;
}

void KvCacheManager::free_reqid(int req_id) {
  check_slot(req_id);
  RequestSlot& s = slots_[req_id];
  if (!s.active) {
    throw Error(ErrorCode::kDoubleFree,
                "reqId " + std::to_string(req_id) + " is not active");
  }
  s.active = false;
  s.phase = SlotPhase::kInactive;
  s.context_len = 0;
  s.freed_order = ++free_stamp_;
  if (!config_.deferred_reclaim) {
    const Nanos before = site_total(CallSite::kForeground);
    while (s.mapped_groups > 0) release_row(s, CallSite::kForeground);
    counters_.critical_ns += site_total(CallSite::kForeground) - before;
  }
}

StepResult KvCacheManager::step(std::span<const Tokens> seq_lens) {
  if (seq_lens.size() != slots_.size()) {
    throw Error(ErrorCode::kInvalidSeqLen,
                "step expects " + std::to_string(slots_.size()) +
                    " sequence lengths, got " + std::to_string(seq_lens.size()));
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!slots_[i].active && seq_lens[i] != 0) {
      throw Error(ErrorCode::kInvalidSeqLen,
                  "inactive reqId " + std::to_string(i) + " has length " +
                      std::to_string(seq_lens[i]));
    }
    if (seq_lens[i] > geometry_.max_context) {
      throw Error(ErrorCode::kInvalidSeqLen,
                  "reqId " + std::to_string(i) + " length " +
                      std::to_string(seq_lens[i]) + " exceeds max context " +
                      std::to_string(geometry_.max_context));
    }
  }

  const Nanos fg0 = site_total(CallSite::kForeground);
  const Nanos bg0 = site_total(CallSite::kBackground);
  const std::uint64_t released0 = counters_.released_groups;
  StepResult result;

  // A reused slot may carry more page-groups than its new owner needs; the
  // surplus goes back before the request starts using the slot.
  for (auto& s : slots_) {
    if (!s.active || s.phase != SlotPhase::kPrefill || seq_lens[s.req_id] == 0) {
      continue;
    }
    const std::uint64_t need = groups_for(seq_lens[s.req_id]);
    while (s.mapped_groups > need) release_row(s, CallSite::kBackground);
  }

  std::uint64_t rows = 0;
  for (const auto& s : slots_) {
    if (!s.active) continue;
    const std::uint64_t need = groups_for(seq_lens[s.req_id]);
    if (need > s.mapped_groups) rows += need - s.mapped_groups;
  }
  const std::uint64_t handles = rows * buffer_count();
  if (handles > available_handles()) {
    reclaim_until_available(handles, CallSite::kForeground);
  }

  if (handles > available_handles()) {
    result.ok = false;
    ++counters_.failed_steps;
  } else {
    for (auto& s : slots_) {
      if (!s.active) continue;
      const Tokens len = seq_lens[s.req_id];
      const std::uint64_t need = groups_for(len);
      while (s.mapped_groups < need) {
        map_row(s, CallSite::kForeground, result.create_calls);
        result.map_calls += buffer_count();
      }
      s.context_len = len;
      if (len > 0) s.phase = SlotPhase::kDecode;
    }
  }

  result.critical_ns = site_total(CallSite::kForeground) - fg0;
  result.released_groups = counters_.released_groups - released0;
  counters_.critical_ns += result.critical_ns;
  counters_.background_ns += site_total(CallSite::kBackground) - bg0;
  return result;
}

AllocationPlan KvCacheManager::plan_overlap(
    std::span<const Tokens> next_seq_lens) const {
  if (next_seq_lens.size() != slots_.size()) {
    throw Error(ErrorCode::kInvalidSeqLen,
                "plan expects " + std::to_string(slots_.size()) +
                    " sequence lengths, got " +
                    std::to_string(next_seq_lens.size()));
  }
  AllocationPlan plan;
  for (const auto& s : slots_) {
    if (!s.active || s.phase != SlotPhase::kDecode) continue;
    const Tokens next = std::min<Tokens>(next_seq_lens[s.req_id],
                                         geometry_.max_context);
    const std::uint64_t need = groups_for(next);
    for (std::uint64_t g = s.mapped_groups; g < need; ++g) {
      for (BufferId buffer : buffers_) {
        plan.mappings.push_back({s.req_id, buffer, row_offset(s.req_id, g)});
      }
    }
  }
  return plan;
}

Nanos KvCacheManager::execute_plan(const AllocationPlan& plan) {
  const std::size_t n = buffer_count();
  if (plan.size() % n != 0) {
    throw Error(ErrorCode::kConfig,
                "allocation plan is not a whole number of rows");
  }
  const Nanos bg0 = site_total(CallSite::kBackground);
  std::uint64_t creates = 0;
  for (std::size_t i = 0; i < plan.size(); i += n) {
    const PlannedMapping& first = plan.mappings[i];
    check_slot(first.req_id);
    RequestSlot& s = slots_[first.req_id];
    // Rows that are stale or already mapped are skipped.
    if (!s.active || first.offset != row_offset(s.req_id, s.mapped_groups)) {
      continue;
    }
    if (available_handles() < n) {
      reclaim_until_available(n, CallSite::kBackground);
      if (available_handles() < n) break;
    }
    map_row(s, CallSite::kBackground, creates);
  }
  const Nanos charged = site_total(CallSite::kBackground) - bg0;
  counters_.background_ns += charged;
  return charged;
}

std::uint64_t KvCacheManager::reclaim() {
  const Nanos bg0 = site_total(CallSite::kBackground);
  std::uint64_t freed = 0;
  const std::uint64_t total = total_handles();
  switch (config_.reclaim_trigger) {
    case ReclaimTrigger::kFreeBelowThreshold: {
      const std::uint64_t target =
          threshold_handles(config_.reclaim_threshold, total);
      if (available_handles() < target) {
        freed = reclaim_until_available(target, CallSite::kBackground);
      }
      break;
    }
    case ReclaimTrigger::kCachedAboveThreshold: {
      const auto limit = static_cast<std::uint64_t>(
          config_.reclaim_threshold * static_cast<double>(total));
      for (int id : reclaim_victims()) {
        RequestSlot& s = slots_[id];
        while (cached_handles() > limit && s.mapped_groups > 0) {
          release_row(s, CallSite::kBackground);
          freed += buffer_count();
        }
        if (cached_handles() <= limit) break;
      }
      break;
    }
  }
  counters_.background_ns += site_total(CallSite::kBackground) - bg0;
  return freed;
}

Nanos KvCacheManager::eager_prepare(std::uint64_t k_groups) {
  if (k_groups == 0) return 0;
  int id = -1;
  if (eager_slot_ && !slots_[*eager_slot_].active) {
    id = *eager_slot_;
  } else {
    id = pick_inactive_slot();
  }
  if (id < 0) return 0;

  RequestSlot& s = slots_[id];
  const std::uint64_t rows = k_groups > s.mapped_groups ? k_groups - s.mapped_groups : 0;
  const std::uint64_t handles = rows * buffer_count();
  const std::uint64_t floor_handles =
      threshold_handles(config_.reclaim_threshold, total_handles());
  if (handles > available_handles() ||
      available_handles() - handles < floor_handles) {
    return 0;
  }
  const Nanos bg0 = site_total(CallSite::kBackground);
  std::uint64_t creates = 0;
  for (std::uint64_t r = 0; r < rows; ++r) {
    map_row(s, CallSite::kBackground, creates);
  }
  eager_slot_ = id;
  eager_pending_ = false;
  const Nanos charged = site_total(CallSite::kBackground) - bg0;
  counters_.background_ns += charged;
  return charged;
}

Nanos KvCacheManager::run_background(std::span<const Tokens> next_seq_lens) {
  const Nanos bg0 = site_total(CallSite::kBackground);
  if (config_.overlap) execute_plan(plan_overlap(next_seq_lens));
  if (config_.eager_allocation && (eager_pending_ || !eager_slot_)) {
    eager_prepare(eager_groups_);
  }
  reclaim();
  return site_total(CallSite::kBackground) - bg0;
}

std::optional<std::string> KvCacheManager::check_consistency() const {
  std::uint64_t expected_mapped = 0;
  for (const auto& s : slots_) {
    expected_mapped += s.mapped_groups * buffer_count();
    if (s.active && s.mapped_groups * page_group_bytes() <
                        checked_mul(s.context_len, token_bytes_)) {
      return "reqId " + std::to_string(s.req_id) + " is under-backed";
    }
    const Bytes lo = static_cast<Bytes>(s.req_id) * stride_;
    for (BufferId buffer : buffers_) {
      const auto& m = vmm_->mappings(buffer);
      auto it = m.lower_bound(lo);
      std::uint64_t g = 0;
      for (; it != m.end() && it->first < lo + stride_; ++it, ++g) {
        if (it->first != row_offset(s.req_id, g)) {
          return "reqId " + std::to_string(s.req_id) + " buffer " +
                 std::to_string(buffer) + " has a hole before offset " +
                 std::to_string(it->first);
        }
      }
      if (g != s.mapped_groups) {
        return "reqId " + std::to_string(s.req_id) + " buffer " +
               std::to_string(buffer) + " maps " + std::to_string(g) +
               " groups, slot says " + std::to_string(s.mapped_groups);
      }
    }
  }
  if (expected_mapped != vmm_->mapped_count()) {
    return "pool maps " + std::to_string(vmm_->mapped_count()) +
           " handles, slots account for " + std::to_string(expected_mapped);
  }
  if (eager_slot_ && slots_[*eager_slot_].active) {
    return "eager slot " + std::to_string(*eager_slot_) + " is active";
  }
  for (HandleId h : stash_) {
    if (vmm_->handle(h).state != HandleState::kCreated) {
      return "stashed handle " + std::to_string(h) + " is not in created state";
    }
  }
  return std::nullopt;
}

}  // namespace vattn
