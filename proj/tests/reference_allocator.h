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

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vattn/kvcache_manager.h"

namespace vattn::testing {

// Page-groups per buffer recomputed from scratch: (s * bytes + t - 1) / t.
inline std::uint64_t reference_groups(Tokens seq_len, Bytes token_bytes, Bytes t) {
  return (seq_len * token_bytes + t - 1) / t;
}

// Rows mapped for `req_id`, read back from the VMM rather than the slot
// table. nullopt when buffers disagree or a row is missing in the middle.
inline std::optional<std::uint64_t> observed_rows(const KvCacheManager& m, int req_id) {
  const Bytes t = m.page_group_bytes();
  const Bytes lo = static_cast<Bytes>(req_id) * m.stride();
  std::optional<std::uint64_t> rows;
  for (BufferId b : m.buffers()) {
    const auto& maps = m.vmm().mappings(b);
    std::uint64_t g = 0;
    for (auto it = maps.lower_bound(lo); it != maps.end() && it->first < lo + m.stride();
         ++it, ++g) {
      if (it->first != lo + g * t) return std::nullopt;
    }
    if (rows && *rows != g) return std::nullopt;
    rows = g;
  }
  return rows;
}

// One request of a replay script, in iteration units.
struct ScriptRequest {
  std::uint64_t arrival = 0;
  Tokens prompt = 1;
  Tokens decode = 1;
};

struct ReplayOptions {
  bool overlap = false;
  bool deferred = false;
  bool eager = false;
  PageGroupSize page_group{PageGroupSize::k64K};
  bool sliced = false;
};

struct ReplayResult {
  std::uint64_t steps = 0;
  std::uint64_t mismatches = 0;
  std::string first_mismatch;
  // Per step, per request (script order): rows mapped, or -1 when the
  // request is not running.
  std::vector<std::vector<long long>> rows;
  Nanos critical_ns = 0;
  Nanos background_ns = 0;
};

// Drives the manager through admit -> step -> retire -> background for a
// script and compares every running request's mapping against the
// reference after each step.
inline ReplayResult replay_against_reference(const ModelGeometry& g,
                                             const std::vector<ScriptRequest>& script,
                                             const ReplayOptions& o) {
  ManagerConfig c;
  c.page_group = o.page_group;
  c.pool_capacity = 1 * kGiB;
  c.overlap = o.overlap;
  c.deferred_reclaim = o.deferred;
  c.eager_allocation = o.eager;
  c.tensor_slicing = o.sliced;
  c.median_prompt_tokens = 40;
  KvCacheManager m(g, c);
  const Bytes tb = m.token_bytes_per_buffer();
  const Bytes t = m.page_group_bytes();

  ReplayResult result;
  struct Live {
    int slot = -1;
    Tokens seq = 0;
    Tokens generated = 0;
    bool done = false;
  };
  std::vector<Live> live(script.size());
  std::vector<Tokens> lens(m.slot_count(), 0);
  auto mismatch = [&](const std::string& why) {
    if (result.mismatches++ == 0) result.first_mismatch = why;
  };

  for (std::uint64_t it = 0;; ++it) {
    bool pending = false;
    for (std::size_t r = 0; r < script.size(); ++r) {
      if (live[r].done) continue;
      pending = true;
      if (script[r].arrival == it) {
        live[r].slot = m.alloc_reqid();
        live[r].seq = script[r].prompt;
      }
    }
    if (!pending) break;

    std::fill(lens.begin(), lens.end(), 0);
    for (const auto& l : live) {
      if (l.slot >= 0 && !l.done) lens[l.slot] = l.seq;
    }
    const StepResult step = m.step(lens);
    if (!step.ok) {
      mismatch("step failed at iteration " + std::to_string(it));
      break;
    }
    ++result.steps;
    std::vector<long long> row(script.size(), -1);
    for (std::size_t r = 0; r < script.size(); ++r) {
      const Live& l = live[r];
      if (l.slot < 0 || l.done) continue;
      const auto seen = observed_rows(m, l.slot);
      const std::uint64_t want = reference_groups(l.seq, tb, t);
      row[r] = seen ? static_cast<long long>(*seen) : -2;
      if (!seen || *seen != want) {
        mismatch("iteration " + std::to_string(it) + " request " + std::to_string(r) +
                 ": mapped " + std::to_string(row[r]) + " rows, reference " +
                 std::to_string(want));
      }
    }
    result.rows.push_back(std::move(row));
    if (auto why = m.check_consistency()) mismatch(*why);

    for (std::size_t r = 0; r < script.size(); ++r) {
      Live& l = live[r];
      if (l.slot < 0 || l.done) continue;
      if (++l.generated >= script[r].decode) {
        m.free_reqid(l.slot);
        l.done = true;
      } else {
        ++l.seq;
      }
    }
    std::fill(lens.begin(), lens.end(), 0);
    for (const auto& l : live) {
      if (l.slot >= 0 && !l.done) lens[l.slot] = l.seq;
    }
    m.run_background(lens);
  }

  // With every optimization off the pool holds exactly the reference state,
  // which after the last request leaves is nothing at all.
  if (!o.deferred && !o.eager && m.mapped_handles() != 0) {
    mismatch("pool still maps " + std::to_string(m.mapped_handles()) + " handles");
  }
  result.critical_ns = m.counters().critical_ns;
  result.background_ns = m.counters().background_ns;
  return result;
}

inline std::vector<ReplayOptions> all_optimization_combos(
    PageGroupSize t = PageGroupSize(PageGroupSize::k64K), bool sliced = false) {
  std::vector<ReplayOptions> out;
  for (int bits = 0; bits < 8; ++bits) {
    ReplayOptions o;
    o.overlap = bits & 1;
    o.deferred = bits & 2;
    o.eager = bits & 4;
    o.page_group = t;
    o.sliced = sliced;
    out.push_back(o);
  }
  return out;
}

}  // namespace vattn::testing
