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
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vattn/common.h"

namespace vattn {

// Granularity of one physical allocation. Only the four sizes with
// calibrated driver latencies are representable.
class PageGroupSize {
 public:
  static constexpr Bytes k64K = 64 * kKiB;
  static constexpr Bytes k128K = 128 * kKiB;
  static constexpr Bytes k256K = 256 * kKiB;
  static constexpr Bytes k2M = 2 * kMiB;

  // Throws kConfig for any other byte count.
  explicit PageGroupSize(Bytes bytes);

  // Accepts "64K", "64KB", "2M", "2MB" (case-insensitive) or a byte count.
  static PageGroupSize parse(std::string_view text);
  static std::array<PageGroupSize, 4> all();

  Bytes bytes() const noexcept { return bytes_; }
  // "64KB", "128KB", "256KB", "2MB".
  std::string label() const;

  auto operator<=>(const PageGroupSize&) const = default;

 private:
  Bytes bytes_;
};

// Model and parallelism parameters of one serving worker.
struct ModelGeometry {
  std::string name;
  std::uint64_t n_layers = 1;        // N
  std::uint64_t kv_heads_total = 1;  // H before the tensor-parallel split
  std::uint64_t head_dim = 1;        // D
  std::uint64_t bytes_per_elem = 2;  // P
  Tokens max_context = 0;            // L
  std::uint64_t max_batch = 0;       // B
  std::uint64_t tp_degree = 1;

  // Throws kConfig. max_context and max_batch may be zero here; the
  // KV-cache manager imposes its own stricter check.
  void validate() const;

  std::uint64_t kv_heads_per_worker() const { return kv_heads_total / tp_degree; }
  // K (or V) bytes of one token in one layer on this worker: (H/TP)*D*P.
  Bytes token_layer_bytes() const;

  ModelGeometry with_tp(std::uint64_t tp) const;
  ModelGeometry with_batch(std::uint64_t batch) const;
  ModelGeometry with_context(Tokens context) const;

  bool operator==(const ModelGeometry&) const = default;
};

struct ReservationPlan {
  std::uint64_t buffer_count = 0;  // 2N
  Bytes buffer_bytes = 0;          // B*S
  Bytes total_bytes = 0;           // 2N*B*S, virtual, per worker

  bool operator==(const ReservationPlan&) const = default;
};

// 2*N*(H/TP)*D*P: K and V for every layer of one token on one worker.
Bytes per_token_kv_bytes(const ModelGeometry& g);

// S = L*(H/TP)*D*P: the largest per-layer K (or V) cache of one request.
Bytes per_request_buffer_bytes(const ModelGeometry& g);

ReservationPlan reservation_plan(const ModelGeometry& g);

// Tokens whose single-layer K cache fits in one page-group. Throws kConfig
// when even one token does not fit.
Tokens block_size_tokens(const ModelGeometry& g, PageGroupSize t);

// Same, under the [B, L, N, H, D] sliced layout where one page-group holds
// every layer of a token.
Tokens sliced_block_size_tokens(const ModelGeometry& g, PageGroupSize t);

// Page-groups needed to back `bytes` bytes: (s + t - 1) / t.
std::uint64_t prefill_page_groups(Bytes bytes, Bytes page_group_bytes);
inline std::uint64_t prefill_page_groups(Bytes bytes, PageGroupSize t) {
  return prefill_page_groups(bytes, t.bytes());
}

// Bytes per second when `tp` workers each map one page-group every
// `map_latency_us` microseconds.
double allocation_bandwidth(PageGroupSize t, std::uint64_t tp,
                            double map_latency_us);

// Effective per-map latency per page-group size, used only by the
// bandwidth model. Defaults are back-solved from the measured TP-1
// bandwidth row (7.59, 14.56, 27.04, 35.17 GB/s); they are calibration
// inputs, not driver facts.
class BandwidthCalibration {
 public:
  static BandwidthCalibration defaults();

  void set(PageGroupSize t, double latency_us);
  double latency_us(PageGroupSize t) const;
  double bandwidth(PageGroupSize t, std::uint64_t tp) const {
    return allocation_bandwidth(t, tp, latency_us(t));
  }

  const std::map<Bytes, double>& entries() const { return latency_us_; }

 private:
  std::map<Bytes, double> latency_us_;
};

// Yi-6B, Llama-3-8B and Yi-34B (FP16, 200K context, batch 256, TP-1).
const std::vector<ModelGeometry>& model_presets();
// Case-insensitive lookup by name; nullopt when unknown.
std::optional<ModelGeometry> find_preset(std::string_view name);

}  // namespace vattn
