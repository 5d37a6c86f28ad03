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

#include "vattn/model_geometry.h"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace vattn {

namespace {

bool is_supported_page_group(Bytes bytes) {
  return bytes == PageGroupSize::k64K || bytes == PageGroupSize::k128K ||
         bytes == PageGroupSize::k256K || bytes == PageGroupSize::k2M;
}

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

PageGroupSize::PageGroupSize(Bytes bytes) : bytes_(bytes) {
  if (!is_supported_page_group(bytes)) {
    throw Error(ErrorCode::kConfig,
                "unsupported page-group size " + std::to_string(bytes) +
                    " (expected 64KB, 128KB, 256KB or 2MB)");
  }
}

PageGroupSize PageGroupSize::parse(std::string_view text) {
  std::string s = lowercase(text);
  if (s.ends_with("b") && s.size() > 1 && !std::isdigit(s[s.size() - 2])) {
    s.pop_back();
  }
  Bytes multiplier = 1;
  if (s.ends_with("k")) {
    multiplier = kKiB;
    s.pop_back();
  } else if (s.ends_with("m")) {
    multiplier = kMiB;
    s.pop_back();
  }
  Bytes value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kConfig,
                "cannot parse page-group size '" + std::string(text) + "'");
  }
  return PageGroupSize(checked_mul(value, multiplier));
}

std::array<PageGroupSize, 4> PageGroupSize::all() {
  return {PageGroupSize(k64K), PageGroupSize(k128K), PageGroupSize(k256K),
          PageGroupSize(k2M)};
}

std::string PageGroupSize::label() const {
  if (bytes_ >= kMiB) return std::to_string(bytes_ / kMiB) + "MB";
  return std::to_string(bytes_ / kKiB) + "KB";
}

void ModelGeometry::validate() const {
  auto require_positive = [&](std::uint64_t v, const char* field) {
    if (v == 0) {
      throw Error(ErrorCode::kConfig,
                  std::string("geometry field ") + field + " must be >= 1");
    }
  };
  require_positive(n_layers, "n_layers");
  require_positive(kv_heads_total, "kv_heads_total");
  require_positive(head_dim, "head_dim");
  require_positive(bytes_per_elem, "bytes_per_elem");
  require_positive(tp_degree, "tp_degree");
  if (kv_heads_total % tp_degree != 0) {
    throw Error(ErrorCode::kConfig,
                "kv_heads_total (" + std::to_string(kv_heads_total) +
                    ") is not divisible by tp_degree (" +
                    std::to_string(tp_degree) + ")");
  }
}

Bytes ModelGeometry::token_layer_bytes() const {
  return checked_mul(checked_mul(kv_heads_per_worker(), head_dim),
                     bytes_per_elem);
}

ModelGeometry ModelGeometry::with_tp(std::uint64_t tp) const {
  ModelGeometry g = *this;
  g.tp_degree = tp;
  return g;
}

ModelGeometry ModelGeometry::with_batch(std::uint64_t batch) const {
  ModelGeometry g = *this;
  g.max_batch = batch;
  return g;
}

ModelGeometry ModelGeometry::with_context(Tokens context) const {
  ModelGeometry g = *this;
  g.max_context = context;
  return g;
}

Bytes per_token_kv_bytes(const ModelGeometry& g) {
  g.validate();
  return checked_mul(2 * g.n_layers, g.token_layer_bytes());
}

Bytes per_request_buffer_bytes(const ModelGeometry& g) {
  g.validate();
  return checked_mul(g.max_context, g.token_layer_bytes());
}

ReservationPlan reservation_plan(const ModelGeometry& g) {
  ReservationPlan plan;
  plan.buffer_count = 2 * g.n_layers;
  plan.buffer_bytes = checked_mul(g.max_batch, per_request_buffer_bytes(g));
  plan.total_bytes = checked_mul(plan.buffer_count, plan.buffer_bytes);
  return plan;
}

Tokens block_size_tokens(const ModelGeometry& g, PageGroupSize t) {
  g.validate();
  const Bytes per_token = g.token_layer_bytes();
  if (t.bytes() < per_token) {
    throw Error(ErrorCode::kConfig, "page-group " + t.label() +
                                        " is smaller than one token's "
                                        "per-layer cache (" +
                                        std::to_string(per_token) + " B)");
  }
  return t.bytes() / per_token;
}

Tokens sliced_block_size_tokens(const ModelGeometry& g, PageGroupSize t) {
  g.validate();
  const Bytes per_token = checked_mul(g.n_layers, g.token_layer_bytes());
  if (t.bytes() < per_token) {
    throw Error(ErrorCode::kConfig, "page-group " + t.label() +
                                        " is smaller than one token's "
                                        "all-layer cache (" +
                                        std::to_string(per_token) + " B)");
  }
  return t.bytes() / per_token;
}

std::uint64_t prefill_page_groups(Bytes bytes, Bytes page_group_bytes) {
  if (page_group_bytes == 0) {
    throw Error(ErrorCode::kConfig, "page-group size must be positive");
  }
  // Written as a quotient and remainder so s + t - 1 cannot wrap.
  return bytes / page_group_bytes + (bytes % page_group_bytes != 0 ? 1 : 0);
}

double allocation_bandwidth(PageGroupSize t, std::uint64_t tp,
                            double map_latency_us) {
  if (!(map_latency_us > 0.0)) {
    throw Error(ErrorCode::kConfig, "map latency must be positive");
  }
  return static_cast<double>(tp) * static_cast<double>(t.bytes()) /
         (map_latency_us * 1e-6);
}

BandwidthCalibration BandwidthCalibration::defaults() {
  BandwidthCalibration c;
  // 64KB / 8.63us = 7.59 GB/s; the others are solved the same way from
  // 14.56, 27.04 and 35.17 GB/s.
  c.set(PageGroupSize(PageGroupSize::k64K), 8.63);
  c.set(PageGroupSize(PageGroupSize::k128K), 9.00);
  c.set(PageGroupSize(PageGroupSize::k256K), 9.69);
  c.set(PageGroupSize(PageGroupSize::k2M), 59.63);
  return c;
}

void BandwidthCalibration::set(PageGroupSize t, double latency_us) {
  if (!(latency_us > 0.0)) {
    throw Error(ErrorCode::kConfig, "calibrated latency must be positive");
  }
  latency_us_[t.bytes()] = latency_us;
}

double BandwidthCalibration::latency_us(PageGroupSize t) const {
  auto it = latency_us_.find(t.bytes());
  if (it == latency_us_.end()) {
    throw Error(ErrorCode::kConfig,
                "no bandwidth calibration for page-group " + t.label());
  }
  return it->second;
}

const std::vector<ModelGeometry>& model_presets() {
  static const std::vector<ModelGeometry> presets = {
      {"yi-6b", 32, 4, 128, 2, 200000, 256, 1},
      {"llama-3-8b", 32, 8, 128, 2, 200000, 256, 1},
      {"yi-34b", 60, 8, 128, 2, 200000, 256, 1},
  };
  return presets;
}

std::optional<ModelGeometry> find_preset(std::string_view name) {
  const std::string key = lowercase(name);
  for (const auto& g : model_presets()) {
    if (g.name == key) return g;
  }
  return std::nullopt;
}

}  // namespace vattn
