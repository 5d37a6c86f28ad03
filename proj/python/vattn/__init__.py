# Copyright 2026 The vattn Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""KV-cache memory management: sizing, a mock VMM and a serving simulator."""

from ._core import (
    VattnError,
    KvCacheManager,
    ManagerConfig,
    ModelGeometry,
    PageGroupSize,
    allocation_bandwidth,
    block_size_tokens,
    default_bandwidth,
    find_preset,
    generate_trace,
    load_trace,
    model_presets,
    per_token_kv_bytes,
    reservation_plan,
    simulate,
    sliced_block_size_tokens,
)

__all__ = [
    "VattnError",
    "KvCacheManager",
    "ManagerConfig",
    "ModelGeometry",
    "PageGroupSize",
    "allocation_bandwidth",
    "block_size_tokens",
    "default_bandwidth",
    "find_preset",
    "generate_trace",
    "load_trace",
    "model_presets",
    "per_token_kv_bytes",
    "reservation_plan",
    "simulate",
    "sliced_block_size_tokens",
]
