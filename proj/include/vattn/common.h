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
#include <stdexcept>
#include <string>
#include <string_view>

namespace vattn {

using Bytes = std::uint64_t;
using Tokens = std::uint64_t;
// Simulated time. Table-driven API costs include fractional microseconds
// (1.7us, 8.5us), so everything is kept in integer nanoseconds.
using Nanos = std::int64_t;

inline constexpr Bytes kKiB = 1024;
inline constexpr Bytes kMiB = 1024 * kKiB;
inline constexpr Bytes kGiB = 1024 * kMiB;

inline constexpr Nanos kNanosPerMicro = 1000;
inline constexpr Nanos kNanosPerMilli = 1000 * 1000;

enum class ErrorCode {
  kConfig,
  kAlignment,
  kDoubleMap,
  kOffsetCollision,
  kOutOfRange,
  kInvalidFree,
  kInvalidHandle,
  kInvalidBuffer,
  kBatchFull,
  kDoubleFree,
  kInvalidSlot,
  kInvalidSeqLen,
  kParse,
  kConcurrentAccess,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Multiplication that throws kConfig instead of silently wrapping.
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b);

inline constexpr std::uint64_t ceil_div(std::uint64_t value,
                                        std::uint64_t divisor) {
  return divisor == 0 ? 0 : (value + divisor - 1) / divisor;
}

inline constexpr std::uint64_t align_up(std::uint64_t value,
                                        std::uint64_t alignment) {
  return ceil_div(value, alignment) * alignment;
}

}  // namespace vattn
