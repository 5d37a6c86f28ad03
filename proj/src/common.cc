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

#include "vattn/common.h"

#include <limits>

namespace vattn {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return "config";
    case ErrorCode::kAlignment:
      return "alignment";
    case ErrorCode::kDoubleMap:
      return "double-map";
    case ErrorCode::kOffsetCollision:
      return "offset-collision";
    case ErrorCode::kOutOfRange:
      return "out-of-range";
    case ErrorCode::kInvalidFree:
      return "invalid-free";
    case ErrorCode::kInvalidHandle:
      return "invalid-handle";
    case ErrorCode::kInvalidBuffer:
      return "invalid-buffer";
    case ErrorCode::kBatchFull:
      return "batch-full";
    case ErrorCode::kDoubleFree:
      return "double-free";
    case ErrorCode::kInvalidSlot:
      return "invalid-slot";
    case ErrorCode::kInvalidSeqLen:
      return "invalid-seq-len";
    case ErrorCode::kParse:
      return "parse";
    case ErrorCode::kConcurrentAccess:
      return "concurrent-access";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw Error(ErrorCode::kConfig, "size computation overflows 64 bits");
  }
  return a * b;
}

}  // namespace vattn
