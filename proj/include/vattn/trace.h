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
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vattn/common.h"

namespace vattn {

struct TraceRecord {
  double arrival_ms = 0.0;
  Tokens prompt_tokens = 1;
  Tokens decode_tokens = 1;

  bool operator==(const TraceRecord&) const = default;
};

// Requests in arrival order. CSV form:
//   arrival_ms,prompt_tokens,decode_tokens
struct SimTrace {
  std::vector<TraceRecord> records;

  // Throws kParse naming the offending record when arrivals decrease, a
  // count is zero, or prompt + decode exceeds max_context (0 = unchecked).
  void validate(Tokens max_context = 0) const;

  // Throws kParse with the 1-based line number of a malformed row.
  static SimTrace read_csv(std::istream& in);
  static SimTrace load(const std::string& path);
  void write_csv(std::ostream& out) const;
  void save(const std::string& path) const;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  Tokens total_decode_tokens() const;

  bool operator==(const SimTrace&) const = default;
};

// "fixed:N", "uniform:LO:HI" (inclusive) or "lognormal:MEDIAN:SIGMA".
class LengthDistribution {
 public:
  enum class Kind { kFixed, kUniform, kLogNormal };

  static LengthDistribution fixed(Tokens value);
  static LengthDistribution uniform(Tokens lo, Tokens hi);
  static LengthDistribution lognormal(double median, double sigma);
  // Throws kConfig on malformed or invalid parameters.
  static LengthDistribution parse(std::string_view spec);

  // Always >= 1.
  Tokens sample(std::mt19937_64& rng) const;
  std::string to_string() const;
  Kind kind() const { return kind_; }

 private:
  Kind kind_ = Kind::kFixed;
  double a_ = 1.0;
  double b_ = 1.0;
};

struct TraceGenOptions {
  double qps = 1.0;
  std::size_t count = 1;
  LengthDistribution prompt = LengthDistribution::fixed(1024);
  LengthDistribution decode = LengthDistribution::fixed(256);
  // Clamp so prompt + decode <= max_context; 0 disables clamping.
  Tokens max_context = 0;
  std::uint64_t seed = 0;
};

// Poisson arrivals (exponential gaps with mean 1000/qps ms), the first
// request at time 0. Throws kConfig for qps <= 0 or count == 0.
SimTrace generate_trace(const TraceGenOptions& options);

}  // namespace vattn
