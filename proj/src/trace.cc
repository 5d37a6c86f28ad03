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

#include "vattn/trace.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace vattn {

namespace {

constexpr std::string_view kHeader = "arrival_ms,prompt_tokens,decode_tokens";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  // from_chars for double is not available on every toolchain we target.
  std::string copy(s);
  std::istringstream in(copy);
  in.imbue(std::locale::classic());
  in >> out;
  return !s.empty() && !in.fail() && in.eof() && std::isfinite(out);
}

[[noreturn]] void fail_line(std::size_t line, const std::string& why) {
  throw Error(ErrorCode::kParse, "trace line " + std::to_string(line) + ": " + why);
}

}  // namespace

void SimTrace::validate(Tokens max_context) const {
  double last = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TraceRecord& r = records[i];
    const std::string where = "trace record " + std::to_string(i + 1) + ": ";
    if (!(r.arrival_ms >= 0.0) || r.arrival_ms < last) {
      throw Error(ErrorCode::kParse, where + "arrival times must be non-decreasing");
    }
    if (r.prompt_tokens == 0 || r.decode_tokens == 0) {
      throw Error(ErrorCode::kParse, where + "token counts must be >= 1");
    }
    if (max_context != 0 && r.prompt_tokens + r.decode_tokens > max_context) {
      throw Error(ErrorCode::kParse, where + "prompt + decode exceeds max context " +
                                         std::to_string(max_context));
    }
    last = r.arrival_ms;
  }
}

SimTrace SimTrace::read_csv(std::istream& in) {
  SimTrace trace;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  double last = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    if (!header_seen) {
      if (row != kHeader) {
        fail_line(line_no, "expected header '" + std::string(kHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split(row, ',');
    if (fields.size() != 3) {
      fail_line(line_no, "expected 3 fields, found " + std::to_string(fields.size()));
    }
    TraceRecord r;
    if (!parse_double(fields[0], r.arrival_ms) || r.arrival_ms < 0.0) {
      fail_line(line_no, "bad arrival_ms '" + std::string(fields[0]) + "'");
    }
    if (!parse_uint(fields[1], r.prompt_tokens) || r.prompt_tokens == 0) {
      fail_line(line_no, "bad prompt_tokens '" + std::string(fields[1]) + "'");
    }
    if (!parse_uint(fields[2], r.decode_tokens) || r.decode_tokens == 0) {
      fail_line(line_no, "bad decode_tokens '" + std::string(fields[2]) + "'");
    }
    if (r.arrival_ms < last) fail_line(line_no, "arrival_ms decreases");
    last = r.arrival_ms;
    trace.records.push_back(r);
  }
  if (!header_seen) fail_line(line_no + 1, "missing header");
  return trace;
}

SimTrace SimTrace::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParse, "cannot open trace '" + path + "'");
  return read_csv(in);
}

void SimTrace::write_csv(std::ostream& out) const {
  out << kHeader << '\n';
  std::ostringstream row;
  row.imbue(std::locale::classic());
  for (const auto& r : records) {
    row.str("");
    row << std::fixed << std::setprecision(3) << r.arrival_ms << ','
        << r.prompt_tokens << ',' << r.decode_tokens << '\n';
    out << row.str();
  }
}

void SimTrace::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kParse, "cannot write trace '" + path + "'");
  write_csv(out);
}

Tokens SimTrace::total_decode_tokens() const {
  Tokens sum = 0;
  for (const auto& r : records) sum += r.decode_tokens;
  return sum;
}

LengthDistribution LengthDistribution::fixed(Tokens value) {
  if (value == 0) throw Error(ErrorCode::kConfig, "fixed length must be >= 1");
  LengthDistribution d;
  d.kind_ = Kind::kFixed;
  d.a_ = static_cast<double>(value);
  return d;
}

LengthDistribution LengthDistribution::uniform(Tokens lo, Tokens hi) {
  if (lo == 0 || hi < lo) {
    throw Error(ErrorCode::kConfig, "uniform lengths need 1 <= lo <= hi");
  }
  LengthDistribution d;
  d.kind_ = Kind::kUniform;
  d.a_ = static_cast<double>(lo);
  d.b_ = static_cast<double>(hi);
  return d;
}

LengthDistribution LengthDistribution::lognormal(double median, double sigma) {
  if (!(median >= 1.0) || !(sigma > 0.0) || !std::isfinite(median) ||
      !std::isfinite(sigma)) {
    throw Error(ErrorCode::kConfig, "lognormal lengths need median >= 1, sigma > 0");
  }
  LengthDistribution d;
  d.kind_ = Kind::kLogNormal;
  d.a_ = median;
  d.b_ = sigma;
  return d;
}

LengthDistribution LengthDistribution::parse(std::string_view spec) {
  const auto parts = split(spec, ':');
  auto bad = [&]() {
    return Error(ErrorCode::kConfig,
                 "bad length distribution '" + std::string(spec) +
                     "' (fixed:N, uniform:LO:HI, lognormal:MEDIAN:SIGMA)");
  };
  if (parts[0] == "fixed" && parts.size() == 2) {
    std::uint64_t v = 0;
    if (!parse_uint(parts[1], v)) throw bad();
    return fixed(v);
  }
  if (parts[0] == "uniform" && parts.size() == 3) {
    std::uint64_t lo = 0, hi = 0;
    if (!parse_uint(parts[1], lo) || !parse_uint(parts[2], hi)) throw bad();
    return uniform(lo, hi);
  }
  if (parts[0] == "lognormal" && parts.size() == 3) {
    double median = 0, sigma = 0;
    if (!parse_double(parts[1], median) || !parse_double(parts[2], sigma)) {
      throw bad();
    }
    return lognormal(median, sigma);
  }
  throw bad();
}

Tokens LengthDistribution::sample(std::mt19937_64& rng) const {
  switch (kind_) {
    case Kind::kFixed:
      return static_cast<Tokens>(a_);
    case Kind::kUniform: {
      std::uniform_int_distribution<Tokens> dist(static_cast<Tokens>(a_),
                                                 static_cast<Tokens>(b_));
      return dist(rng);
    }
    case Kind::kLogNormal: {
      std::lognormal_distribution<double> dist(std::log(a_), b_);
      const double v = std::round(dist(rng));
      return v < 1.0 ? 1 : static_cast<Tokens>(v);
    }
  }
  return 1;
}

std::string LengthDistribution::to_string() const {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  switch (kind_) {
    case Kind::kFixed:
      out << "fixed:" << static_cast<Tokens>(a_);
      break;
    case Kind::kUniform:
      out << "uniform:" << static_cast<Tokens>(a_) << ':' << static_cast<Tokens>(b_);
      break;
    case Kind::kLogNormal:
      out << "lognormal:" << a_ << ':' << b_;
      break;
  }
  return out.str();
}

SimTrace generate_trace(const TraceGenOptions& options) {
  if (!(options.qps > 0.0) || !std::isfinite(options.qps)) {
    throw Error(ErrorCode::kConfig, "qps must be > 0");
  }
  if (options.count == 0) throw Error(ErrorCode::kConfig, "count must be >= 1");
  if (options.max_context == 1) {
    throw Error(ErrorCode::kConfig, "max_context must be >= 2 to fit a request");
  }

  std::mt19937_64 rng(options.seed);
  std::exponential_distribution<double> gap(options.qps / 1000.0);
  SimTrace trace;
  trace.records.reserve(options.count);
  double clock = 0.0;
  for (std::size_t i = 0; i < options.count; ++i) {
    if (i > 0) clock += gap(rng);
    TraceRecord r;
    // Round to the CSV's precision so a saved trace reloads identically.
    r.arrival_ms = std::round(clock * 1000.0) / 1000.0;
    r.prompt_tokens = options.prompt.sample(rng);
    r.decode_tokens = options.decode.sample(rng);
    if (options.max_context != 0) {
      r.prompt_tokens = std::min(r.prompt_tokens, options.max_context - 1);
      r.decode_tokens =
          std::min(r.decode_tokens, options.max_context - r.prompt_tokens);
    }
    trace.records.push_back(r);
  }
  return trace;
}

}  // namespace vattn
