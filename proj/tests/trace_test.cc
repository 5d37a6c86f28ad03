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

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "test_util.h"

namespace vattn {
namespace {

SimTrace parse(const std::string& text) {
  std::istringstream in(text);
  return SimTrace::read_csv(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    return e.what();
  }
  return "";
}

TEST(TraceTest, ParsesHeaderAndRows) {
  const auto t = parse(
      "arrival_ms,prompt_tokens,decode_tokens\n"
      "0,100,10\r\n"
      "\n"
      " 2.5 , 7 , 1\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.records[1].arrival_ms, 2.5);
  EXPECT_EQ(t.records[1].prompt_tokens, 7u);
  EXPECT_EQ(t.total_decode_tokens(), 11u);
  EXPECT_TRUE(parse("arrival_ms,prompt_tokens,decode_tokens\n").empty());
}

TEST(TraceTest, ErrorsNameTheLine) {
  const std::string header = "arrival_ms,prompt_tokens,decode_tokens\n";
  EXPECT_NE(error_of(header + "0,1,1\n1,x,1\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of(header + "0,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(header + "0,0,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(header + "0,1,-4\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(header + "5,1,1\n4,1,1\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of(header + "nan,1,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("a,b,c\n0,1,1\n").find("line 1"), std::string::npos);
  EXPECT_FALSE(error_of("").empty());
}

TEST(TraceTest, ValidateChecksContextBound) {
  SimTrace t;
  t.records = {{0, 60, 40}};
  EXPECT_NO_THROW(t.validate(100));
  EXPECT_THROW(t.validate(99), Error);
  EXPECT_NO_THROW(t.validate(0));
  t.records.push_back({-1, 1, 1});
  EXPECT_THROW(t.validate(), Error);
}

TEST(TraceTest, CsvRoundTrip) {
  TraceGenOptions o;
  o.qps = 3;
  o.count = 50;
  o.prompt = LengthDistribution::lognormal(500, 0.7);
  o.decode = LengthDistribution::uniform(1, 300);
  o.seed = 17;
  const SimTrace t = generate_trace(o);
  std::ostringstream out;
  t.write_csv(out);
  EXPECT_EQ(parse(out.str()), t);
}

TEST(TraceTest, DistributionsParseAndValidate) {
  EXPECT_EQ(LengthDistribution::parse("fixed:12").to_string(), "fixed:12");
  EXPECT_EQ(LengthDistribution::parse("uniform:3:9").to_string(), "uniform:3:9");
  EXPECT_EQ(LengthDistribution::parse("lognormal:100:0.5").kind(),
            LengthDistribution::Kind::kLogNormal);
  for (const char* bad : {"fixed", "fixed:0", "uniform:9:3", "uniform:0:3",
                          "lognormal:0.5:1", "lognormal:10:0", "poisson:3", "fixed:1:2",
                          "uniform:a:b"}) {
    EXPECT_THROW(LengthDistribution::parse(bad), Error) << bad;
  }
}

TEST(TraceTest, GeneratorIsDeterministic) {
  TraceGenOptions o;
  o.count = 100;
  o.prompt = LengthDistribution::uniform(1, 4000);
  EXPECT_EQ(generate_trace(o), generate_trace(o));
  auto o2 = o;
  o2.seed = 1;
  EXPECT_NE(generate_trace(o), generate_trace(o2));
}

TEST(TraceTest, FixedDistributionsGiveConstantRows) {
  TraceGenOptions o;
  o.count = 40;
  o.prompt = LengthDistribution::fixed(77);
  o.decode = LengthDistribution::fixed(5);
  for (const auto& r : generate_trace(o).records) {
    EXPECT_EQ(r.prompt_tokens, 77u);
    EXPECT_EQ(r.decode_tokens, 5u);
  }
}

TEST(TraceTest, PoissonMeanGap) {
  TraceGenOptions o;
  o.qps = 0.25;
  o.count = 512;
  const auto t = generate_trace(o);
  EXPECT_EQ(t.records.front().arrival_ms, 0.0);
  const double mean = t.records.back().arrival_ms / static_cast<double>(o.count - 1);
  EXPECT_NEAR(mean, 4000.0, 400.0);
}

TEST(TraceTest, ClampsToContext) {
  TraceGenOptions o;
  o.count = 200;
  o.prompt = LengthDistribution::uniform(1, 500);
  o.decode = LengthDistribution::uniform(1, 500);
  o.max_context = 300;
  const auto t = generate_trace(o);
  EXPECT_NO_THROW(t.validate(300));
  for (const auto& r : t.records) {
    EXPECT_GE(r.prompt_tokens, 1u);
    EXPECT_GE(r.decode_tokens, 1u);
  }
}

TEST(TraceTest, GeneratorRejectsBadOptions) {
  TraceGenOptions o;
  o.qps = 0;
  EXPECT_THROW(generate_trace(o), Error);
  o.qps = 1;
  o.count = 0;
  EXPECT_THROW(generate_trace(o), Error);
}

TEST(TraceTest, LoadReportsMissingFile) {
  EXPECT_THROW(SimTrace::load("/nonexistent/trace.csv"), Error);
  testing::TempDir dir("trace");
  SimTrace t;
  t.records = {{0, 5, 5}, {1.25, 6, 2}};
  t.save(dir.str("t.csv"));
  EXPECT_EQ(SimTrace::load(dir.str("t.csv")), t);
}

}  // namespace
}  // namespace vattn
