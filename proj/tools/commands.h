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
#include <optional>
#include <string>
#include <vector>

#include "vattn/config.h"
#include "vattn/model_geometry.h"
#include "vattn/serving_simulator.h"
#include "vattn/trace.h"

namespace vattn::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitAborted = 2 };

struct AnalyzeOptions {
  std::vector<ModelGeometry> models;  // TP in each is ignored
  std::vector<std::uint64_t> tp_degrees{1, 2};
  BandwidthCalibration bandwidth = BandwidthCalibration::defaults();
  std::optional<std::string> out_dir;
};

// Prints the sizing tables and, with out_dir, writes block_sizes.csv,
// sliced.csv, reservation.csv and bandwidth.csv.
void cmd_analyze(const AnalyzeOptions& options, std::ostream& out);

// Per-iteration CSV; times in milliseconds with nanosecond resolution.
void write_iterations_csv(std::ostream& out, const SimMetrics& metrics);
Json summary_json(const SimMetrics& metrics, const RunConfig& config);

// Runs the configured trace. With out_dir, writes iterations.csv and
// summary.json there; otherwise prints the summary. Returns kExitAborted
// when the simulation gave up.
int cmd_simulate(const RunConfig& config, std::ostream& out);

// Runs every config on one trace and reports them side by side. Throws
// kConfig when the configs name different traces. Writes compare.csv when
// the first config has an out_dir.
int cmd_compare(const std::vector<RunConfig>& configs, std::ostream& out);

// Writes the trace to `path`, or to `out` without one.
void cmd_trace_gen(const TraceGenOptions& options,
                   const std::optional<std::string>& path, std::ostream& out);

// Full command-line entry point; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace vattn::cli
