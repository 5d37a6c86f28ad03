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
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "vattn/mock_vmm.h"
#include "vattn/model_geometry.h"
#include "vattn/serving_simulator.h"

namespace vattn {

using Json = nlohmann::json;

// Everything one CLI run needs. Paths are optional so a config file can be
// combined with command-line flags.
struct RunConfig {
  SimConfig sim;
  BandwidthCalibration bandwidth = BandwidthCalibration::defaults();
  std::uint64_t seed = 0;
  std::optional<std::string> trace_path;
  std::optional<std::string> out_dir;
};

// Yi-6B preset, vAttention, overlapped, 2MB page-groups, 80 GiB pool.
RunConfig default_run_config();

// All parsers throw kConfig naming the offending key, including for keys
// they do not know.
Json geometry_to_json(const ModelGeometry& g);
ModelGeometry geometry_from_json(const Json& j);
// A preset name, or the path of a JSON file holding a geometry object.
ModelGeometry resolve_model(std::string_view preset_or_file);

// {"cuMemMap": {"2MB": 2.0}, ...}, microseconds.
Json latency_to_json(const LatencyModel& model);
LatencyModel latency_from_json(const Json& j,
                               LatencyModel base = LatencyModel::defaults());

// {"64KB": 8.63, ...}, microseconds per page-group.
Json bandwidth_to_json(const BandwidthCalibration& cal);
BandwidthCalibration bandwidth_from_json(
    const Json& j, BandwidthCalibration base = BandwidthCalibration::defaults());

// Keys not present keep their value from `base`.
RunConfig run_config_from_json(const Json& j,
                               RunConfig base = default_run_config());
RunConfig load_run_config(const std::string& path,
                          RunConfig base = default_run_config());
Json run_config_to_json(const RunConfig& config);

}  // namespace vattn
