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

#include "vattn/config.h"

#include <cmath>
#include <fstream>
#include <set>

namespace vattn {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::kConfig, "config '" + key + "': " + why);
}

void require_object(const Json& j, const std::string& key) {
  if (!j.is_object()) bad(key, "expected an object");
}

void reject_unknown(const Json& j, const std::string& scope,
                    std::initializer_list<std::string_view> known) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto name : known) ok = ok || k == name;
    if (!ok) bad(scope.empty() ? k : scope + "." + k, "unknown key");
  }
}

std::uint64_t get_uint(const Json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    bad(key, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

double get_double(const Json& j, const std::string& key) {
  if (!j.is_number()) bad(key, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(key, "expected a finite number");
  return v;
}

bool get_bool(const Json& j, const std::string& key) {
  if (!j.is_boolean()) bad(key, "expected true or false");
  return j.get<bool>();
}

std::string get_string(const Json& j, const std::string& key) {
  if (!j.is_string()) bad(key, "expected a string");
  return j.get<std::string>();
}

template <typename F>
auto wrap(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    bad(key, e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, "'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string trigger_name(ReclaimTrigger t) {
  return t == ReclaimTrigger::kFreeBelowThreshold ? "free_below" : "cached_above";
}

ReclaimTrigger parse_trigger(const std::string& s, const std::string& key) {
  if (s == "free_below") return ReclaimTrigger::kFreeBelowThreshold;
  if (s == "cached_above") return ReclaimTrigger::kCachedAboveThreshold;
  bad(key, "expected free_below or cached_above");
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.sim.geometry = *find_preset("yi-6b");
  return c;
}

Json geometry_to_json(const ModelGeometry& g) {
  return Json{{"name", g.name},
              {"n_layers", g.n_layers},
              {"kv_heads", g.kv_heads_total},
              {"head_dim", g.head_dim},
              {"bytes_per_elem", g.bytes_per_elem},
              {"max_context", g.max_context},
              {"max_batch", g.max_batch},
              {"tp", g.tp_degree}};
}

ModelGeometry geometry_from_json(const Json& j) {
  require_object(j, "model");
  reject_unknown(j, "model", {"name", "n_layers", "kv_heads", "head_dim",
                              "bytes_per_elem", "max_context", "max_batch", "tp"});
  ModelGeometry g;
  g.name = "custom";
  for (const auto& [k, v] : j.items()) {
    const std::string key = "model." + k;
    if (k == "name") g.name = get_string(v, key);
    else if (k == "n_layers") g.n_layers = get_uint(v, key);
    else if (k == "kv_heads") g.kv_heads_total = get_uint(v, key);
    else if (k == "head_dim") g.head_dim = get_uint(v, key);
    else if (k == "bytes_per_elem") g.bytes_per_elem = get_uint(v, key);
    else if (k == "max_context") g.max_context = get_uint(v, key);
    else if (k == "max_batch") g.max_batch = get_uint(v, key);
    else if (k == "tp") g.tp_degree = get_uint(v, key);
  }
  wrap("model", [&] { g.validate(); });
  return g;
}

ModelGeometry resolve_model(std::string_view preset_or_file) {
  if (auto preset = find_preset(preset_or_file)) return *preset;
  const std::string path(preset_or_file);
  std::ifstream probe(path);
  if (!probe) {
    std::string names;
    for (const auto& p : model_presets()) names += (names.empty() ? "" : ", ") + p.name;
    throw Error(ErrorCode::kConfig, "unknown model '" + path +
                                        "' (presets: " + names + ", or a JSON file)");
  }
  return geometry_from_json(read_json_file(path));
}

Json latency_to_json(const LatencyModel& model) {
  Json out = Json::object();
  for (const auto& [key, ns] : model.entries()) {
    out[std::string(api_name(key.first))][PageGroupSize(key.second).label()] =
        static_cast<double>(ns) / static_cast<double>(kNanosPerMicro);
  }
  return out;
}

LatencyModel latency_from_json(const Json& j, LatencyModel base) {
  require_object(j, "latency");
  for (const auto& [api_text, sizes] : j.items()) {
    const std::string key = "latency." + api_text;
    const VmmApi api = wrap(key, [&] { return parse_api(api_text); });
    require_object(sizes, key);
    for (const auto& [size_text, us] : sizes.items()) {
      const std::string k2 = key + "." + size_text;
      const PageGroupSize t = wrap(k2, [&] { return PageGroupSize::parse(size_text); });
      const double v = get_double(us, k2);
      if (v < 0.0) bad(k2, "latency must be >= 0");
      base.set(api, t.bytes(),
               std::llround(v * static_cast<double>(kNanosPerMicro)));
    }
  }
  return base;
}

Json bandwidth_to_json(const BandwidthCalibration& cal) {
  Json out = Json::object();
  for (const auto& [bytes, us] : cal.entries()) {
    out[PageGroupSize(bytes).label()] = us;
  }
  return out;
}

BandwidthCalibration bandwidth_from_json(const Json& j, BandwidthCalibration base) {
  require_object(j, "bandwidth");
  for (const auto& [size_text, us] : j.items()) {
    const std::string key = "bandwidth." + size_text;
    const PageGroupSize t = wrap(key, [&] { return PageGroupSize::parse(size_text); });
    wrap(key, [&] { base.set(t, get_double(us, key)); });
  }
  return base;
}

RunConfig run_config_from_json(const Json& j, RunConfig base) {
  require_object(j, "<root>");
  reject_unknown(j, "", {"model", "tp", "max_batch", "max_context", "allocator",
                         "page_group", "mode", "pool_gb", "seed", "manager",
                         "iteration", "paged", "latency", "bandwidth",
                         "max_preemptions", "max_iterations", "trace", "out"});
  RunConfig c = std::move(base);
  SimConfig& s = c.sim;

  // Geometry first so tp/max_batch/max_context override the preset.
  if (j.contains("model")) {
    const Json& m = j.at("model");
    s.geometry = m.is_string() ? resolve_model(m.get<std::string>())
                               : geometry_from_json(m);
  }
  if (j.contains("tp")) s.geometry.tp_degree = get_uint(j.at("tp"), "tp");
  if (j.contains("max_batch")) s.geometry.max_batch = get_uint(j.at("max_batch"), "max_batch");
  if (j.contains("max_context")) {
    s.geometry.max_context = get_uint(j.at("max_context"), "max_context");
  }
  wrap("model", [&] { s.geometry.validate(); });

  for (const auto& [k, v] : j.items()) {
    if (k == "allocator") {
      s.allocator = wrap(k, [&] { return parse_allocator(get_string(v, k)); });
    } else if (k == "page_group") {
      s.page_group = wrap(k, [&] {
        return v.is_string() ? PageGroupSize::parse(v.get<std::string>())
                             : PageGroupSize(get_uint(v, k));
      });
    } else if (k == "mode") {
      s.mode = wrap(k, [&] { return parse_mode(get_string(v, k)); });
    } else if (k == "pool_gb") {
      const double gb = get_double(v, k);
      if (!(gb > 0.0)) bad(k, "must be > 0");
      s.pool_capacity = static_cast<Bytes>(std::llround(gb * static_cast<double>(kGiB)));
    } else if (k == "seed") {
      c.seed = get_uint(v, k);
    } else if (k == "max_preemptions") {
      s.max_preemptions = get_uint(v, k);
    } else if (k == "max_iterations") {
      s.max_iterations = get_uint(v, k);
    } else if (k == "trace") {
      c.trace_path = get_string(v, k);
    } else if (k == "out") {
      c.out_dir = get_string(v, k);
    } else if (k == "latency") {
      s.manager.latency = latency_from_json(v, s.manager.latency);
    } else if (k == "bandwidth") {
      c.bandwidth = bandwidth_from_json(v, c.bandwidth);
    } else if (k == "manager") {
      require_object(v, k);
      reject_unknown(v, k, {"reclaim_threshold", "reclaim_trigger", "deferred_reclaim",
                            "eager_allocation", "eager_groups", "median_prompt_tokens",
                            "tensor_slicing", "precreate_fraction"});
      ManagerConfig& m = s.manager;
      for (const auto& [mk, mv] : v.items()) {
        const std::string key = "manager." + mk;
        if (mk == "reclaim_threshold") m.reclaim_threshold = get_double(mv, key);
        else if (mk == "reclaim_trigger") m.reclaim_trigger = parse_trigger(get_string(mv, key), key);
        else if (mk == "deferred_reclaim") m.deferred_reclaim = get_bool(mv, key);
        else if (mk == "eager_allocation") m.eager_allocation = get_bool(mv, key);
        else if (mk == "eager_groups") {
          if (mv.is_null()) m.eager_groups.reset();
          else m.eager_groups = get_uint(mv, key);
        }
        else if (mk == "median_prompt_tokens") m.median_prompt_tokens = get_uint(mv, key);
        else if (mk == "tensor_slicing") m.tensor_slicing = get_bool(mv, key);
        else if (mk == "precreate_fraction") m.precreate_fraction = get_double(mv, key);
      }
    } else if (k == "iteration") {
      require_object(v, k);
      reject_unknown(v, k, {"base_ms", "prefill_ms_per_token", "decode_ms_per_token"});
      IterationModel& it = s.iteration;
      for (const auto& [ik, iv] : v.items()) {
        const std::string key = "iteration." + ik;
        if (ik == "base_ms") it.base_ms = get_double(iv, key);
        else if (ik == "prefill_ms_per_token") it.prefill_ms_per_token = get_double(iv, key);
        else if (ik == "decode_ms_per_token") it.decode_ms_per_token = get_double(iv, key);
      }
      wrap(k, [&] { it.validate(); });
    } else if (k == "paged") {
      require_object(v, k);
      reject_unknown(v, k, {"block_tokens", "block_table_ns_per_entry"});
      for (const auto& [pk, pv] : v.items()) {
        const std::string key = "paged." + pk;
        if (pk == "block_tokens") s.paged_block_tokens = get_uint(pv, key);
        else if (pk == "block_table_ns_per_entry") {
          const double c_bt = get_double(pv, key);
          if (c_bt < 0.0) bad(key, "must be >= 0");
          s.block_table_ns_per_entry = c_bt;
        }
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  return run_config_from_json(read_json_file(path), std::move(base));
}

Json run_config_to_json(const RunConfig& c) {
  const SimConfig& s = c.sim;
  const ManagerConfig& m = s.manager;
  Json out{
      {"model", geometry_to_json(s.geometry)},
      {"allocator", std::string(allocator_name(s.allocator))},
      {"page_group", s.page_group.label()},
      {"mode", std::string(mode_name(s.mode))},
      {"pool_gb", static_cast<double>(s.pool_capacity) / static_cast<double>(kGiB)},
      {"seed", c.seed},
      {"max_preemptions", s.max_preemptions},
      {"max_iterations", s.max_iterations},
      {"manager",
       {{"reclaim_threshold", m.reclaim_threshold},
        {"reclaim_trigger", trigger_name(m.reclaim_trigger)},
        {"deferred_reclaim", m.deferred_reclaim},
        {"eager_allocation", m.eager_allocation},
        {"eager_groups", m.eager_groups ? Json(*m.eager_groups) : Json(nullptr)},
        {"median_prompt_tokens", m.median_prompt_tokens},
        {"tensor_slicing", m.tensor_slicing},
        {"precreate_fraction", m.precreate_fraction}}},
      {"iteration",
       {{"base_ms", s.iteration.base_ms},
        {"prefill_ms_per_token", s.iteration.prefill_ms_per_token},
        {"decode_ms_per_token", s.iteration.decode_ms_per_token}}},
      {"paged",
       {{"block_tokens", s.paged_block_tokens},
        {"block_table_ns_per_entry",
         s.block_table_ns_per_entry.value_or(
             calibrated_block_table_ns_per_entry(s.iteration))}}},
      {"latency", latency_to_json(m.latency)},
      {"bandwidth", bandwidth_to_json(c.bandwidth)},
  };
  if (c.trace_path) out["trace"] = *c.trace_path;
  if (c.out_dir) out["out"] = *c.out_dir;
  return out;
}

}  // namespace vattn
