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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "vattn/config.h"
#include "vattn/kvcache_manager.h"
#include "vattn/model_geometry.h"
#include "vattn/serving_simulator.h"
#include "vattn/trace.h"

namespace py = pybind11;
using namespace vattn;

namespace {

py::dict trace_rows(const SimTrace& trace) {
  py::list arrival, prompt, decode;
  for (const auto& r : trace.records) {
    arrival.append(r.arrival_ms);
    prompt.append(r.prompt_tokens);
    decode.append(r.decode_tokens);
  }
  py::dict d;
  d["arrival_ms"] = arrival;
  d["prompt_tokens"] = prompt;
  d["decode_tokens"] = decode;
  return d;
}

SimTrace trace_from_rows(const std::vector<std::tuple<double, Tokens, Tokens>>& rows) {
  SimTrace t;
  for (const auto& [a, p, d] : rows) t.records.push_back({a, p, d});
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "KV-cache memory management: sizing, a mock VMM and a serving simulator.";

  py::register_exception<Error>(m, "VattnError", PyExc_ValueError);

  py::class_<PageGroupSize>(m, "PageGroupSize")
      .def(py::init<Bytes>())
      .def_static("parse", &PageGroupSize::parse)
      .def_static("all", [] {
        const auto a = PageGroupSize::all();
        return std::vector<PageGroupSize>(a.begin(), a.end());
      })
      .def_property_readonly("bytes", &PageGroupSize::bytes)
      .def_property_readonly("label", &PageGroupSize::label)
      .def("__eq__", [](const PageGroupSize& a, const PageGroupSize& b) { return a == b; })
      .def("__hash__", [](const PageGroupSize& t) { return std::hash<Bytes>()(t.bytes()); })
      .def("__repr__", [](const PageGroupSize& t) { return "PageGroupSize(" + t.label() + ")"; });

  py::class_<ModelGeometry>(m, "ModelGeometry")
      .def(py::init<>())
      .def_readwrite("name", &ModelGeometry::name)
      .def_readwrite("n_layers", &ModelGeometry::n_layers)
      .def_readwrite("kv_heads", &ModelGeometry::kv_heads_total)
      .def_readwrite("head_dim", &ModelGeometry::head_dim)
      .def_readwrite("bytes_per_elem", &ModelGeometry::bytes_per_elem)
      .def_readwrite("max_context", &ModelGeometry::max_context)
      .def_readwrite("max_batch", &ModelGeometry::max_batch)
      .def_readwrite("tp", &ModelGeometry::tp_degree)
      .def("validate", &ModelGeometry::validate)
      .def("with_tp", &ModelGeometry::with_tp)
      .def("with_batch", &ModelGeometry::with_batch)
      .def("with_context", &ModelGeometry::with_context)
      .def("__repr__", [](const ModelGeometry& g) {
        return "ModelGeometry(" + geometry_to_json(g).dump() + ")";
      });

  m.def("model_presets", &model_presets);
  m.def("find_preset", &find_preset, py::arg("name"));
  m.def("per_token_kv_bytes", &per_token_kv_bytes);
  m.def("block_size_tokens", &block_size_tokens);
  m.def("sliced_block_size_tokens", &sliced_block_size_tokens);
  m.def("reservation_plan", [](const ModelGeometry& g) {
    const ReservationPlan p = reservation_plan(g);
    py::dict d;
    d["buffer_count"] = p.buffer_count;
    d["buffer_bytes"] = p.buffer_bytes;
    d["total_bytes"] = p.total_bytes;
    return d;
  });
  m.def("allocation_bandwidth", &allocation_bandwidth, py::arg("page_group"),
        py::arg("tp"), py::arg("map_latency_us"));
  m.def("default_bandwidth", [](const PageGroupSize& t, std::uint64_t tp) {
    return BandwidthCalibration::defaults().bandwidth(t, tp);
  });

  py::class_<ManagerConfig>(m, "ManagerConfig")
      .def(py::init<>())
      .def_readwrite("page_group", &ManagerConfig::page_group)
      .def_readwrite("pool_capacity", &ManagerConfig::pool_capacity)
      .def_readwrite("reclaim_threshold", &ManagerConfig::reclaim_threshold)
      .def_readwrite("overlap", &ManagerConfig::overlap)
      .def_readwrite("deferred_reclaim", &ManagerConfig::deferred_reclaim)
      .def_readwrite("eager_allocation", &ManagerConfig::eager_allocation)
      .def_readwrite("tensor_slicing", &ManagerConfig::tensor_slicing)
      .def_readwrite("precreate_fraction", &ManagerConfig::precreate_fraction);

  py::class_<KvCacheManager>(m, "KvCacheManager")
      .def(py::init<const ModelGeometry&, const ManagerConfig&>())
      .def("alloc_reqid", &KvCacheManager::alloc_reqid)
      .def("free_reqid", &KvCacheManager::free_reqid)
      .def("step", [](KvCacheManager& mgr, const std::vector<Tokens>& lens) {
        return mgr.step(lens).code();
      })
      .def("run_background", [](KvCacheManager& mgr, const std::vector<Tokens>& lens) {
        return mgr.run_background(lens);
      })
      .def("groups_for", &KvCacheManager::groups_for)
      .def("mapped_groups", [](const KvCacheManager& mgr, int req_id) {
        return mgr.slot(req_id).mapped_groups;
      })
      .def("check_consistency", &KvCacheManager::check_consistency)
      .def_property_readonly("buffer_count", &KvCacheManager::buffer_count)
      .def_property_readonly("slot_count", &KvCacheManager::slot_count)
      .def_property_readonly("block_tokens", &KvCacheManager::block_tokens)
      .def_property_readonly("committed_bytes", &KvCacheManager::committed_bytes)
      .def_property_readonly("available_handles", &KvCacheManager::available_handles);

  m.def(
      "generate_trace",
      [](double qps, std::size_t count, const std::string& prompt_dist,
         const std::string& decode_dist, Tokens max_context, std::uint64_t seed) {
        TraceGenOptions o;
        o.qps = qps;
        o.count = count;
        o.prompt = LengthDistribution::parse(prompt_dist);
        o.decode = LengthDistribution::parse(decode_dist);
        o.max_context = max_context;
        o.seed = seed;
        return trace_rows(generate_trace(o));
      },
      py::arg("qps"), py::arg("count"), py::arg("prompt_dist") = "fixed:1024",
      py::arg("decode_dist") = "fixed:256", py::arg("max_context") = 0,
      py::arg("seed") = 0);
  m.def("load_trace", [](const std::string& path) { return trace_rows(SimTrace::load(path)); });

  // Runs a simulation. `config` uses the JSON run-config keys; `trace` is a
  // list of (arrival_ms, prompt_tokens, decode_tokens).
  m.def(
      "simulate",
      [](const std::vector<std::tuple<double, Tokens, Tokens>>& trace,
         const std::string& config_json) {
        const RunConfig c = run_config_from_json(Json::parse(config_json));
        const SimMetrics metrics = run_simulation(trace_from_rows(trace), c.sim);
        py::dict d;
        d["max_batch"] = metrics.max_batch;
        d["tokens_per_s"] = metrics.tokens_per_s;
        d["generated_tokens"] = metrics.generated_tokens;
        d["completed_requests"] = metrics.completed_requests;
        d["preemptions"] = metrics.preemptions;
        d["iterations"] = metrics.iterations.size();
        d["total_stall_ms"] =
            static_cast<double>(metrics.total_stall_ns) / static_cast<double>(kNanosPerMilli);
        d["peak_committed_bytes"] = metrics.peak_committed_bytes;
        d["aborted"] = metrics.aborted;
        d["diagnostic"] = metrics.diagnostic;
        py::list stalls;
        for (const auto& it : metrics.iterations) {
          stalls.append(static_cast<double>(it.stall_ns) /
                        static_cast<double>(kNanosPerMilli));
        }
        d["stall_ms"] = stalls;
        return d;
      },
      py::arg("trace"), py::arg("config_json") = "{}");
}
