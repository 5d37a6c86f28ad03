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

#include "commands.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace vattn::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string ms(Nanos ns) {
  return fixed(static_cast<double>(ns) / static_cast<double>(kNanosPerMilli), 6);
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kConfig, "cannot create output directory '" + dir + "'");
  }
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kConfig, "cannot write '" + path.string() + "'");
  return f;
}

SimTrace load_trace(const RunConfig& config) {
  if (!config.trace_path) {
    throw Error(ErrorCode::kConfig, "no trace given (--trace FILE)");
  }
  return SimTrace::load(*config.trace_path);
}

}  // namespace

void cmd_analyze(const AnalyzeOptions& options, std::ostream& out) {
  const std::vector<ModelGeometry> models =
      options.models.empty() ? model_presets() : options.models;
  for (const auto tp : options.tp_degrees) {
    if (tp == 0) throw Error(ErrorCode::kConfig, "tp must be >= 1");
  }

  std::ostringstream blocks, sliced, reservation, bandwidth;
  blocks << "model,tp,page_group,block_tokens\n";
  sliced << "model,tp,page_group,non_sliced_tokens,sliced_tokens\n";
  reservation << "model,tp,max_batch,max_context,per_token_kv_bytes,"
                 "per_request_buffer_bytes,buffer_count,buffer_bytes,total_bytes\n";
  bandwidth << "page_group,tp,latency_us,bandwidth_gbps\n";

  const PageGroupSize two_mb(PageGroupSize::k2M);
  for (const ModelGeometry& base : models) {
    out << base.name << "\n";
    for (const auto tp : options.tp_degrees) {
      const ModelGeometry g = base.with_tp(tp);
      g.validate();
      out << "  TP-" << tp << " block tokens  ";
      bool first = true;
      for (const PageGroupSize t : PageGroupSize::all()) {
        const Tokens b = block_size_tokens(g, t);
        blocks << g.name << ',' << tp << ',' << t.label() << ',' << b << '\n';
        out << (first ? "" : ", ") << t.label() << ": " << b;
        first = false;
      }
      const Tokens ns = block_size_tokens(g, two_mb);
      const Tokens s = sliced_block_size_tokens(g, two_mb);
      sliced << g.name << ',' << tp << ',' << two_mb.label() << ',' << ns << ','
             << s << '\n';
      out << "\n  TP-" << tp << " 2MB non-sliced: " << ns << ", sliced: " << s << "\n";

      const ReservationPlan plan = reservation_plan(g);
      reservation << g.name << ',' << tp << ',' << g.max_batch << ','
                  << g.max_context << ',' << per_token_kv_bytes(g) << ','
                  << per_request_buffer_bytes(g) << ',' << plan.buffer_count << ','
                  << plan.buffer_bytes << ',' << plan.total_bytes << '\n';
      out << "  TP-" << tp << " reservation  B=" << g.max_batch
          << " L=" << g.max_context << "  S=" << per_request_buffer_bytes(g)
          << " B  buffers=" << plan.buffer_count << " x " << plan.buffer_bytes
          << " B  total=" << plan.total_bytes << " B\n";
    }
  }

  out << "allocation bandwidth (GB/s)\n";
  for (const auto tp : options.tp_degrees) {
    out << "  TP-" << tp << "  ";
    bool first = true;
    for (const PageGroupSize t : PageGroupSize::all()) {
      const double bw = options.bandwidth.bandwidth(t, tp) / 1e9;
      bandwidth << t.label() << ',' << tp << ','
                << fixed(options.bandwidth.latency_us(t), 4) << ',' << fixed(bw, 4)
                << '\n';
      out << (first ? "" : ", ") << t.label() << ": " << fixed(bw, 2);
      first = false;
    }
    out << "\n";
  }

  if (options.out_dir) {
    const fs::path dir = ensure_dir(*options.out_dir);
    open_out(dir / "block_sizes.csv") << blocks.str();
    open_out(dir / "sliced.csv") << sliced.str();
    open_out(dir / "reservation.csv") << reservation.str();
    open_out(dir / "bandwidth.csv") << bandwidth.str();
  }
}

void write_iterations_csv(std::ostream& out, const SimMetrics& metrics) {
  out << "index,start_ms,batch_size,prefill_requests,prefill_tokens,decode_tokens,"
         "compute_ms,sync_alloc_ms,background_ms,carried_ms,stall_ms,spike_ms,"
         "cpu_ms,latency_ms,committed_bytes,used_bytes,newly_committed_bytes,"
         "critical_maps,background_maps,preemptions,completed\n";
  for (const auto& it : metrics.iterations) {
    // Allocation stalls on decode-only iterations: the latency spikes that
    // overlapping is meant to hide. Prefill mapping is always synchronous.
    const Nanos spike = it.prefill_requests == 0 ? it.stall_ns : 0;
    out << it.index << ',' << ms(it.start_ns) << ',' << it.batch_size << ','
        << it.prefill_requests << ',' << it.prefill_tokens << ','
        << it.decode_tokens << ',' << ms(it.compute_ns) << ','
        << ms(it.sync_alloc_ns) << ',' << ms(it.background_ns) << ','
        << ms(it.carried_ns) << ',' << ms(it.stall_ns) << ',' << ms(spike) << ','
        << ms(it.cpu_ns) << ',' << ms(it.latency_ns()) << ','
        << it.committed_bytes << ',' << it.used_bytes << ','
        << it.newly_committed_bytes << ',' << it.critical_maps << ','
        << it.background_maps << ',' << it.preemptions << ',' << it.completed
        << '\n';
  }
}

Json summary_json(const SimMetrics& m, const RunConfig& config) {
  auto to_ms = [](Nanos ns) {
    return static_cast<double>(ns) / static_cast<double>(kNanosPerMilli);
  };
  Json metrics{
      {"iterations", m.iterations.size()},
      {"max_batch", m.max_batch},
      {"p50_iteration_ms", m.p50_iteration_ms},
      {"p99_iteration_ms", m.p99_iteration_ms},
      {"tokens_per_s", m.tokens_per_s},
      {"generated_tokens", m.generated_tokens},
      {"completed_requests", m.completed_requests},
      {"preemptions", m.preemptions},
      {"makespan_ms", to_ms(m.makespan_ns)},
      {"init_ms", to_ms(m.init_ns)},
      {"total_stall_ms", to_ms(m.total_stall_ns)},
      {"total_sync_alloc_ms", to_ms(m.total_sync_alloc_ns)},
      {"total_background_ms", to_ms(m.total_background_ns)},
      {"peak_committed_bytes", m.peak_committed_bytes},
      {"max_waste_bytes", m.max_waste_bytes},
      {"mean_waste_bytes", m.mean_waste_bytes},
      {"aborted", m.aborted},
  };
  if (m.aborted) metrics["diagnostic"] = m.diagnostic;
  return Json{{"config", run_config_to_json(config)}, {"metrics", metrics}};
}

int cmd_simulate(const RunConfig& config, std::ostream& out) {
  const SimTrace trace = load_trace(config);
  const SimMetrics metrics = run_simulation(trace, config.sim);
  const Json summary = summary_json(metrics, config);
  if (config.out_dir) {
    const fs::path dir = ensure_dir(*config.out_dir);
    auto csv = open_out(dir / "iterations.csv");
    write_iterations_csv(csv, metrics);
    open_out(dir / "summary.json") << summary.dump(2) << '\n';
    out << "wrote " << (dir / "iterations.csv").string() << " and "
        << (dir / "summary.json").string() << "\n";
  } else {
    out << summary.dump(2) << '\n';
  }
  if (metrics.aborted) {
    out << "simulation aborted: " << metrics.diagnostic << "\n";
    return kExitAborted;
  }
  return kExitOk;
}

int cmd_compare(const std::vector<RunConfig>& configs, std::ostream& out) {
  if (configs.size() < 2) {
    throw Error(ErrorCode::kConfig, "compare needs at least two configurations");
  }
  const SimTrace trace = load_trace(configs.front());
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].trace_path != configs.front().trace_path &&
        load_trace(configs[i]) != trace) {
      throw Error(ErrorCode::kConfig,
                  "configs 1 and " + std::to_string(i + 1) + " use different traces");
    }
  }

  std::ostringstream csv;
  csv << "config,allocator,page_group,mode,max_batch,mean_waste_bytes,"
         "max_waste_bytes,peak_committed_bytes,total_stall_ms,total_sync_alloc_ms,"
         "tokens_per_s,p50_iteration_ms,p99_iteration_ms,preemptions,completed,"
         "aborted\n";
  struct Row {
    const RunConfig* config;
    SimMetrics metrics;
  };
  std::vector<Row> rows;
  bool any_aborted = false;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const RunConfig& c = configs[i];
    Row row{&c, run_simulation(trace, c.sim)};
    const SimMetrics& m = row.metrics;
    any_aborted = any_aborted || m.aborted;
    csv << i + 1 << ',' << allocator_name(c.sim.allocator) << ','
        << c.sim.page_group.label() << ',' << mode_name(c.sim.mode) << ','
        << m.max_batch << ',' << fixed(m.mean_waste_bytes, 1) << ','
        << m.max_waste_bytes << ',' << m.peak_committed_bytes << ','
        << ms(m.total_stall_ns) << ',' << ms(m.total_sync_alloc_ns) << ','
        << fixed(m.tokens_per_s, 3) << ',' << fixed(m.p50_iteration_ms, 6) << ','
        << fixed(m.p99_iteration_ms, 6) << ',' << m.preemptions << ','
        << m.completed_requests << ',' << (m.aborted ? "true" : "false") << '\n';
    rows.push_back(std::move(row));
  }
  out << csv.str();

  // Smaller page-groups must never admit fewer requests. Compare vAttention
  // runs that differ only in page-group size.
  std::vector<std::string> violations;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const SimConfig& x = rows[a].config->sim;
      const SimConfig& y = rows[b].config->sim;
      if (x.allocator != AllocatorKind::kVAttention ||
          y.allocator != AllocatorKind::kVAttention || x.mode != y.mode ||
          x.pool_capacity != y.pool_capacity || !(x.geometry == y.geometry) ||
          !(x.page_group < y.page_group)) {
        continue;
      }
      if (rows[a].metrics.max_batch < rows[b].metrics.max_batch) {
        violations.push_back(
            "config " + std::to_string(a + 1) + " (" + x.page_group.label() +
            ") max_batch " + std::to_string(rows[a].metrics.max_batch) +
            " < config " + std::to_string(b + 1) + " (" + y.page_group.label() +
            ") max_batch " + std::to_string(rows[b].metrics.max_batch));
      }
    }
  }
  if (violations.empty()) {
    out << "monotonicity: ok\n";
  } else {
    for (const auto& v : violations) out << "monotonicity violation: " << v << "\n";
  }

  if (configs.front().out_dir) {
    const fs::path dir = ensure_dir(*configs.front().out_dir);
    open_out(dir / "compare.csv") << csv.str();
  }
  return any_aborted ? kExitAborted : kExitOk;
}

void cmd_trace_gen(const TraceGenOptions& options,
                   const std::optional<std::string>& path, std::ostream& out) {
  const SimTrace trace = generate_trace(options);
  if (path) {
    const fs::path p(*path);
    if (p.has_parent_path()) ensure_dir(p.parent_path().string());
    auto f = open_out(p);
    trace.write_csv(f);
    out << "wrote " << trace.size() << " requests to " << *path << "\n";
  } else {
    trace.write_csv(out);
  }
}

namespace {

// Flags shared by simulate and compare. Unset flags leave the config alone.
struct RunFlags {
  std::vector<std::string> config_files;
  std::optional<std::string> model;
  std::optional<std::uint64_t> tp;
  std::optional<std::uint64_t> max_batch;
  std::optional<std::uint64_t> max_context;
  std::optional<std::string> page_group;
  std::optional<std::string> allocator;
  std::optional<std::string> mode;
  std::optional<double> pool_gb;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> max_preemptions;
  std::optional<std::string> trace;
  std::optional<std::string> out;

  void add_to(CLI::App* cmd, bool multi_config) {
    cmd->add_option("--config", config_files,
                    multi_config ? "JSON run config (repeatable)" : "JSON run config");
    cmd->add_option("--model", model, "Preset name or geometry JSON file");
    cmd->add_option("--tp", tp, "Tensor-parallel degree");
    cmd->add_option("--max-batch", max_batch, "Maximum batch size B");
    cmd->add_option("--max-context", max_context, "Maximum context length L");
    cmd->add_option("--page-group", page_group, "64K, 128K, 256K or 2M");
    cmd->add_option("--allocator", allocator, "vattention, paged or static");
    cmd->add_option("--mode", mode, "sync or overlapped");
    cmd->add_option("--pool-gb", pool_gb, "Physical KV pool per worker, GiB");
    cmd->add_option("--seed", seed, "Seed recorded with the run");
    cmd->add_option("--max-preemptions", max_preemptions, "Abort after this many");
    cmd->add_option("--trace", trace, "Trace CSV");
    cmd->add_option("--out", out, "Output directory");
  }

  void apply(RunConfig& c) const {
    SimConfig& s = c.sim;
    if (model) s.geometry = resolve_model(*model);
    if (tp) s.geometry.tp_degree = *tp;
    if (max_batch) s.geometry.max_batch = *max_batch;
    if (max_context) s.geometry.max_context = *max_context;
    s.geometry.validate();
    if (page_group) s.page_group = PageGroupSize::parse(*page_group);
    if (allocator) s.allocator = parse_allocator(*allocator);
    if (mode) s.mode = parse_mode(*mode);
    if (pool_gb) {
      if (!(*pool_gb > 0.0)) throw Error(ErrorCode::kConfig, "--pool-gb must be > 0");
      s.pool_capacity =
          static_cast<Bytes>(std::llround(*pool_gb * static_cast<double>(kGiB)));
    }
    if (seed) c.seed = *seed;
    if (max_preemptions) s.max_preemptions = *max_preemptions;
    if (trace) c.trace_path = *trace;
    if (out) c.out_dir = *out;
  }

  RunConfig build(const std::string& file) const {
    RunConfig c = file.empty() ? default_run_config() : load_run_config(file);
    apply(c);
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"KV-cache memory management simulator", "vattn"};
  app.require_subcommand(1);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Block sizes, reservation plan, bandwidth");
  std::optional<std::string> an_model;
  std::vector<std::uint64_t> an_tp;
  std::optional<std::uint64_t> an_batch, an_context;
  std::optional<std::string> an_config, an_out;
  analyze->add_option("--model", an_model, "Preset or geometry JSON (default: all presets)");
  analyze->add_option("--tp", an_tp, "Tensor-parallel degrees (default: 1 2)");
  analyze->add_option("--max-batch", an_batch, "Override B for the reservation plan");
  analyze->add_option("--max-context", an_context, "Override L");
  analyze->add_option("--config", an_config, "JSON run config (bandwidth calibration)");
  analyze->add_option("--out", an_out, "Directory for the CSV tables");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Replay a trace through one allocator");
  RunFlags sim_flags;
  sim_flags.add_to(simulate, false);

  // compare
  auto* compare = app.add_subcommand("compare", "Run several configs on one trace");
  RunFlags cmp_flags;
  cmp_flags.add_to(compare, true);
  std::optional<std::string> cmp_allocators, cmp_groups, cmp_modes;
  compare->add_option("--allocators", cmp_allocators, "Comma-separated allocators");
  compare->add_option("--page-groups", cmp_groups, "Comma-separated page-group sizes");
  compare->add_option("--modes", cmp_modes, "Comma-separated modes");

  // trace-gen
  auto* trace_gen = app.add_subcommand("trace-gen", "Generate a Poisson-arrival trace");
  TraceGenOptions tg;
  std::string tg_prompt = "fixed:1024", tg_decode = "fixed:256";
  std::optional<std::string> tg_out;
  trace_gen->add_option("--qps", tg.qps, "Mean arrivals per second")->required();
  trace_gen->add_option("--count", tg.count, "Number of requests")->required();
  trace_gen->add_option("--prompt-dist", tg_prompt, "fixed:N | uniform:LO:HI | lognormal:MEDIAN:SIGMA");
  trace_gen->add_option("--decode-dist", tg_decode, "Same forms as --prompt-dist");
  trace_gen->add_option("--max-context", tg.max_context, "Clamp prompt + decode to L");
  trace_gen->add_option("--seed", tg.seed, "RNG seed (default 0)");
  trace_gen->add_option("--out", tg_out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*analyze) {
      AnalyzeOptions options;
      if (an_config) options.bandwidth = load_run_config(*an_config).bandwidth;
      options.models = an_model ? std::vector<ModelGeometry>{resolve_model(*an_model)}
                                : model_presets();
      for (auto& g : options.models) {
        if (an_batch) g.max_batch = *an_batch;
        if (an_context) g.max_context = *an_context;
      }
      if (!an_tp.empty()) options.tp_degrees = an_tp;
      options.out_dir = an_out;
      cmd_analyze(options, out);
      return kExitOk;
    }
    if (*simulate) {
      if (sim_flags.config_files.size() > 1) {
        throw Error(ErrorCode::kConfig, "simulate takes one --config");
      }
      const RunConfig config = sim_flags.build(
          sim_flags.config_files.empty() ? std::string() : sim_flags.config_files.front());
      return cmd_simulate(config, out);
    }
    if (*compare) {
      std::vector<RunConfig> configs;
      const bool product = cmp_allocators || cmp_groups || cmp_modes;
      if (product) {
        if (cmp_flags.config_files.size() > 1) {
          throw Error(ErrorCode::kConfig,
                      "use at most one --config together with --allocators/--page-groups/--modes");
        }
        const RunConfig base = cmp_flags.build(
            cmp_flags.config_files.empty() ? std::string() : cmp_flags.config_files.front());
        const auto allocators = cmp_allocators
            ? split_list(*cmp_allocators)
            : std::vector<std::string>{std::string(allocator_name(base.sim.allocator))};
        const auto groups = cmp_groups
            ? split_list(*cmp_groups)
            : std::vector<std::string>{base.sim.page_group.label()};
        const auto modes = cmp_modes
            ? split_list(*cmp_modes)
            : std::vector<std::string>{std::string(mode_name(base.sim.mode))};
        for (const auto& a : allocators) {
          for (const auto& g : groups) {
            for (const auto& m : modes) {
              RunConfig c = base;
              c.sim.allocator = parse_allocator(a);
              c.sim.page_group = PageGroupSize::parse(g);
              c.sim.mode = parse_mode(m);
              configs.push_back(std::move(c));
            }
          }
        }
      } else {
        for (const auto& f : cmp_flags.config_files) configs.push_back(cmp_flags.build(f));
      }
      return cmd_compare(configs, out);
    }
    if (*trace_gen) {
      tg.prompt = LengthDistribution::parse(tg_prompt);
      tg.decode = LengthDistribution::parse(tg_decode);
      cmd_trace_gen(tg, tg_out, out);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("vattn");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace vattn::cli
