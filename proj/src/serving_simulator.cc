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

#include "vattn/serving_simulator.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <memory>

namespace vattn {

void IterationModel::validate() const {
  for (double v : {base_ms, prefill_ms_per_token, decode_ms_per_token}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kConfig, "iteration model constants must be >= 0");
    }
  }
}

double IterationModel::compute_ms(Tokens prefill_tokens,
                                  Tokens decode_tokens) const {
  return base_ms + prefill_ms_per_token * static_cast<double>(prefill_tokens) +
         decode_ms_per_token * static_cast<double>(decode_tokens);
}

Nanos IterationModel::compute_ns(Tokens prefill_tokens,
                                 Tokens decode_tokens) const {
  return std::llround(compute_ms(prefill_tokens, decode_tokens) *
                      static_cast<double>(kNanosPerMilli));
}

double calibrated_block_table_ns_per_entry(const IterationModel& model) {
  constexpr Tokens kBatch = 256;
  constexpr Tokens kContext = 1024;
  constexpr Tokens kBlock = 16;
  const double iteration_ns =
      model.compute_ms(0, kBatch) * static_cast<double>(kNanosPerMilli);
  return 0.10 * iteration_ns / static_cast<double>(kBatch * (kContext / kBlock));
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view allocator_name(AllocatorKind kind) {
  switch (kind) {
    case AllocatorKind::kVAttention: return "vattention";
    case AllocatorKind::kPaged: return "paged";
    case AllocatorKind::kStatic: return "static";
  }
  return "?";
}

AllocatorKind parse_allocator(std::string_view name) {
  const std::string n = lower(name);
  if (n == "vattention") return AllocatorKind::kVAttention;
  if (n == "paged") return AllocatorKind::kPaged;
  if (n == "static") return AllocatorKind::kStatic;
  throw Error(ErrorCode::kConfig, "unknown allocator '" + std::string(name) +
                                      "' (vattention, paged, static)");
}

std::string_view mode_name(AllocMode mode) {
  return mode == AllocMode::kSync ? "sync" : "overlapped";
}

AllocMode parse_mode(std::string_view name) {
  const std::string n = lower(name);
  if (n == "sync") return AllocMode::kSync;
  if (n == "overlapped" || n == "overlap") return AllocMode::kOverlapped;
  throw Error(ErrorCode::kConfig,
              "unknown mode '" + std::string(name) + "' (sync, overlapped)");
}

namespace {

struct StepOutcome {
  bool ok = true;
  Nanos critical_ns = 0;
  std::uint64_t maps = 0;
};

// What the loop needs from an allocator.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual bool can_admit(std::span<const RunningRequest> running,
                         Tokens prompt) const = 0;
  virtual int admit() = 0;
  virtual void release(int slot) = 0;
  virtual StepOutcome step(std::span<const RunningRequest> running) = 0;
  // Between iterations; `running` holds next-step lengths.
  virtual void background(std::span<const RunningRequest> /*running*/) {}
  virtual Nanos cpu_overhead(std::span<const RunningRequest> /*running*/) const {
    return 0;
  }
  virtual Bytes committed_bytes() const = 0;
  // Monotone totals.
  virtual Bytes cumulative_committed_bytes() const = 0;
  virtual Nanos cumulative_background_ns() const { return 0; }
  virtual std::uint64_t cumulative_background_maps() const { return 0; }
  virtual Nanos init_ns() const { return 0; }
  virtual void fill_view(QuiescentView& view) const = 0;
};

class VAttentionBackend final : public Backend {
 public:
  VAttentionBackend(const ModelGeometry& g, const ManagerConfig& config)
      : manager_(g, config), lens_(manager_.slot_count(), 0) {}

  bool can_admit(std::span<const RunningRequest> running,
                 Tokens prompt) const override {
    if (manager_.active_count() >= manager_.slot_count()) return false;
    std::uint64_t rows = manager_.groups_for(prompt);
    for (const auto& r : running) rows += manager_.groups_for(r.seq_len);
    return rows * manager_.buffer_count() <= manager_.total_handles();
  }
  int admit() override { return manager_.alloc_reqid(); }
  void release(int slot) override { manager_.free_reqid(slot); }

  StepOutcome step(std::span<const RunningRequest> running) override {
    fill_lens(running);
    const StepResult r = manager_.step(lens_);
    return {r.ok, r.critical_ns, r.map_calls};
  }
  void background(std::span<const RunningRequest> running) override {
    fill_lens(running);
    manager_.run_background(lens_);
  }
  Bytes committed_bytes() const override { return manager_.committed_bytes(); }
  Bytes cumulative_committed_bytes() const override {
    return manager_.total_mapped_bytes();
  }
  Nanos cumulative_background_ns() const override {
    return manager_.counters().background_ns;
  }
  std::uint64_t cumulative_background_maps() const override {
    return manager_.counters().background_maps;
  }
  Nanos init_ns() const override { return manager_.counters().init_ns; }
  void fill_view(QuiescentView& view) const override { view.manager = &manager_; }

 private:
  void fill_lens(std::span<const RunningRequest> running) {
    std::fill(lens_.begin(), lens_.end(), 0);
    for (const auto& r : running) lens_[static_cast<std::size_t>(r.slot)] = r.seq_len;
  }

  KvCacheManager manager_;
  std::vector<Tokens> lens_;
};

class PagedBackend final : public Backend {
 public:
  PagedBackend(const ModelGeometry& g, Bytes capacity, Tokens block_tokens,
               double ns_per_entry)
      : paged_(g, capacity, block_tokens, g.max_batch), ns_per_entry_(ns_per_entry) {}

  bool can_admit(std::span<const RunningRequest> running,
                 Tokens prompt) const override {
    if (running.size() >= paged_.slot_count()) return false;
    std::uint64_t blocks = paged_.blocks_for(prompt);
    for (const auto& r : running) blocks += paged_.blocks_for(r.seq_len);
    return blocks <= paged_.pool().total_blocks();
  }
  int admit() override {
    const auto slot = paged_.add_request();
    if (!slot) throw Error(ErrorCode::kBatchFull, "no paged request slot free");
    return *slot;
  }
  void release(int slot) override { paged_.free_request(slot); }

  StepOutcome step(std::span<const RunningRequest> running) override {
    // Blocks come out of a pre-allocated pool: no mapping latency.
    for (const auto& r : running) {
      if (!paged_.ensure_capacity(r.slot, r.seq_len)) return {false, 0, 0};
    }
    return {};
  }
  Nanos cpu_overhead(std::span<const RunningRequest> running) const override {
    lens_.clear();
    for (const auto& r : running) lens_.push_back(r.seq_len);
    return block_table_prep_cost(lens_, paged_.block_size_tokens(), ns_per_entry_);
  }
  Bytes committed_bytes() const override { return paged_.committed_bytes(); }
  Bytes cumulative_committed_bytes() const override {
    return paged_.total_blocks_allocated() * paged_.block_footprint();
  }
  void fill_view(QuiescentView& view) const override { view.paged = &paged_; }

 private:
  PagedAllocator paged_;
  double ns_per_entry_;
  mutable std::vector<Tokens> lens_;
};

class StaticBackend final : public Backend {
 public:
  StaticBackend(const ModelGeometry& g, Bytes capacity) : static_(g, capacity) {}

  bool can_admit(std::span<const RunningRequest> running,
                 Tokens /*prompt*/) const override {
    return running.size() < static_.max_requests();
  }
  int admit() override {
    const auto slot = static_.reserve();
    if (!slot) throw Error(ErrorCode::kBatchFull, "no static request slot free");
    ++admissions_;
    return *slot;
  }
  void release(int slot) override { static_.release(slot); }
  StepOutcome step(std::span<const RunningRequest>) override { return {}; }
  Bytes committed_bytes() const override { return static_.committed_bytes(); }
  Bytes cumulative_committed_bytes() const override {
    return admissions_ * static_.commitment_bytes();
  }
  void fill_view(QuiescentView& view) const override { view.static_alloc = &static_; }

 private:
  StaticAllocator static_;
  std::uint64_t admissions_ = 0;
};

std::unique_ptr<Backend> make_backend(const SimConfig& config) {
  const ModelGeometry& g = config.geometry;
  switch (config.allocator) {
    case AllocatorKind::kVAttention: {
      ManagerConfig m = config.manager;
      m.page_group = config.page_group;
      m.pool_capacity = config.pool_capacity;
      m.overlap = config.mode == AllocMode::kOverlapped;
      return std::make_unique<VAttentionBackend>(g, m);
    }
    case AllocatorKind::kPaged: {
      const Tokens block = config.paged_block_tokens != 0
                               ? config.paged_block_tokens
                               : block_size_tokens(g, config.page_group);
      const double c_bt = config.block_table_ns_per_entry.value_or(
          calibrated_block_table_ns_per_entry(config.iteration));
      if (!(c_bt >= 0.0) || !std::isfinite(c_bt)) {
        throw Error(ErrorCode::kConfig, "block_table_ns_per_entry must be >= 0");
      }
      return std::make_unique<PagedBackend>(g, config.pool_capacity, block, c_bt);
    }
    case AllocatorKind::kStatic:
      return std::make_unique<StaticBackend>(g, config.pool_capacity);
  }
  throw Error(ErrorCode::kConfig, "unknown allocator");
}

double percentile_ms(std::vector<Nanos> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  // Nearest rank.
  const double rank = std::ceil(p * static_cast<double>(values.size()));
  const std::size_t idx =
      rank < 1.0 ? 0 : std::min(values.size() - 1, static_cast<std::size_t>(rank) - 1);
  return static_cast<double>(values[idx]) / static_cast<double>(kNanosPerMilli);
}

Nanos to_nanos(double ms) {
  return std::llround(ms * static_cast<double>(kNanosPerMilli));
}

void finalize(SimMetrics& m) {
  std::vector<Nanos> latencies;
  latencies.reserve(m.iterations.size());
  double waste_sum = 0.0;
  for (const auto& it : m.iterations) {
    latencies.push_back(it.latency_ns());
    m.max_batch = std::max(m.max_batch, it.batch_size);
    m.total_stall_ns += it.stall_ns;
    m.total_sync_alloc_ns += it.sync_alloc_ns;
    m.total_background_ns += it.background_ns;
    m.peak_committed_bytes = std::max(m.peak_committed_bytes, it.committed_bytes);
    const Bytes waste = it.committed_bytes - it.used_bytes;
    m.max_waste_bytes = std::max(m.max_waste_bytes, waste);
    waste_sum += static_cast<double>(waste);
  }
  if (!m.iterations.empty()) {
    m.mean_waste_bytes = waste_sum / static_cast<double>(m.iterations.size());
  }
  m.p50_iteration_ms = percentile_ms(latencies, 0.50);
  m.p99_iteration_ms = percentile_ms(latencies, 0.99);
  if (m.makespan_ns > 0) {
    m.tokens_per_s = static_cast<double>(m.generated_tokens) /
                     (static_cast<double>(m.makespan_ns) / 1e9);
  }
}

}  // namespace

SimMetrics run_simulation(const SimTrace& trace, const SimConfig& config,
                          const QuiescentObserver& observer) {
  config.geometry.validate();
  config.iteration.validate();
  trace.validate(config.geometry.max_context);
  if (config.geometry.max_batch == 0 || config.geometry.max_context == 0) {
    throw Error(ErrorCode::kConfig, "simulation needs max_batch and max_context >= 1");
  }

  SimMetrics metrics;
  if (trace.empty()) return metrics;

  std::unique_ptr<Backend> backend = make_backend(config);
  metrics.init_ns = backend->init_ns();
  const Bytes token_bytes = per_token_kv_bytes(config.geometry);

  std::vector<Nanos> arrivals;
  arrivals.reserve(trace.size());
  for (const auto& r : trace.records) arrivals.push_back(to_nanos(r.arrival_ms));

  Nanos clock = 0;
  std::size_t next_arrival = 0;
  std::deque<std::size_t> waiting;
  // Kept in admission order, so back() is the most recent admission.
  std::vector<RunningRequest> running;
  Nanos carried = 0;
  Bytes last_cumulative = backend->cumulative_committed_bytes();
  std::uint64_t iteration = 0;

  auto abort_run = [&](std::string why) {
    metrics.aborted = true;
    metrics.diagnostic = std::move(why);
  };

  while (true) {
    while (next_arrival < trace.size() && arrivals[next_arrival] <= clock) {
      waiting.push_back(next_arrival++);
    }
    if (running.empty() && waiting.empty()) {
      if (next_arrival == trace.size()) break;
      // Leftover background work drains while the engine idles.
      const Nanos idle = std::max<Nanos>(0, arrivals[next_arrival] - clock);
      carried = std::max<Nanos>(0, carried - idle);
      clock = std::max(clock, arrivals[next_arrival]);
      continue;
    }
    if (config.max_iterations != 0 && iteration >= config.max_iterations) {
      abort_run("iteration cap of " + std::to_string(config.max_iterations) +
                " reached");
      break;
    }

    // Admit first-come first-served; stop at the first request that does
    // not fit so later arrivals cannot overtake it.
    while (!waiting.empty()) {
      const TraceRecord& rec = trace.records[waiting.front()];
      if (!backend->can_admit(running, rec.prompt_tokens)) break;
      RunningRequest r;
      r.trace_index = waiting.front();
      r.slot = backend->admit();
      r.seq_len = rec.prompt_tokens;
      running.push_back(r);
      waiting.pop_front();
    }
    if (running.empty()) {
      abort_run("request " + std::to_string(waiting.front() + 1) +
                " cannot be admitted into an empty batch");
      break;
    }

    const Nanos bg_before = backend->cumulative_background_ns();
    const std::uint64_t bg_maps_before = backend->cumulative_background_maps();

    IterationRecord rec;
    StepOutcome step;
    while (true) {
      step = backend->step(running);
      rec.sync_alloc_ns += step.critical_ns;
      rec.critical_maps += step.maps;
      if (step.ok) break;
      if (running.size() == 1) {
        abort_run("request " + std::to_string(running.front().trace_index + 1) +
                  " needs more KV memory than the pool holds");
        break;
      }
      const RunningRequest victim = running.back();
      running.pop_back();
      backend->release(victim.slot);
      waiting.push_front(victim.trace_index);
      ++rec.preemptions;
      if (++metrics.preemptions > config.max_preemptions) {
        abort_run("preemption cap of " + std::to_string(config.max_preemptions) +
                  " exceeded");
        break;
      }
    }
    if (metrics.aborted) break;

    if (observer) {
      QuiescentView view;
      view.iteration = iteration;
      view.running = running;
      backend->fill_view(view);
      observer(view);
    }

    rec.index = iteration;
    rec.start_ns = clock;
    rec.batch_size = running.size();
    for (const auto& r : running) {
      if (r.prefill) {
        ++rec.prefill_requests;
        rec.prefill_tokens += r.seq_len;
      } else {
        ++rec.decode_tokens;
      }
      rec.used_bytes += r.seq_len * token_bytes;
    }
    rec.compute_ns = config.iteration.compute_ns(rec.prefill_tokens, rec.decode_tokens);
    rec.carried_ns = carried;
    rec.stall_ns = rec.sync_alloc_ns + carried;
    rec.cpu_ns = backend->cpu_overhead(running);
    rec.committed_bytes = backend->committed_bytes();
    clock += rec.latency_ns();

    // Retire: every request in the batch produces one token.
    std::vector<RunningRequest> still_running;
    still_running.reserve(running.size());
    for (auto& r : running) {
      ++r.generated;
      r.prefill = false;
      const Tokens want = trace.records[r.trace_index].decode_tokens;
      if (r.generated >= want) {
        backend->release(r.slot);
        ++rec.completed;
        ++metrics.completed_requests;
        metrics.generated_tokens += want;
      } else {
        ++r.seq_len;
        still_running.push_back(r);
      }
    }
    running.swap(still_running);

    // Background work for the next iteration runs under this compute.
    backend->background(running);
    rec.background_ns = backend->cumulative_background_ns() - bg_before;
    rec.background_maps = backend->cumulative_background_maps() - bg_maps_before;
    carried = std::max<Nanos>(0, rec.background_ns - rec.compute_ns);

    const Bytes cumulative = backend->cumulative_committed_bytes();
    rec.newly_committed_bytes = cumulative - last_cumulative;
    last_cumulative = cumulative;

    metrics.iterations.push_back(rec);
    ++iteration;
  }

  metrics.makespan_ns = clock;
  finalize(metrics);
  return metrics;
}

std::vector<double> measure_alloc_rate(const SimMetrics& metrics,
                                       double window_ms) {
  if (!(window_ms > 0.0) || !std::isfinite(window_ms)) {
    throw Error(ErrorCode::kConfig, "window_ms must be > 0");
  }
  if (metrics.iterations.empty()) return {};
  const Nanos window = std::max<Nanos>(1, to_nanos(window_ms));
  const Nanos span = std::max<Nanos>(metrics.makespan_ns, 1);
  const std::size_t count = static_cast<std::size_t>((span + window - 1) / window);
  std::vector<double> bytes(count, 0.0);
  for (const auto& it : metrics.iterations) {
    const std::size_t w =
        std::min(count - 1, static_cast<std::size_t>(it.start_ns / window));
    bytes[w] += static_cast<double>(it.newly_committed_bytes);
  }
  const double seconds = static_cast<double>(window) / 1e9;
  for (double& b : bytes) b /= seconds;
  return bytes;
}

double peak_alloc_rate(const SimMetrics& metrics, double window_ms) {
  const auto rates = measure_alloc_rate(metrics, window_ms);
  return rates.empty() ? 0.0 : *std::max_element(rates.begin(), rates.end());
}

std::vector<std::pair<PageGroupSize, std::size_t>> max_batch_sweep(
    const SimTrace& trace, const SimConfig& config,
    std::span<const PageGroupSize> sizes) {
  std::vector<std::pair<PageGroupSize, std::size_t>> out;
  out.reserve(sizes.size());
  for (const PageGroupSize t : sizes) {
    SimConfig c = config;
    c.page_group = t;
    out.emplace_back(t, run_simulation(trace, c).max_batch);
  }
  return out;
}

}  // namespace vattn
