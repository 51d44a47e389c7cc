#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isovisor/accounting.hpp"
#include "isovisor/trace.hpp"

namespace isovisor::replay {

/// How invocations are packed into runtime workers.
enum class Policy {
    per_invocation,  ///< one function, one invocation at a time (container per call)
    per_function,    ///< one function, many concurrent invocations
    per_tenant,      ///< any function of one tenant, many concurrent invocations
};

std::string_view to_string(Policy p) noexcept;
std::optional<Policy> parse_policy(std::string_view s) noexcept;

struct CostModel {
    double runtime_cold_start_ms = 200;
    double isolate_cold_start_us = 500;
    double per_worker_overhead_mb = 30;
    double per_isolate_overhead_mb = 1;
};

struct ReplayOptions {
    Policy policy = Policy::per_tenant;
    CostModel cost;
    std::int64_t global_cap_bytes = 16 * kGiB;
    /// Memory limit of a consolidating (per-function / per-tenant) worker.
    std::int64_t worker_cap_bytes = 2 * kGiB;
    /// Idle time after which a worker is torn down.
    double keep_alive_ms = 60'000;
    /// Idle time after which an isolate inside a worker is torn down.
    double isolate_ttl_ms = 10'000;
    int max_contexts = 4;
};

struct LiveOptions {
    /// Touch the emulated allocations instead of only accounting for them.
    bool materialize = true;
    /// Delay before the first arrival, absorbing thread start-up.
    double lead_ms = 50;
};

struct EventRecord {
    std::size_t index = 0;
    double arrival_ms = 0;
    double start_ms = 0;
    double finish_ms = 0;
    double latency_ms = 0;
    bool rejected = false;
    bool runtime_cold = false;
    bool isolate_cold = false;
    std::uint64_t worker_id = 0;
};

struct ReplayReport {
    Policy policy = Policy::per_tenant;
    std::string mode;
    std::vector<EventRecord> records;
    /// Max committed bytes within each 1 s bucket.
    std::vector<std::int64_t> memory_timeline;
    /// Max live workers within each 1 s bucket.
    std::vector<int> worker_timeline;
    std::vector<std::size_t> rejected;
    std::uint64_t workers_created = 0;
    std::uint64_t runtime_cold_starts = 0;
    std::uint64_t isolate_cold_starts = 0;
    std::int64_t peak_memory_bytes = 0;
};

struct Summary {
    std::string policy;
    std::string mode;
    std::size_t events = 0;
    std::size_t completed = 0;
    std::size_t rejected = 0;
    std::uint64_t workers_created = 0;
    std::uint64_t runtime_cold_starts = 0;
    std::uint64_t isolate_cold_starts = 0;
    double p50_ms = 0;
    double p90_ms = 0;
    double p99_ms = 0;
    double mean_memory_bytes = 0;
    std::int64_t max_memory_bytes = 0;
    double mean_active_workers = 0;
    int max_active_workers = 0;
};

/// Discrete-event replay against the cost model. Deterministic.
ReplayReport replay_sim(std::span<const trace::TraceEvent> events, const ReplayOptions& options);

/// Real-time replay: every worker is a live runtime running the synthetic
/// emulated function; runtime boot is emulated by waiting the cold-start cost.
ReplayReport replay_live(std::span<const trace::TraceEvent> events, const ReplayOptions& options,
                         const LiveOptions& live = {});

/// Nearest-rank percentile of `values` (0 when empty).
double percentile(std::vector<double> values, double p);

Summary compute_metrics(const ReplayReport& report);

/// Writes memory_timeline.csv, latency_cdf.csv and summary.json into `dir`.
void write_report(const std::filesystem::path& dir, const ReplayReport& report, const Summary& summary);
std::string summary_json(const Summary& s);

}  // namespace isovisor::replay
