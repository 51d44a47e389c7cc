#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace isovisor {

struct BenchOptions {
    int iterations = 1000;
    /// Isolates kept alive while isolate creation is timed.
    int concurrent_isolates = 0;
    std::uint64_t seed = 1;
};

struct BenchRow {
    std::string name;
    std::vector<double> samples_us;
    double median_us = 0;
    double p99_us = 0;
};

/// Cold/warm start micro-benchmark on a no-op synthetic function. Rows, in
/// order: isolate_cold_create, warm_poll_hit, cold_invocation, warm_invocation.
std::vector<BenchRow> run_bench(const BenchOptions& options);

/// Tab-free CSV: name,iterations,median_us,p99_us
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace isovisor
