#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace isovisor::trace {

/// Header line of the internal trace CSV, bit-exact.
inline constexpr std::string_view kHeader = "t_ms,tenant_id,function_id,duration_ms,memory_mb";

struct TraceEvent {
    double t_ms = 0;
    std::string tenant_id;
    std::string function_id;
    double duration_ms = 0;
    double memory_mb = 0;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Parses and validates a trace; the result is sorted by arrival (stable).
/// Throws ParseError at the first offending line.
std::vector<TraceEvent> parse_trace(std::istream& in);
std::vector<TraceEvent> parse_trace(const std::filesystem::path& path);

void write_trace(std::ostream& out, std::span<const TraceEvent> events);
void write_trace(const std::filesystem::path& path, std::span<const TraceEvent> events);

struct SynthParams {
    int tenants = 8;
    int funcs_per_tenant = 4;
    /// Mean invocations per second of each function.
    double rate = 0.05;
    double duration_s = 600;
    std::uint64_t seed = 1;
    /// Spread of one burst: each function of the tenant fires once within it.
    double burst_spread_ms = 1000;
};

/// Seeded bursty workload. Each tenant fires bursts as a Poisson process
/// with rate `rate`; a burst invokes every function of the tenant once at a
/// uniform offset inside `burst_spread_ms`. Function memory is fixed per
/// function in [120, 170] MB; durations are drawn per event in [100, 3000] ms.
std::vector<TraceEvent> synthesize_trace(const SynthParams& params);

/// Inputs of the public Azure Functions 2019 dataset (one day):
///   invocations_per_function_md.anon.dNN.csv
///     HashOwner,HashApp,HashFunction,Trigger,1,2,...,1440  (per-minute counts)
///   function_durations_percentiles.anon.dNN.csv
///     HashOwner,HashApp,HashFunction,Average,Count,Minimum,Maximum,...
///   app_memory_percentiles.anon.dNN.csv
///     HashOwner,HashApp,SampleCount,AverageAllocatedMb,...
struct AzureInputs {
    std::filesystem::path invocations;
    std::filesystem::path durations;
    std::filesystem::path memory;
    /// First minute of the window (1-based, as in the dataset columns).
    int start_minute = 1;
    int minutes = 10;
};

/// Maps the Azure schema onto trace events: n invocations of a function in
/// minute m are spread evenly over that minute; duration is the function's
/// average duration; memory is the owning app's average allocated memory
/// divided among the app's functions seen in the window (at least 1 MB);
/// tenant is HashOwner. Functions without duration or memory data are skipped.
std::vector<TraceEvent> convert_azure(const AzureInputs& inputs);

}  // namespace isovisor::trace
