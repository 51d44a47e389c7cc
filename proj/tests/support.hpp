#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>

#include "isovisor/isolate.hpp"

namespace isovisor::testing {

/// Hand-advanced clock for TTL tests.
class ManualClock {
public:
    ManualClock() : now_(std::chrono::steady_clock::now().time_since_epoch().count()) {}

    SteadyTime now() const { return SteadyTime(SteadyTime::duration(now_.load())); }
    void advance(std::chrono::nanoseconds d) {
        now_.fetch_add(std::chrono::duration_cast<SteadyTime::duration>(d).count());
    }
    Clock source() {
        return [this] { return now(); };
    }

private:
    std::atomic<SteadyTime::rep> now_;
};

inline DescriptorPtr synthetic_fn(std::string fid, std::string spec = R"({"alloc_mb":0,"run_ms":0})",
                                  std::int64_t mem = 16 * kMiB) {
    return std::make_shared<const FunctionDescriptor>(
        FunctionDescriptor{std::move(fid), "main", std::move(spec), mem, "synthetic"});
}

inline constexpr const char* kCounterScript = R"(
count = 0
function main(args)
  count = count + 1
  return { ctx = CONTEXT_ID, count = count }
end
)";

}  // namespace isovisor::testing
