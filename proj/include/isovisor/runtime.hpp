#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "isovisor/accounting.hpp"
#include "isovisor/engine.hpp"
#include "isovisor/isolate.hpp"
#include "isovisor/registry.hpp"

namespace isovisor {

struct RuntimeConfig {
    std::int64_t memory_cap = 2 * kGiB;
    IsolateConfig isolates;
    /// Background reaper period; zero disables the reaper thread.
    std::chrono::milliseconds reaper_period{1000};
};

struct Invocation {
    Outcome outcome = Outcome::ok;
    /// Function result JSON on success, diagnostic otherwise.
    std::string body;
    bool cold = false;
    bool compiled = false;
    std::uint64_t isolate_id = 0;
    std::uint64_t context_id = 0;
};

/// One process-wide function runtime: function cache, guest engines,
/// isolate pool and the runtime memory account.
class Runtime {
public:
    explicit Runtime(RuntimeConfig config = {}, std::shared_ptr<EngineSet> engines = EngineSet::defaults(),
                     Clock clock = steady_clock_source());
    ~Runtime();

    Runtime(const Runtime&) = delete;
    Runtime& operator=(const Runtime&) = delete;

    bool register_function(FunctionDescriptor descriptor);
    /// Removes the function; warm isolates are destroyed, in-flight invocations finish.
    bool deregister(const std::string& fid);
    DescriptorPtr lookup(const std::string& fid) const { return registry_.lookup(fid); }

    /// Invocation path: function cache lookup, warm isolate or a new one,
    /// run inside it, return the isolate to the pool.
    Invocation invoke(const std::string& fid, std::string args_json);

    /// First half of invoke(): resolve the function and check out an
    /// isolate. Lets a caller fix the isolate choice before running.
    struct Ticket {
        DescriptorPtr function;
        IsolateManager::Lease lease;
    };
    /// On failure, `failure` carries the outcome and ticket is empty.
    std::optional<Ticket> prepare(const std::string& fid, Invocation* failure);
    Invocation execute(Ticket ticket, std::string args_json);

    FunctionRegistry& registry() noexcept { return registry_; }
    const FunctionRegistry& registry() const noexcept { return registry_; }
    IsolateManager& isolates() noexcept { return isolates_; }
    const IsolateManager& isolates() const noexcept { return isolates_; }
    const MemoryAccount& memory() const noexcept { return account_; }
    const EngineSet& engines() const noexcept { return *engines_; }
    const RuntimeConfig& config() const noexcept { return config_; }

    std::uint64_t cold_invocations() const noexcept { return cold_.load(); }
    std::uint64_t warm_invocations() const noexcept { return warm_.load(); }

private:
    RuntimeConfig config_;
    std::shared_ptr<EngineSet> engines_;
    MemoryAccount account_;
    FunctionRegistry registry_;
    IsolateManager isolates_;
    std::atomic<std::uint64_t> cold_{0};
    std::atomic<std::uint64_t> warm_{0};
};

}  // namespace isovisor
