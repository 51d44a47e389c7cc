#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "isovisor/accounting.hpp"
#include "isovisor/engine.hpp"
#include "isovisor/registry.hpp"

namespace isovisor {

using SteadyTime = std::chrono::steady_clock::time_point;
using Clock = std::function<SteadyTime()>;

inline Clock steady_clock_source() {
    return [] { return std::chrono::steady_clock::now(); };
}

struct IsolateConfig {
    /// Concurrent contexts per isolate when the code cache is shared.
    int max_contexts = 4;
    bool share_code_cache = true;
    std::chrono::milliseconds ttl{10'000};
    std::int64_t base_heap_bytes = kMiB;
    /// Warm isolates created per function at registration.
    int prewarm_n = 0;
};

/// The runtime-wide memory cap would be exceeded by a new isolate.
class GlobalMemoryExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A handle was retrieved more than once.
class HandleConsumed : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Single-use reference to a value pinned on the caller's side of an isolate
/// boundary. retrieve() moves the value out and drops the pin.
template <typename T>
class ObjectHandle {
public:
    ObjectHandle() = default;
    explicit ObjectHandle(T value) : pinned_(std::make_unique<T>(std::move(value))) {}

    ObjectHandle(ObjectHandle&&) noexcept = default;
    ObjectHandle& operator=(ObjectHandle&&) noexcept = default;

    T retrieve() {
        if (!pinned_) throw HandleConsumed("object handle already retrieved");
        T out = std::move(*pinned_);
        pinned_.reset();
        return out;
    }

    bool pinned() const noexcept { return pinned_ != nullptr; }

private:
    std::unique_ptr<T> pinned_;
};

/// Memory-budgeted sandbox hosting invocations of exactly one function.
class Isolate {
public:
    Isolate(std::uint64_t id, DescriptorPtr descriptor, GuestEngine& engine, std::int64_t budget,
            int max_contexts, std::int64_t base_heap_bytes, MemoryAccount& runtime_account,
            std::shared_ptr<std::atomic<std::uint64_t>> destroyed_counter = nullptr);
    ~Isolate();

    Isolate(const Isolate&) = delete;
    Isolate& operator=(const Isolate&) = delete;

    std::uint64_t id() const noexcept { return id_; }
    const std::string& fid() const noexcept { return descriptor_->fid; }
    const DescriptorPtr& descriptor() const noexcept { return descriptor_; }
    std::int64_t budget() const noexcept { return allocator_.budget(); }
    AccountingAllocator& allocator() noexcept { return allocator_; }
    const AccountingAllocator& allocator() const noexcept { return allocator_; }
    int max_contexts() const noexcept { return max_contexts_; }

    /// Code cache: compiles on first call, afterwards returns the cached
    /// program. Throws CompileError (cached too) or ContextError(oom) when the
    /// compiled program does not fit the budget.
    ProgramPtr program(bool* compiled_now = nullptr);
    bool has_program() const;

    /// Binds a free context to the calling thread, preferring the one this
    /// thread used last; creates one if none is free. Throws ContextError,
    /// CompileError.
    GuestContext& bind_context(bool* created_now = nullptr);
    void unbind_context(GuestContext& ctx);

    std::size_t context_count() const;
    int busy_contexts() const;
    int peak_busy_contexts() const noexcept { return peak_busy_.load(std::memory_order_relaxed); }

    bool doomed() const noexcept { return doomed_.load(std::memory_order_acquire); }
    void doom() noexcept { doomed_.store(true, std::memory_order_release); }

    SteadyTime last_used() const noexcept;
    void touch(SteadyTime now) noexcept;

private:
    struct Slot {
        std::unique_ptr<GuestContext> context;
        std::thread::id last_thread;
    };

    const std::uint64_t id_;
    const DescriptorPtr descriptor_;
    GuestEngine& engine_;
    const int max_contexts_;
    AccountingAllocator allocator_;
    std::unique_ptr<std::byte[]> base_heap_;

    mutable std::mutex mutex_;
    ProgramPtr program_;
    std::optional<std::string> compile_error_;
    std::vector<Slot> slots_;
    int busy_ = 0;
    std::atomic<int> peak_busy_{0};
    std::atomic<bool> doomed_{false};
    std::atomic<SteadyTime::rep> last_used_{0};
    std::shared_ptr<std::atomic<std::uint64_t>> destroyed_counter_;
};

using IsolatePtr = std::shared_ptr<Isolate>;

/// Warm isolates keyed by fid. Each per-function list is a stack: the most
/// recently offered isolate is polled first.
class IsolatePool {
public:
    IsolatePtr poll(const std::string& fid);
    /// Returns false (and drops the isolate) when it is doomed.
    bool offer(const std::string& fid, IsolatePtr isolate);

    /// Removes and returns isolates idle for longer than `ttl` at `now`.
    std::vector<IsolatePtr> take_expired(SteadyTime now, std::chrono::nanoseconds ttl);
    std::vector<IsolatePtr> take_all(const std::string& fid);
    std::vector<IsolatePtr> take_all();

    std::size_t size() const;
    std::size_t size(const std::string& fid) const;
    bool contains(std::uint64_t isolate_id) const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<IsolatePtr>, std::less<>> idle_;
    std::size_t count_ = 0;
};

enum class Outcome { ok, not_registered, oom, guest_error, rejected_queue_full };

const char* to_string(Outcome o) noexcept;

struct RunResult {
    Outcome outcome = Outcome::ok;
    ObjectHandle<std::string> result;
    bool compiled = false;
    bool context_created = false;
    std::uint64_t context_id = 0;
};

struct IsolateStats {
    std::uint64_t isolates_created = 0;
    std::uint64_t isolates_destroyed = 0;
    std::uint64_t isolates_reaped = 0;
    std::uint64_t compiles = 0;
    std::uint64_t contexts_created = 0;
    std::size_t live_isolates = 0;
    std::size_t pooled_isolates = 0;
    std::size_t executing_isolates = 0;
    int peak_contexts_per_isolate = 0;
};

/// Creates, pools, reuses, reaps and destroys isolates. Thread-safe.
class IsolateManager {
public:
    IsolateManager(std::shared_ptr<EngineSet> engines, MemoryAccount& runtime_account, IsolateConfig config,
                   Clock clock = steady_clock_source());
    ~IsolateManager();

    IsolateManager(const IsolateManager&) = delete;
    IsolateManager& operator=(const IsolateManager&) = delete;

    /// An isolate checked out for one invocation. Returning it (destructor or
    /// release()) offers it back to the pool unless it was poisoned or doomed.
    class Lease {
    public:
        Lease() = default;
        Lease(IsolateManager* owner, IsolatePtr isolate, bool cold) noexcept
            : owner_(owner), isolate_(std::move(isolate)), cold_(cold) {}
        Lease(Lease&& other) noexcept { *this = std::move(other); }
        Lease& operator=(Lease&& other) noexcept;
        ~Lease() { release(); }

        Isolate& isolate() const noexcept { return *isolate_; }
        const IsolatePtr& shared() const noexcept { return isolate_; }
        bool cold() const noexcept { return cold_; }
        explicit operator bool() const noexcept { return isolate_ != nullptr; }

        /// Marks the isolate for destruction instead of pooling.
        void poison() noexcept { poisoned_ = true; }
        void release() noexcept;

    private:
        IsolateManager* owner_ = nullptr;
        IsolatePtr isolate_;
        bool cold_ = false;
        bool poisoned_ = false;
    };

    /// Warm isolate with a free context slot if one exists, else a new one.
    /// Throws GlobalMemoryExhausted or std::invalid_argument (no engine).
    Lease acquire(const DescriptorPtr& descriptor);

    /// Builds a fresh isolate outside the pool/executing sets.
    IsolatePtr create_isolate(const DescriptorPtr& descriptor);

    /// Executes one invocation in `isolate` on the calling thread.
    RunResult run_in_isolate(Isolate& isolate, ObjectHandle<DescriptorPtr> func, ObjectHandle<std::string> args);

    /// Pool interface on the manager's pool. poll() moves the isolate to the
    /// executing set; offer() takes it back out.
    IsolatePtr poll(const std::string& fid);
    void offer(const std::string& fid, IsolatePtr isolate);

    /// Creates `n` idle isolates for the function and pools them.
    void prewarm(const DescriptorPtr& descriptor, int n);

    /// Destroys pooled isolates idle for longer than the TTL.
    std::size_t reap(SteadyTime now);
    std::size_t reap() { return reap(clock_()); }

    /// Dooms every isolate of `fid`: pooled ones die now, executing ones on return.
    void doom(const std::string& fid);

    /// Destroys every pooled isolate.
    std::size_t drain();

    /// Runs reap() every `period` on a background thread until stopped.
    void start_reaper(std::chrono::milliseconds period);
    void stop_reaper();

    IsolateStats stats() const;
    const IsolateConfig& config() const noexcept { return config_; }
    const IsolatePool& pool() const noexcept { return pool_; }
    SteadyTime now() const { return clock_(); }
    bool is_pooled(std::uint64_t isolate_id) const { return pool_.contains(isolate_id); }
    bool is_live(std::uint64_t isolate_id) const;

    /// Latency of each isolate creation in microseconds, most recent last.
    std::vector<double> creation_latencies_us() const;

private:
    void give_back(IsolatePtr isolate, bool poisoned);
    std::int64_t budget_for(const FunctionDescriptor& d) const;

    std::shared_ptr<EngineSet> engines_;
    MemoryAccount& account_;
    IsolateConfig config_;
    Clock clock_;

    IsolatePool pool_;

    mutable std::mutex mutex_;
    struct Executing {
        IsolatePtr isolate;
        int active = 0;
        bool poisoned = false;
        std::uint64_t acquired_seq = 0;
    };
    std::map<std::uint64_t, Executing> executing_;
    std::uint64_t acquire_seq_ = 0;
    std::vector<double> create_us_;

    std::atomic<std::uint64_t> next_id_{1};
    std::atomic<std::uint64_t> created_{0};
    std::shared_ptr<std::atomic<std::uint64_t>> destroyed_ = std::make_shared<std::atomic<std::uint64_t>>(0);
    std::atomic<std::uint64_t> reaped_{0};
    std::atomic<std::uint64_t> compiles_{0};
    std::atomic<std::uint64_t> contexts_created_{0};
    std::atomic<int> peak_contexts_{0};

    std::mutex reaper_mutex_;
    std::condition_variable reaper_cv_;
    bool reaper_stop_ = false;
    std::thread reaper_;
};

}  // namespace isovisor
