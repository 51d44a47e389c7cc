#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "isovisor/runtime.hpp"

namespace httplib {
class Server;
}

namespace isovisor {

struct GatewayConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int worker_count = 4;
    std::size_t queue_capacity = 1024;
    std::int64_t runtime_memory_cap = 2 * kGiB;
    int ttl_seconds = 10;
    int max_contexts = 4;
    bool share_code_cache = true;
    int prewarm_n = 0;
    std::chrono::milliseconds reaper_period{1000};
    std::size_t max_invoke_body = 4u * 1024u * 1024u;
    std::chrono::milliseconds shutdown_deadline{5000};

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    RuntimeConfig runtime_config() const;
};

/// Fixed-size worker pool fed by a bounded FIFO queue.
class WorkPool {
public:
    WorkPool(int workers, std::size_t capacity);
    ~WorkPool();

    WorkPool(const WorkPool&) = delete;
    WorkPool& operator=(const WorkPool&) = delete;

    /// Tasks receive `cancelled = true` when they are dropped at shutdown.
    using Task = std::function<void(bool cancelled)>;

    /// False when the queue is full or the pool is shutting down.
    bool try_submit(Task task);
    /// Stops intake, runs what is queued until `deadline`, cancels the rest.
    /// Returns the number of cancelled tasks.
    std::size_t shutdown(std::chrono::milliseconds deadline);

    std::size_t depth() const;
    int running() const noexcept { return running_.load(); }
    int peak_running() const noexcept { return peak_running_.load(); }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    void loop();

    const std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Task> queue_;
    bool closing_ = false;
    std::vector<std::thread> threads_;
    std::atomic<int> running_{0};
    std::atomic<int> peak_running_{0};
};

struct InvocationRecord {
    std::string fid;
    std::string request;
    std::chrono::steady_clock::time_point enqueued, started, finished;
    Outcome outcome = Outcome::ok;
    bool cold = false;
};

/// Invocation latency histogram with fixed microsecond bucket bounds.
class LatencyHistogram {
public:
    static constexpr std::array<double, 16> kBoundsUs = {100,     250,     500,     1'000,     2'500,    5'000,
                                                        10'000,  25'000,  50'000,  100'000,   250'000,  500'000,
                                                        1'000'000, 2'500'000, 5'000'000, 10'000'000};

    void add(double us);
    std::vector<std::uint64_t> counts() const;  // one per bound, plus overflow
    std::uint64_t total() const;

private:
    mutable std::mutex mutex_;
    std::array<std::uint64_t, kBoundsUs.size() + 1> counts_{};
};

struct HttpReply {
    int status = 200;
    std::string body;
};

/// HTTP front of a Runtime: /register, /invoke, /deregister (POST),
/// /metrics and /functions (GET).
class Gateway {
public:
    explicit Gateway(GatewayConfig config, std::shared_ptr<EngineSet> engines = EngineSet::defaults());
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    HttpReply handle_register(const std::string& body);
    HttpReply handle_invoke(const std::string& body);
    HttpReply handle_deregister(const std::string& body);
    HttpReply handle_functions() const;
    /// Flat JSON object of counters and gauges.
    std::string metrics() const;

    /// Binds and serves on the calling thread until stop(). Throws
    /// std::runtime_error if the address cannot be bound.
    void serve();
    /// Binds, then serves on a background thread. Returns the bound port.
    int start();
    /// Stops listening, drains the queue, then destroys every pooled isolate.
    void stop();

    Runtime& runtime() noexcept { return runtime_; }
    const GatewayConfig& config() const noexcept { return config_; }
    std::vector<InvocationRecord> records() const;

private:
    int bind();
    void record(InvocationRecord r);

    GatewayConfig config_;
    Runtime runtime_;
    WorkPool pool_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    std::atomic<bool> stopped_{false};

    LatencyHistogram latency_;
    std::array<std::atomic<std::uint64_t>, 5> outcomes_{};

    mutable std::mutex records_mutex_;
    std::deque<InvocationRecord> records_;
};

/// Strict RFC 4648 base64 decode; nullopt on malformed input.
std::optional<std::string> base64_decode(std::string_view in);
std::string base64_encode(std::string_view in);

}  // namespace isovisor
