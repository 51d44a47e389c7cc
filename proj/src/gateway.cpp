#include "isovisor/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace isovisor {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// config

void GatewayConfig::validate() const {
    if (worker_count < 1) throw std::invalid_argument("worker_count must be >= 1");
    if (queue_capacity < 1) throw std::invalid_argument("queue_capacity must be >= 1");
    if (runtime_memory_cap < 16 * kMiB) throw std::invalid_argument("runtime_memory_cap must be >= 16 MiB");
    if (ttl_seconds < 0) throw std::invalid_argument("ttl_seconds must be >= 0");
    if (max_contexts < 1) throw std::invalid_argument("max_contexts must be >= 1");
    if (prewarm_n < 0) throw std::invalid_argument("prewarm_n must be >= 0");
    if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
}

RuntimeConfig GatewayConfig::runtime_config() const {
    RuntimeConfig rc;
    rc.memory_cap = runtime_memory_cap;
    rc.isolates.max_contexts = max_contexts;
    rc.isolates.share_code_cache = share_code_cache;
    rc.isolates.ttl = std::chrono::seconds(ttl_seconds);
    rc.isolates.prewarm_n = prewarm_n;
    rc.reaper_period = reaper_period;
    return rc;
}

// ---------------------------------------------------------------------------
// WorkPool

WorkPool::WorkPool(int workers, std::size_t capacity) : capacity_(capacity) {
    threads_.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
}

WorkPool::~WorkPool() { shutdown(std::chrono::milliseconds(0)); }

bool WorkPool::try_submit(Task task) {
    {
        std::lock_guard lock(mutex_);
        if (closing_ || queue_.size() >= capacity_) return false;
        queue_.push_back(std::move(task));
    }
    cv_.notify_one();
    return true;
}

void WorkPool::loop() {
    for (;;) {
        Task task;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [this] { return closing_ || !queue_.empty(); });
            if (queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
        }
        const int now = running_.fetch_add(1) + 1;
        int seen = peak_running_.load();
        while (now > seen && !peak_running_.compare_exchange_weak(seen, now)) {
        }
        task(false);
        running_.fetch_sub(1);
    }
}

std::size_t WorkPool::shutdown(std::chrono::milliseconds deadline) {
    const auto until = std::chrono::steady_clock::now() + deadline;
    {
        std::lock_guard lock(mutex_);
        if (threads_.empty()) return 0;
    }
    for (;;) {
        {
            std::lock_guard lock(mutex_);
            if (queue_.empty() || std::chrono::steady_clock::now() >= until) break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    std::deque<Task> dropped;
    {
        std::lock_guard lock(mutex_);
        closing_ = true;
        dropped.swap(queue_);
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
    for (auto& t : dropped) t(true);
    return dropped.size();
}

std::size_t WorkPool::depth() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

// ---------------------------------------------------------------------------
// LatencyHistogram

void LatencyHistogram::add(double us) {
    std::size_t i = 0;
    while (i < kBoundsUs.size() && us > kBoundsUs[i]) ++i;
    std::lock_guard lock(mutex_);
    ++counts_[i];
}

std::vector<std::uint64_t> LatencyHistogram::counts() const {
    std::lock_guard lock(mutex_);
    return {counts_.begin(), counts_.end()};
}

std::uint64_t LatencyHistogram::total() const {
    std::lock_guard lock(mutex_);
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

// ---------------------------------------------------------------------------
// base64

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int sextet(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::optional<std::string> base64_decode(std::string_view in) {
    if (in.size() % 4 != 0) return std::nullopt;
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + static_cast<std::size_t>(k)];
            if (c == '=') {
                if (i + 4 != in.size() || k < 2) return std::nullopt;
                v[k] = 0;
                ++pad;
            } else {
                if (pad > 0) return std::nullopt;
                v[k] = sextet(c);
                if (v[k] < 0) return std::nullopt;
            }
        }
        const std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                                (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
        out.push_back(static_cast<char>((n >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<char>((n >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<char>(n & 0xff));
    }
    return out;
}

std::string base64_encode(std::string_view in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t n = (static_cast<std::uint8_t>(in[i]) << 16) | (static_cast<std::uint8_t>(in[i + 1]) << 8) |
                                static_cast<std::uint8_t>(in[i + 2]);
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += kAlphabet[(n >> 6) & 63];
        out += kAlphabet[n & 63];
    }
    if (i < in.size()) {
        std::uint32_t n = static_cast<std::uint8_t>(in[i]) << 16;
        if (i + 1 < in.size()) n |= static_cast<std::uint8_t>(in[i + 1]) << 8;
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += i + 1 < in.size() ? kAlphabet[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gateway

namespace {

HttpReply error_reply(int status, std::string_view outcome, std::string_view why) {
    json body = {{"outcome", outcome}, {"error", why}};
    return {status, body.dump(-1, ' ', false, json::error_handler_t::replace)};
}

int status_for(Outcome o) {
    switch (o) {
        case Outcome::ok: return 200;
        case Outcome::not_registered: return 404;
        case Outcome::oom: return 507;
        case Outcome::guest_error: return 500;
        case Outcome::rejected_queue_full: return 503;
    }
    return 500;
}

}  // namespace

Gateway::Gateway(GatewayConfig config, std::shared_ptr<EngineSet> engines)
    : config_((config.validate(), config)),
      runtime_(config_.runtime_config(), std::move(engines)),
      pool_(config_.worker_count, config_.queue_capacity) {}

Gateway::~Gateway() { stop(); }

HttpReply Gateway::handle_register(const std::string& body) {
    json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) return error_reply(400, "bad-request", "body must be a JSON object");
    for (const char* key : {"code", "fid", "fep", "language"})
        if (!req.contains(key) || !req[key].is_string())
            return error_reply(400, "bad-request", std::string("missing or non-string field: ") + key);
    if (!req.contains("mem") || !req["mem"].is_number_integer())
        return error_reply(400, "bad-request", "missing or non-integer field: mem");

    auto code = base64_decode(req["code"].get_ref<const std::string&>());
    if (!code) return error_reply(400, "bad-request", "code is not valid base64");

    FunctionDescriptor d{req["fid"].get<std::string>(), req["fep"].get<std::string>(), std::move(*code),
                         req["mem"].get<std::int64_t>(), req["language"].get<std::string>()};
    return {200, runtime_.register_function(std::move(d)) ? "true" : "false"};
}

HttpReply Gateway::handle_deregister(const std::string& body) {
    json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object() || !req.contains("fid") || !req["fid"].is_string())
        return error_reply(400, "bad-request", "body must be {\"fid\": string}");
    return {200, runtime_.deregister(req["fid"].get<std::string>()) ? "true" : "false"};
}

HttpReply Gateway::handle_invoke(const std::string& body) {
    if (body.size() > config_.max_invoke_body) return error_reply(413, "bad-request", "invoke body too large");
    json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object() || !req.contains("fid") || !req["fid"].is_string())
        return error_reply(400, "bad-request", "body must be {\"fid\": string, \"args\": object}");
    json args = req.contains("args") ? req["args"] : json::object();
    if (!args.is_object()) return error_reply(400, "bad-request", "args must be a JSON object");

    struct Pending {
        std::mutex m;
        std::condition_variable cv;
        bool done = false;
        Invocation result;
        InvocationRecord rec;
    };
    auto p = std::make_shared<Pending>();
    p->rec.fid = req["fid"].get<std::string>();
    p->rec.request = args.dump();
    p->rec.enqueued = std::chrono::steady_clock::now();

    const bool queued = pool_.try_submit([this, p](bool cancelled) {
        Invocation inv;
        p->rec.started = std::chrono::steady_clock::now();
        if (cancelled) {
            inv = Invocation{Outcome::rejected_queue_full, "runtime shutting down"};
        } else {
            inv = runtime_.invoke(p->rec.fid, p->rec.request);
        }
        p->rec.finished = std::chrono::steady_clock::now();
        std::lock_guard lock(p->m);
        p->result = std::move(inv);
        p->done = true;
        p->cv.notify_one();
    });
    if (!queued) {
        p->rec.started = p->rec.finished = std::chrono::steady_clock::now();
        p->rec.outcome = Outcome::rejected_queue_full;
        record(p->rec);
        return error_reply(503, to_string(Outcome::rejected_queue_full), "invocation queue is full");
    }

    std::unique_lock lock(p->m);
    p->cv.wait(lock, [&] { return p->done; });
    p->rec.outcome = p->result.outcome;
    p->rec.cold = p->result.cold;
    record(p->rec);

    if (p->result.outcome == Outcome::ok) return {200, std::move(p->result.body)};
    return error_reply(status_for(p->result.outcome), to_string(p->result.outcome), p->result.body);
}

HttpReply Gateway::handle_functions() const {
    json out = json::array();
    for (const auto& d : runtime_.registry().list())
        out.push_back({{"fid", d->fid}, {"fep", d->fep}, {"mem", d->mem}, {"language", d->language},
                       {"code_bytes", d->code.size()}});
    return {200, out.dump()};
}

void Gateway::record(InvocationRecord r) {
    outcomes_[static_cast<std::size_t>(r.outcome)].fetch_add(1, std::memory_order_relaxed);
    latency_.add(std::chrono::duration<double, std::micro>(r.finished - r.enqueued).count());
    std::lock_guard lock(records_mutex_);
    records_.push_back(std::move(r));
    if (records_.size() > 10'000) records_.pop_front();
}

std::vector<InvocationRecord> Gateway::records() const {
    std::lock_guard lock(records_mutex_);
    return {records_.begin(), records_.end()};
}

std::string Gateway::metrics() const {
    const auto s = runtime_.isolates().stats();
    json m;
    m["accounted_memory_bytes"] = runtime_.memory().used();
    m["runtime_memory_cap_bytes"] = runtime_.memory().cap();
    m["live_isolates"] = s.live_isolates;
    m["pooled_isolates"] = s.pooled_isolates;
    m["executing_isolates"] = s.executing_isolates;
    m["compiles_total"] = s.compiles;
    m["contexts_created_total"] = s.contexts_created;
    m["isolates_created_total"] = s.isolates_created;
    m["isolates_reaped_total"] = s.isolates_reaped;
    m["peak_contexts_per_isolate"] = s.peak_contexts_per_isolate;
    m["cold_invocations_total"] = runtime_.cold_invocations();
    m["warm_invocations_total"] = runtime_.warm_invocations();
    m["queue_depth"] = pool_.depth();
    m["registered_functions"] = runtime_.registry().size();
    for (std::size_t i = 0; i < outcomes_.size(); ++i) {
        std::string name = std::string("outcome_") + to_string(static_cast<Outcome>(i)) + "_total";
        for (auto& c : name)
            if (c == '-') c = '_';
        m[name] = outcomes_[i].load();
    }
    // Histogram buckets are flattened to one key per upper bound.
    const auto counts = latency_.counts();
    for (std::size_t i = 0; i < LatencyHistogram::kBoundsUs.size(); ++i)
        m["latency_us_le_" + std::to_string(static_cast<std::int64_t>(LatencyHistogram::kBoundsUs[i]))] = counts[i];
    m["latency_us_le_inf"] = counts.back();
    m["latency_count"] = latency_.total();

    auto create = runtime_.isolates().creation_latencies_us();
    double median = 0, p99 = 0;
    if (!create.empty()) {
        std::sort(create.begin(), create.end());
        median = create[(create.size() - 1) / 2];
        p99 = create[static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(create.size()))) - 1];
    }
    m["isolate_create_us"] = median;
    m["isolate_create_us_p99"] = p99;
    return m.dump();
}

int Gateway::bind() {
    server_ = std::make_unique<httplib::Server>();
    const auto http_threads = static_cast<std::size_t>(config_.worker_count) +
                              std::min<std::size_t>(config_.queue_capacity, 256) + 4;
    server_->new_task_queue = [http_threads] { return new httplib::ThreadPool(http_threads); };
    server_->set_payload_max_length(kMaxCodeBytes * 2);
    // Without SO_REUSEPORT, so a second server on the same port fails to bind.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });

    auto wire = [](httplib::Response& res, HttpReply r) {
        res.status = r.status;
        res.set_content(std::move(r.body), "application/json");
    };
    server_->Post("/register", [this, wire](const httplib::Request& req, httplib::Response& res) {
        wire(res, handle_register(req.body));
    });
    server_->Post("/invoke", [this, wire](const httplib::Request& req, httplib::Response& res) {
        wire(res, handle_invoke(req.body));
    });
    server_->Post("/deregister", [this, wire](const httplib::Request& req, httplib::Response& res) {
        wire(res, handle_deregister(req.body));
    });
    server_->Get("/functions", [this, wire](const httplib::Request&, httplib::Response& res) {
        wire(res, handle_functions());
    });
    server_->Get("/metrics", [this, wire](const httplib::Request&, httplib::Response& res) {
        wire(res, HttpReply{200, metrics()});
    });

    int port = config_.port;
    if (port == 0) {
        port = server_->bind_to_any_port(config_.host);
        if (port < 0) throw std::runtime_error("cannot bind " + config_.host);
    } else if (!server_->bind_to_port(config_.host, port)) {
        throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(port));
    }
    return port;
}

void Gateway::serve() {
    bind();
    server_->listen_after_bind();
}

int Gateway::start() {
    const int port = bind();
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void Gateway::stop() {
    if (stopped_.exchange(true)) return;
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    pool_.shutdown(config_.shutdown_deadline);
    runtime_.isolates().stop_reaper();
    runtime_.isolates().drain();
}

}  // namespace isovisor
