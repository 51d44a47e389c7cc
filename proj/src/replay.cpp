#include "isovisor/replay.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>
#include <unordered_map>

#include "isovisor/runtime.hpp"
#include "json.hpp"

namespace isovisor::replay {

using trace::TraceEvent;

std::string_view to_string(Policy p) noexcept {
    switch (p) {
        case Policy::per_invocation: return "per-invocation";
        case Policy::per_function: return "per-function";
        case Policy::per_tenant: return "per-tenant";
    }
    return "unknown";
}

std::optional<Policy> parse_policy(std::string_view s) noexcept {
    if (s == "per-invocation" || s == "openwhisk") return Policy::per_invocation;
    if (s == "per-function" || s == "photons") return Policy::per_function;
    if (s == "per-tenant" || s == "isovisor") return Policy::per_tenant;
    return std::nullopt;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t mb_to_bytes(double mb) { return static_cast<std::int64_t>(std::llround(mb * static_cast<double>(kMiB))); }

/// Committed-memory and worker-count changes, turned into 1 s bucket series.
class Timeline {
public:
    void add(double t_ms, std::int64_t bytes, int workers) {
        if (bytes != 0 || workers != 0) deltas_.push_back({t_ms, bytes, workers});
    }

    void build(double end_ms, ReplayReport& out) const {
        auto sorted = deltas_;
        std::stable_sort(sorted.begin(), sorted.end(), [](const Delta& a, const Delta& b) { return a.t < b.t; });
        const auto buckets = static_cast<std::size_t>(std::ceil(std::max(0.0, end_ms) / 1000.0));
        out.memory_timeline.assign(buckets, 0);
        out.worker_timeline.assign(buckets, 0);
        std::int64_t bytes = 0;
        int workers = 0;
        std::size_t k = 0;
        for (std::size_t b = 0; b < buckets; ++b) {
            const double end = static_cast<double>(b + 1) * 1000.0;
            std::int64_t max_bytes = bytes;
            int max_workers = workers;
            while (k < sorted.size() && sorted[k].t < end) {
                bytes += sorted[k].bytes;
                workers += sorted[k].workers;
                max_bytes = std::max(max_bytes, bytes);
                max_workers = std::max(max_workers, workers);
                ++k;
            }
            out.memory_timeline[b] = max_bytes;
            out.worker_timeline[b] = max_workers;
        }
        out.peak_memory_bytes = 0;
        for (auto v : out.memory_timeline) out.peak_memory_bytes = std::max(out.peak_memory_bytes, v);
    }

private:
    struct Delta {
        double t;
        std::int64_t bytes;
        int workers;
    };
    std::vector<Delta> deltas_;
};

struct Worker {
    std::uint64_t id = 0;
    std::string key;
    std::int64_t cap = 0;
    double ready_ms = 0;
    double idle_since_ms = 0;
    double last_admit_ms = 0;
    std::int64_t inflight_bytes = 0;
    int inflight = 0;
    /// Memory a per-invocation worker is sized to; held for its whole life.
    std::int64_t reserved_bytes = 0;
    int isolates = 0;
};

/// Worker bookkeeping and the admission rule shared by both replay modes.
class Cluster {
public:
    explicit Cluster(const ReplayOptions& o)
        : o_(o),
          overhead_(mb_to_bytes(o.cost.per_worker_overhead_mb)),
          isolate_bytes_(mb_to_bytes(o.cost.per_isolate_overhead_mb)) {}

    enum class Kind { reuse, create, reject };
    struct Decision {
        Kind kind = Kind::reject;
        Worker* worker = nullptr;
    };

    bool consolidating() const { return o_.policy != Policy::per_invocation; }

    std::int64_t footprint(const Worker& w) const {
        return overhead_ + w.reserved_bytes + w.inflight_bytes + static_cast<std::int64_t>(w.isolates) * isolate_bytes_;
    }

    std::string key_for(const TraceEvent& e) const {
        return o_.policy == Policy::per_tenant ? e.tenant_id : e.function_id;
    }

    Decision admit(const TraceEvent& e) {
        const auto mem = mb_to_bytes(e.memory_mb);
        const auto key = key_for(e);
        Worker* best = nullptr;

        if (!consolidating()) {
            for (auto& [id, w] : workers_) {
                if (w->key != key || w->inflight != 0 || w->reserved_bytes < mem) continue;
                if (best == nullptr || w->last_admit_ms > best->last_admit_ms) best = w.get();
            }
            if (best != nullptr) return {Kind::reuse, best};
            if (total_ + overhead_ + mem > o_.global_cap_bytes) return {};
            return {Kind::create, nullptr};
        }

        const auto need = mem + isolate_bytes_;
        if (total_ + need > o_.global_cap_bytes) return {};
        for (auto& [id, w] : workers_) {
            if (w->key != key || footprint(*w) + need > w->cap) continue;
            if (best == nullptr || w->last_admit_ms > best->last_admit_ms) best = w.get();
        }
        if (best != nullptr) return {Kind::reuse, best};
        if (total_ + overhead_ + need > o_.global_cap_bytes || overhead_ + need > o_.worker_cap_bytes) return {};
        return {Kind::create, nullptr};
    }

    Worker& create(const TraceEvent& e, double now) {
        auto w = std::make_unique<Worker>();
        w->id = ++created_;
        w->key = key_for(e);
        w->ready_ms = now + o_.cost.runtime_cold_start_ms;
        w->idle_since_ms = now;
        if (consolidating()) {
            w->cap = o_.worker_cap_bytes;
        } else {
            w->cap = mb_to_bytes(e.memory_mb);
            w->reserved_bytes = w->cap;
        }
        const auto add = footprint(*w);
        total_ += add;
        timeline_.add(now, add, 1);
        auto& ref = *w;
        workers_.emplace(w->id, std::move(w));
        return ref;
    }

    void commit(Worker& w, const TraceEvent& e, double now) {
        ++w.inflight;
        w.last_admit_ms = now;
        if (consolidating()) {
            const auto mem = mb_to_bytes(e.memory_mb);
            w.inflight_bytes += mem;
            total_ += mem;
            timeline_.add(now, mem, 0);
        }
        check_cap();
    }

    void complete(Worker& w, std::int64_t mem, double at) {
        --w.inflight;
        if (w.inflight == 0) w.idle_since_ms = at;
        if (consolidating()) {
            w.inflight_bytes -= mem;
            total_ -= mem;
            timeline_.add(at, -mem, 0);
        }
    }

    void isolates_changed(Worker& w, int delta, double at) {
        if (delta == 0) return;
        w.isolates += delta;
        total_ += delta * isolate_bytes_;
        timeline_.add(at, delta * isolate_bytes_, 0);
        check_cap();
    }

    void retire(std::uint64_t id, double at) {
        auto it = workers_.find(id);
        const auto fp = footprint(*it->second);
        total_ -= fp;
        timeline_.add(at, -fp, -1);
        workers_.erase(it);
    }

    Worker* find(std::uint64_t id) {
        auto it = workers_.find(id);
        return it == workers_.end() ? nullptr : it->second.get();
    }

    /// Idle workers whose keep-alive ran out strictly before `now`.
    std::vector<std::uint64_t> expired_workers(double now) const {
        std::vector<std::uint64_t> out;
        for (const auto& [id, w] : workers_)
            if (w->inflight == 0 && now - w->idle_since_ms > o_.keep_alive_ms) out.push_back(id);
        return out;
    }

    double next_worker_expiry() const {
        double t = kInf;
        for (const auto& [id, w] : workers_)
            if (w->inflight == 0) t = std::min(t, w->idle_since_ms + o_.keep_alive_ms);
        return t;
    }

    std::map<std::uint64_t, std::unique_ptr<Worker>>& workers() { return workers_; }
    std::uint64_t created() const { return created_; }
    std::int64_t total() const { return total_; }
    Timeline& timeline() { return timeline_; }

private:
    void check_cap() const {
        if (total_ > o_.global_cap_bytes) throw std::logic_error("replay admitted past the global memory cap");
    }

    const ReplayOptions& o_;
    const std::int64_t overhead_;
    const std::int64_t isolate_bytes_;
    std::map<std::uint64_t, std::unique_ptr<Worker>> workers_;
    std::uint64_t created_ = 0;
    std::int64_t total_ = 0;
    Timeline timeline_;
};

/// Isolate pool of one consolidating worker, mirroring the live runtime:
/// co-locate in an executing isolate with a free context, else take the most
/// recently returned idle isolate, else create one.
class IsolateModel {
public:
    IsolateModel(int max_contexts, double ttl_ms) : max_contexts_(max_contexts), ttl_ms_(ttl_ms) {}

    struct Pick {
        std::uint64_t id;
        bool cold;
    };

    Pick acquire(const std::string& fid) {
        auto& isos = by_fn_[fid];
        Iso* best = nullptr;
        for (auto& i : isos)
            if (i.active > 0 && i.active < max_contexts_ && (best == nullptr || i.seq > best->seq)) best = &i;
        if (best == nullptr) {
            for (auto& i : isos)
                if (i.active == 0 && (best == nullptr || i.returned > best->returned)) best = &i;
        }
        if (best != nullptr) {
            ++best->active;
            best->seq = ++seq_;
            return {best->id, false};
        }
        isos.push_back(Iso{++ids_, 1, 0, ++seq_, 0});
        return {isos.back().id, true};
    }

    void release(const std::string& fid, std::uint64_t id, double at) {
        for (auto& i : by_fn_[fid])
            if (i.id == id) {
                --i.active;
                i.last_used = at;
                if (i.active == 0) i.returned = ++seq_;
                return;
            }
    }

    /// Removes idle isolates past the TTL strictly before `now`.
    int expire(double now) {
        int n = 0;
        for (auto& [fid, isos] : by_fn_) {
            const auto before = isos.size();
            std::erase_if(isos, [&](const Iso& i) { return i.active == 0 && now - i.last_used > ttl_ms_; });
            n += static_cast<int>(before - isos.size());
        }
        return n;
    }

    double next_expiry() const {
        double t = kInf;
        for (const auto& [fid, isos] : by_fn_)
            for (const auto& i : isos)
                if (i.active == 0) t = std::min(t, i.last_used + ttl_ms_);
        return t;
    }

private:
    struct Iso {
        std::uint64_t id;
        int active;
        double last_used;
        std::uint64_t seq;
        std::uint64_t returned;
    };
    int max_contexts_;
    double ttl_ms_;
    std::map<std::string, std::vector<Iso>> by_fn_;
    std::uint64_t ids_ = 0;
    std::uint64_t seq_ = 0;
};

double end_of(const ReplayReport& r) {
    double end = 0;
    for (const auto& rec : r.records) end = std::max({end, rec.arrival_ms, rec.rejected ? 0.0 : rec.finish_ms});
    return end;
}

}  // namespace

// ---------------------------------------------------------------------------
// sim

ReplayReport replay_sim(std::span<const TraceEvent> events, const ReplayOptions& o) {
    ReplayReport report;
    report.policy = o.policy;
    report.mode = "sim";
    report.records.resize(events.size());

    Cluster cluster(o);
    std::unordered_map<std::uint64_t, IsolateModel> models;

    struct Completion {
        double at;
        std::uint64_t seq;
        std::size_t index;
        std::uint64_t worker;
        std::uint64_t isolate;
        bool operator>(const Completion& b) const { return at != b.at ? at > b.at : seq > b.seq; }
    };
    std::priority_queue<Completion, std::vector<Completion>, std::greater<>> pending;
    std::uint64_t seq = 0;

    auto advance_to = [&](double t) {
        for (;;) {
            const double next_c = pending.empty() ? kInf : pending.top().at;
            double next_iso = kInf;
            std::uint64_t iso_worker = 0;
            for (auto& [id, m] : models) {
                const double x = m.next_expiry();
                if (x < next_iso) {
                    next_iso = x;
                    iso_worker = id;
                }
            }
            const double next_w = cluster.next_worker_expiry();

            if (next_c <= t && next_c <= next_iso && next_c <= next_w) {
                const auto c = pending.top();
                pending.pop();
                const auto& e = events[c.index];
                Worker* w = cluster.find(c.worker);
                cluster.complete(*w, mb_to_bytes(e.memory_mb), c.at);
                if (cluster.consolidating()) models.at(c.worker).release(e.function_id, c.isolate, c.at);
                continue;
            }
            // Expiry is strict: idle for exactly the TTL survives an arrival at that instant.
            if (next_iso < t && next_iso <= next_w) {
                auto& m = models.at(iso_worker);
                const double at = next_iso;
                const int n = m.expire(std::nextafter(at, kInf));
                cluster.isolates_changed(*cluster.find(iso_worker), -n, at);
                continue;
            }
            if (next_w < t) {
                for (auto id : cluster.expired_workers(std::nextafter(next_w, kInf))) {
                    cluster.retire(id, next_w);
                    models.erase(id);
                }
                continue;
            }
            break;
        }
    };

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        advance_to(e.t_ms);
        auto& rec = report.records[i];
        rec.index = i;
        rec.arrival_ms = e.t_ms;

        auto d = cluster.admit(e);
        if (d.kind == Cluster::Kind::reject) {
            rec.rejected = true;
            report.rejected.push_back(i);
            continue;
        }
        Worker* w = d.worker;
        if (d.kind == Cluster::Kind::create) {
            w = &cluster.create(e, e.t_ms);
            rec.runtime_cold = true;
            ++report.runtime_cold_starts;
            if (cluster.consolidating()) models.emplace(w->id, IsolateModel(o.max_contexts, o.isolate_ttl_ms));
        }
        cluster.commit(*w, e, e.t_ms);

        std::uint64_t iso = 0;
        if (cluster.consolidating()) {
            auto pick = models.at(w->id).acquire(e.function_id);
            iso = pick.id;
            if (pick.cold) {
                rec.isolate_cold = true;
                ++report.isolate_cold_starts;
                cluster.isolates_changed(*w, +1, e.t_ms);
            }
        }
        rec.worker_id = w->id;
        rec.start_ms = std::max(e.t_ms, w->ready_ms);
        rec.finish_ms = rec.start_ms + (rec.isolate_cold ? o.cost.isolate_cold_start_us / 1000.0 : 0.0) + e.duration_ms;
        rec.latency_ms = rec.finish_ms - e.t_ms;
        pending.push({rec.finish_ms, ++seq, i, w->id, iso});
    }

    const double end = end_of(report);
    advance_to(std::nextafter(end, kInf));
    report.workers_created = cluster.created();
    cluster.timeline().build(end, report);
    return report;
}

// ---------------------------------------------------------------------------
// live

ReplayReport replay_live(std::span<const TraceEvent> events, const ReplayOptions& o, const LiveOptions& live) {
    using steady = std::chrono::steady_clock;
    ReplayReport report;
    report.policy = o.policy;
    report.mode = "live";
    report.records.resize(events.size());

    Cluster cluster(o);
    auto engines = EngineSet::defaults(SyntheticEngine::Options{live.materialize});

    std::unordered_map<std::string, double> fn_memory_mb;
    for (const auto& e : events) fn_memory_mb[e.function_id] = std::max(fn_memory_mb[e.function_id], e.memory_mb);

    std::unordered_map<std::uint64_t, std::unique_ptr<Runtime>> runtimes;

    struct Task {
        std::size_t index = 0;
        std::uint64_t worker = 0;
        double planned_finish = 0;
        double actual_finish = 0;
        bool done = false;
        Outcome outcome = Outcome::ok;
    };
    std::mutex mutex;
    std::condition_variable cv;
    std::vector<std::unique_ptr<Task>> inflight;
    std::vector<std::thread> threads;

    const auto t0 = steady::now() + std::chrono::duration_cast<steady::duration>(
                                         std::chrono::duration<double, std::milli>(live.lead_ms));
    auto at = [&](double ms) {
        return t0 + std::chrono::duration_cast<steady::duration>(std::chrono::duration<double, std::milli>(ms));
    };
    auto since_t0 = [&](steady::time_point p) { return std::chrono::duration<double, std::milli>(p - t0).count(); };

    // Applies completions the manager is due to have observed by trace time `t`,
    // waiting for the ones that are still physically running.
    auto settle = [&](double t) {
        std::vector<std::unique_ptr<Task>> finished;
        {
            std::unique_lock lock(mutex);
            cv.wait(lock, [&] {
                return std::all_of(inflight.begin(), inflight.end(),
                                   [&](const auto& k) { return k->planned_finish > t || k->done; });
            });
            auto keep = std::stable_partition(inflight.begin(), inflight.end(),
                                              [&](const auto& k) { return k->planned_finish > t; });
            std::move(keep, inflight.end(), std::back_inserter(finished));
            inflight.erase(keep, inflight.end());
        }
        std::sort(finished.begin(), finished.end(),
                  [](const auto& a, const auto& b) { return a->planned_finish < b->planned_finish; });
        for (auto& k : finished) {
            const auto& e = events[k->index];
            auto& rec = report.records[k->index];
            rec.finish_ms = k->actual_finish;
            rec.latency_ms = k->actual_finish - e.t_ms;
            cluster.complete(*cluster.find(k->worker), mb_to_bytes(e.memory_mb), k->actual_finish);
        }
    };

    auto expire = [&](double t) {
        for (auto id : cluster.expired_workers(t)) {
            cluster.retire(id, t);
            runtimes.erase(id);
        }
        if (!cluster.consolidating()) return;
        for (auto& [id, rt] : runtimes) {
            const auto before = rt->isolates().stats().live_isolates;
            rt->isolates().reap(at(t));
            const auto after = rt->isolates().stats().live_isolates;
            cluster.isolates_changed(*cluster.find(id), static_cast<int>(after) - static_cast<int>(before), t);
        }
    };

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        std::this_thread::sleep_until(at(e.t_ms));
        settle(e.t_ms);
        expire(e.t_ms);

        auto& rec = report.records[i];
        rec.index = i;
        rec.arrival_ms = e.t_ms;

        auto d = cluster.admit(e);
        if (d.kind == Cluster::Kind::reject) {
            rec.rejected = true;
            report.rejected.push_back(i);
            continue;
        }
        Worker* w = d.worker;
        if (d.kind == Cluster::Kind::create) {
            w = &cluster.create(e, e.t_ms);
            rec.runtime_cold = true;
            ++report.runtime_cold_starts;
            RuntimeConfig rc;
            rc.memory_cap = cluster.consolidating() ? o.worker_cap_bytes + 256 * kMiB : w->cap + 64 * kMiB;
            rc.isolates.max_contexts = cluster.consolidating() ? o.max_contexts : 1;
            rc.isolates.share_code_cache = cluster.consolidating();
            rc.isolates.ttl = std::chrono::milliseconds(static_cast<std::int64_t>(o.isolate_ttl_ms));
            rc.reaper_period = std::chrono::milliseconds(0);
            runtimes.emplace(w->id, std::make_unique<Runtime>(rc, engines));
        }
        cluster.commit(*w, e, e.t_ms);

        Runtime& rt = *runtimes.at(w->id);
        if (!rt.lookup(e.function_id)) {
            rt.register_function({e.function_id, "main", R"({"alloc_mb":0,"run_ms":0})",
                                  mb_to_bytes(fn_memory_mb[e.function_id]) + 2 * kMiB, "synthetic"});
        }
        Invocation failure;
        auto ticket = rt.prepare(e.function_id, &failure);
        if (!ticket) throw std::runtime_error("live worker refused an admitted invocation: " + failure.body);
        if (cluster.consolidating() && ticket->lease.cold()) {
            rec.isolate_cold = true;
            ++report.isolate_cold_starts;
            cluster.isolates_changed(*w, +1, e.t_ms);
        }
        rec.worker_id = w->id;
        rec.start_ms = std::max(e.t_ms, w->ready_ms);
        const double planned_finish =
            rec.start_ms + (rec.isolate_cold ? o.cost.isolate_cold_start_us / 1000.0 : 0.0) + e.duration_ms;

        auto task = std::make_unique<Task>();
        task->index = i;
        task->worker = w->id;
        task->planned_finish = planned_finish;
        Task* raw = task.get();
        {
            std::lock_guard lock(mutex);
            inflight.push_back(std::move(task));
        }
        nlohmann::json args = {{"emulate", {{"alloc_mb", e.memory_mb}, {"run_ms", e.duration_ms}}}};
        threads.emplace_back([&, raw, rtp = &rt, start = at(rec.start_ms), t = std::move(*ticket),
                              body = args.dump()]() mutable {
            std::this_thread::sleep_until(start);
            auto inv = rtp->execute(std::move(t), std::move(body));
            const double finished = since_t0(steady::now());
            std::lock_guard lock(mutex);
            raw->outcome = inv.outcome;
            raw->actual_finish = finished;
            raw->done = true;
            cv.notify_all();
        });
    }

    settle(kInf);
    for (auto& t : threads) t.join();
    const double end = end_of(report);
    expire(end);
    report.workers_created = cluster.created();
    cluster.timeline().build(end, report);
    return report;
}

// ---------------------------------------------------------------------------
// metrics

double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0;
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

Summary compute_metrics(const ReplayReport& r) {
    Summary s;
    s.policy = std::string(to_string(r.policy));
    s.mode = r.mode;
    s.events = r.records.size();
    s.rejected = r.rejected.size();
    s.completed = s.events - s.rejected;
    s.workers_created = r.workers_created;
    s.runtime_cold_starts = r.runtime_cold_starts;
    s.isolate_cold_starts = r.isolate_cold_starts;

    std::vector<double> lat;
    for (const auto& rec : r.records)
        if (!rec.rejected) lat.push_back(rec.latency_ms);
    s.p50_ms = percentile(lat, 50);
    s.p90_ms = percentile(lat, 90);
    s.p99_ms = percentile(std::move(lat), 99);

    if (!r.memory_timeline.empty()) {
        double sum = 0;
        for (auto v : r.memory_timeline) sum += static_cast<double>(v);
        s.mean_memory_bytes = sum / static_cast<double>(r.memory_timeline.size());
        s.max_memory_bytes = *std::max_element(r.memory_timeline.begin(), r.memory_timeline.end());
    }
    if (!r.worker_timeline.empty()) {
        double sum = 0;
        for (auto v : r.worker_timeline) sum += v;
        s.mean_active_workers = sum / static_cast<double>(r.worker_timeline.size());
        s.max_active_workers = *std::max_element(r.worker_timeline.begin(), r.worker_timeline.end());
    }
    return s;
}

std::string summary_json(const Summary& s) {
    nlohmann::ordered_json j;
    j["policy"] = s.policy;
    j["mode"] = s.mode;
    j["events"] = s.events;
    j["completed"] = s.completed;
    j["rejected"] = s.rejected;
    j["workers_created"] = s.workers_created;
    j["runtime_cold_starts"] = s.runtime_cold_starts;
    j["isolate_cold_starts"] = s.isolate_cold_starts;
    j["p50_ms"] = s.p50_ms;
    j["p90_ms"] = s.p90_ms;
    j["p99_ms"] = s.p99_ms;
    j["mean_memory_bytes"] = s.mean_memory_bytes;
    j["max_memory_bytes"] = s.max_memory_bytes;
    j["mean_active_workers"] = s.mean_active_workers;
    j["max_active_workers"] = s.max_active_workers;
    return j.dump(2);
}

void write_report(const std::filesystem::path& dir, const ReplayReport& r, const Summary& s) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    {
        auto out = open("memory_timeline.csv");
        out << "t_s,bytes\n";
        for (std::size_t b = 0; b < r.memory_timeline.size(); ++b) out << b << ',' << r.memory_timeline[b] << '\n';
        if (!out) throw std::runtime_error("short write on memory_timeline.csv");
    }
    {
        std::vector<double> lat;
        for (const auto& rec : r.records)
            if (!rec.rejected) lat.push_back(rec.latency_ms);
        std::sort(lat.begin(), lat.end());
        auto out = open("latency_cdf.csv");
        out << "latency_ms,fraction\n";
        for (std::size_t i = 0; i < lat.size(); ++i)
            out << lat[i] << ',' << static_cast<double>(i + 1) / static_cast<double>(lat.size()) << '\n';
        if (!out) throw std::runtime_error("short write on latency_cdf.csv");
    }
    {
        auto out = open("summary.json");
        out << summary_json(s) << '\n';
        if (!out) throw std::runtime_error("short write on summary.json");
    }
}

}  // namespace isovisor::replay
