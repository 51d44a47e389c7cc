// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "isovisor/bench.hpp"
#include "isovisor/gateway.hpp"
#include "isovisor/replay.hpp"
#include "isovisor/trace.hpp"
#include "json.hpp"
#include "linearizability.hpp"
#include "support.hpp"

using namespace isovisor;
using json = nlohmann::json;
using steady = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

double seconds_since(steady::time_point t0) { return std::chrono::duration<double>(steady::now() - t0).count(); }

std::string register_body(const std::string& fid, const std::string& code, std::int64_t mem,
                          const std::string& language) {
    return json{{"fid", fid}, {"fep", "main"}, {"code", base64_encode(code)}, {"mem", mem}, {"language", language}}
        .dump();
}

GatewayConfig local_config() {
    GatewayConfig c;
    c.port = 0;
    return c;
}

// ---------------------------------------------------------------------------

void ac1(Verdict& v) {
    const auto t0 = steady::now();
    auto cfg = local_config();
    cfg.reaper_period = std::chrono::milliseconds(0);
    Gateway gw(cfg);
    httplib::Client cli("127.0.0.1", gw.start());
    cli.set_read_timeout(10, 0);

    auto r = cli.Post("/register", register_body("counter", testing::kCounterScript, 8 * kMiB, "lua"),
                      "application/json");
    v.require(r && r->status == 200 && r->body == "true", "register returns true");
    int results = 0;
    for (int i = 0; i < 10; ++i) {
        auto inv = cli.Post("/invoke", R"({"fid":"counter","args":{}})", "application/json");
        if (inv && inv->status == 200 && json::parse(inv->body, nullptr, false).contains("count")) ++results;
    }
    v.require(results == 10, "10 invocation results");
    r = cli.Post("/deregister", R"({"fid":"counter"})", "application/json");
    v.require(r && r->body == "true", "deregister returns true");
    r = cli.Post("/invoke", R"({"fid":"counter","args":{}})", "application/json");
    v.require(r && r->status == 404, "invoke after deregister is 404");
    const auto m = json::parse(cli.Get("/metrics")->body);
    const auto compiles = m["compiles_total"].get<int>();
    v.require(compiles == 1, "compile counter is 1");
    gw.stop();
    const double secs = seconds_since(t0);
    v.require(secs < 5.0, "runtime < 5 s");
    v.detail << "results=" << results << " compiles=" << compiles << " elapsed=" << secs << "s";
}

void ac2(Verdict& v) {
    auto cfg = local_config();
    cfg.ttl_seconds = 10;
    cfg.reaper_period = std::chrono::milliseconds(1000);
    Gateway gw(cfg);
    httplib::Client cli("127.0.0.1", gw.start());
    auto metrics = [&] { return json::parse(cli.Get("/metrics")->body); };

    const auto baseline = metrics()["accounted_memory_bytes"].get<std::int64_t>();
    cli.Post("/register", register_body("f", R"({"alloc_mb":2,"run_ms":0})", 16 * kMiB, "synthetic"),
             "application/json");
    auto r = cli.Post("/invoke", R"({"fid":"f","args":{}})", "application/json");
    const auto invoked = steady::now();
    v.require(r && r->status == 200, "invocation succeeds");
    const auto pooled_after = metrics()["pooled_isolates"].get<int>();
    v.require(pooled_after == 1, "pooled_isolates = 1 after invocation");

    double reaped_at = -1;
    while (seconds_since(invoked) < 13.0) {
        if (metrics()["pooled_isolates"].get<int>() == 0) {
            reaped_at = seconds_since(invoked);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    const auto m = metrics();
    v.require(reaped_at >= 10.0 && reaped_at <= 12.0, "reap within [10 s, 12 s]");
    v.require(m["accounted_memory_bytes"].get<std::int64_t>() == baseline, "memory back to baseline");
    v.require(m["live_isolates"].get<int>() == 0, "no live isolates");
    gw.stop();
    v.detail << "pooled_after_invoke=" << pooled_after << " reaped_after=" << reaped_at
             << "s memory=" << m["accounted_memory_bytes"] << " baseline=" << baseline;
}

void ac3(Verdict& v) {
    auto cfg = local_config();
    cfg.reaper_period = std::chrono::milliseconds(0);
    Gateway gw(cfg);
    httplib::Client cli("127.0.0.1", gw.start());
    const std::int64_t mem = 16 * kMiB;
    const std::int64_t budget = mem * cfg.max_contexts;
    const std::int64_t alloc_mb = budget / kMiB + 1;
    cli.Post("/register",
             register_body("big", json{{"alloc_mb", alloc_mb}, {"run_ms", 0}}.dump(), mem, "synthetic"),
             "application/json");
    auto r = cli.Post("/invoke", R"({"fid":"big","args":{}})", "application/json");
    v.require(r && r->status == 507, "HTTP 507");
    const auto body = r ? json::parse(r->body, nullptr, false) : json();
    v.require(body.is_object() && body.value("outcome", "") == "oom", "outcome oom");
    const auto m = json::parse(cli.Get("/metrics")->body);
    v.require(m["pooled_isolates"].get<int>() == 0, "isolate absent from pool");
    v.require(m["live_isolates"].get<int>() == 0, "isolate destroyed");
    gw.stop();
    v.detail << "budget=" << budget / kMiB << "MiB alloc=" << alloc_mb << "MiB status=" << (r ? r->status : -1)
             << " pooled=" << m["pooled_isolates"];
}

void ac4(Verdict& v) {
    const auto t0 = steady::now();
    BenchOptions opt;
    opt.iterations = 1000;
    const auto rows = run_bench(opt);
    double cold = 0, warm = 0;
    for (const auto& r : rows) {
        if (r.name == "cold_invocation") cold = r.median_us;
        if (r.name == "warm_invocation") warm = r.median_us;
    }
    const double secs = seconds_since(t0);
    v.require(cold > 0 && warm > 0, "both medians measured");
    v.require(warm * 10.0 <= cold, "warm median >= 10x faster than cold");
    v.require(secs < 60.0, "runtime < 60 s");
    v.detail << "cold_median=" << cold << "us warm_median=" << warm << "us ratio=" << (warm > 0 ? cold / warm : 0)
             << " elapsed=" << secs << "s";
}

void ac5(Verdict& v) {
    RuntimeConfig rc;
    rc.reaper_period = std::chrono::milliseconds(0);
    rc.isolates.max_contexts = 4;
    Runtime rt(rc);
    // The spin keeps invocations in flight long enough to overlap.
    constexpr const char* kSlowCounter = R"(
count = 0
function main(args)
  count = count + 1
  local mine = count
  local x = 0
  for i = 1, 300000 do x = x + i end
  return { ctx = CONTEXT_ID, count = mine }
end
)";
    rt.register_function({"counter", "main", kSlowCounter, 8 * kMiB, "lua"});

    constexpr int kCalls = 100;
    std::vector<Invocation> out(kCalls);
    std::barrier sync(kCalls);
    std::vector<std::thread> threads;
    for (int i = 0; i < kCalls; ++i)
        threads.emplace_back([&, i] {
            sync.arrive_and_wait();
            out[static_cast<std::size_t>(i)] = rt.invoke("counter", "{}");
        });
    for (auto& t : threads) t.join();

    std::map<std::uint64_t, std::vector<int>> per_context;
    int ok = 0, foreign = 0;
    for (const auto& inv : out) {
        if (inv.outcome != Outcome::ok) continue;
        ++ok;
        const auto j = json::parse(inv.body);
        if (j["ctx"].get<std::uint64_t>() != inv.context_id) ++foreign;
        per_context[inv.context_id].push_back(j["count"].get<int>());
    }
    bool sequences = true;
    for (auto& [ctx, counts] : per_context) {
        std::sort(counts.begin(), counts.end());
        for (std::size_t i = 0; i < counts.size(); ++i) sequences = sequences && counts[i] == static_cast<int>(i + 1);
    }
    const int peak = rt.isolates().stats().peak_contexts_per_isolate;
    v.require(ok == kCalls, "all invocations ok");
    v.require(foreign == 0, "every result comes from its own context");
    v.require(sequences, "per-context counters are exactly 1..n");
    v.require(peak <= 4, "peak contexts per isolate <= 4");
    v.detail << "ok=" << ok << " contexts=" << per_context.size() << " peak_contexts=" << peak;
}

// Trace-only bounds on the bucketed memory timeline (bucket = 1 s, value =
// max within bucket). The lower bound on per-invocation memory counts, for
// each function, one worker of 30 MB + mem alive from each arrival until
// duration + keep-alive later. The upper bound on per-tenant memory allows,
// per bucket, one worker per tenant with any invocation in reach of its
// keep-alive, one isolate per invocation in reach of the isolate TTL, and the
// memory of every invocation whose admission-to-finish window touches it.
struct Oracle {
    double pi_mean_lower = 0;
    double pt_mean_upper = 0;
    std::int64_t pt_worker_peak_upper = 0;
};

Oracle memory_oracle(const std::vector<trace::TraceEvent>& ev, const replay::ReplayOptions& o) {
    const double mib = static_cast<double>(kMiB);
    const double boot = o.cost.runtime_cold_start_ms + o.cost.isolate_cold_start_us / 1000.0;
    const double worker = o.cost.per_worker_overhead_mb * mib;
    const double isolate = o.cost.per_isolate_overhead_mb * mib;

    double end_lo = 0, end_hi = 0;
    for (const auto& e : ev) {
        end_lo = std::max(end_lo, e.t_ms + e.duration_ms);
        end_hi = std::max(end_hi, e.t_ms + boot + e.duration_ms);
    }
    const auto n_lo = static_cast<std::size_t>(std::ceil(end_lo / 1000.0));
    const auto n_hi = static_cast<std::size_t>(std::ceil(end_hi / 1000.0));
    auto touches = [](double from, double to, std::size_t b, bool closed) {
        const double lo = static_cast<double>(b) * 1000.0, hi = lo + 1000.0;
        return closed ? (from < hi && to >= lo) : (from < hi && to > lo);
    };

    Oracle out;
    double pi_sum = 0;
    std::map<std::string, std::vector<const trace::TraceEvent*>> by_fn;
    for (const auto& e : ev) by_fn[e.function_id].push_back(&e);
    for (std::size_t b = 0; b < n_lo; ++b)
        for (const auto& [f, list] : by_fn)
            for (const auto* e : list)
                if (touches(e->t_ms, e->t_ms + e->duration_ms + o.keep_alive_ms, b, false)) {
                    pi_sum += worker + e->memory_mb * mib;
                    break;
                }
    out.pi_mean_lower = pi_sum / static_cast<double>(n_hi);

    double pt_sum = 0;
    for (std::size_t b = 0; b < n_hi; ++b) {
        std::map<std::string, double> tenant;
        for (const auto& e : ev) {
            const double finish = e.t_ms + boot + e.duration_ms;
            double add = 0;
            if (touches(e.t_ms, finish + o.keep_alive_ms, b, true)) tenant.try_emplace(e.tenant_id, worker);
            if (touches(e.t_ms, finish + o.isolate_ttl_ms, b, true)) add += isolate;
            if (touches(e.t_ms, finish, b, true)) add += e.memory_mb * mib;
            if (add > 0) tenant[e.tenant_id] += add;
        }
        for (const auto& [t, bytes] : tenant) {
            pt_sum += bytes;
            out.pt_worker_peak_upper = std::max(out.pt_worker_peak_upper, static_cast<std::int64_t>(bytes));
        }
    }
    out.pt_mean_upper = pt_sum / static_cast<double>(n_lo);
    return out;
}

void ac6(Verdict& v) {
    const auto t0 = steady::now();
    trace::SynthParams sp;
    sp.tenants = 8;
    sp.funcs_per_tenant = 4;
    sp.rate = 0.05;
    sp.duration_s = 600;
    sp.seed = 1;
    const auto events = trace::synthesize_trace(sp);
    replay::ReplayOptions base;

    const auto oracle = memory_oracle(events, base);
    v.require(oracle.pt_worker_peak_upper <= base.worker_cap_bytes, "oracle: one worker per tenant fits");
    v.require(oracle.pt_mean_upper <= 0.5 * oracle.pi_mean_lower, "oracle: PT upper <= 50% of PI lower");

    std::map<replay::Policy, replay::Summary> s;
    for (auto p : {replay::Policy::per_invocation, replay::Policy::per_function, replay::Policy::per_tenant}) {
        auto o = base;
        o.policy = p;
        s[p] = replay::compute_metrics(replay::replay_sim(events, o));
        v.require(s[p].rejected == 0, std::string(replay::to_string(p)) + " rejects nothing");
    }
    const auto& pi = s[replay::Policy::per_invocation];
    const auto& pf = s[replay::Policy::per_function];
    const auto& pt = s[replay::Policy::per_tenant];
    v.require(pt.mean_memory_bytes <= pf.mean_memory_bytes && pf.mean_memory_bytes <= pi.mean_memory_bytes,
              "mean memory PT <= PF <= PI");
    v.require(pt.p99_ms <= pf.p99_ms && pf.p99_ms <= pi.p99_ms, "p99 PT <= PF <= PI");
    v.require(pt.mean_memory_bytes <= 0.5 * pi.mean_memory_bytes, "PT mean memory <= 50% of PI");
    v.require(pi.mean_memory_bytes >= oracle.pi_mean_lower, "PI mean within oracle lower bound");
    v.require(pt.mean_memory_bytes <= oracle.pt_mean_upper, "PT mean within oracle upper bound");
    const double secs = seconds_since(t0);
    v.require(secs < 30.0, "runtime < 30 s");
    const double mb = 1e6;
    v.detail << "events=" << events.size() << " mean_mem_MB PI=" << pi.mean_memory_bytes / mb
             << " PF=" << pf.mean_memory_bytes / mb << " PT=" << pt.mean_memory_bytes / mb
             << " p99_ms PI=" << pi.p99_ms << " PF=" << pf.p99_ms << " PT=" << pt.p99_ms
             << " oracle PI>=" << oracle.pi_mean_lower / mb << " PT<=" << oracle.pt_mean_upper / mb
             << " elapsed=" << secs << "s";
}

void ac7(Verdict& v) {
    const auto t0 = steady::now();
    trace::SynthParams sp;
    sp.tenants = 2;
    sp.funcs_per_tenant = 2;
    sp.rate = 1.5;
    sp.duration_s = 60;
    sp.seed = 7;
    auto events = trace::synthesize_trace(sp);
    v.require(events.size() >= 200, "trace has 200 events");
    events.resize(std::min<std::size_t>(events.size(), 200));

    for (auto p : {replay::Policy::per_invocation, replay::Policy::per_function, replay::Policy::per_tenant}) {
        replay::ReplayOptions o;
        o.policy = p;
        const auto sim = replay::replay_sim(events, o);
        const auto live = replay::replay_live(events, o);
        const auto ms = replay::compute_metrics(sim), ml = replay::compute_metrics(live);
        const std::string name(replay::to_string(p));
        v.require(sim.workers_created == live.workers_created, name + " worker counts");
        v.require(sim.runtime_cold_starts == live.runtime_cold_starts &&
                      sim.isolate_cold_starts == live.isolate_cold_starts,
                  name + " cold-start counts");
        v.require(sim.rejected == live.rejected, name + " rejections");
        v.require(std::abs(ms.p50_ms - ml.p50_ms) <= 20.0, name + " p50 within 20 ms");
        v.detail << name << "{workers=" << sim.workers_created << "/" << live.workers_created
                 << " cold=" << sim.runtime_cold_starts << "+" << sim.isolate_cold_starts << "/"
                 << live.runtime_cold_starts << "+" << live.isolate_cold_starts << " rejected=" << ms.rejected << "/"
                 << ml.rejected << " p50=" << ms.p50_ms << "/" << ml.p50_ms << "} ";
    }
    const double secs = seconds_since(t0);
    v.require(secs < 180.0, "runtime < 3 min");
    v.detail << "elapsed=" << secs << "s";
}

void ac8(Verdict& v) {
    const auto t0 = steady::now();
    int histories = 0, good = 0;
    for (int threads = 2; threads <= 4; ++threads) {
        const auto seed = static_cast<std::uint64_t>(threads);
        for (const auto& t : {lincheck::check_registry(threads, 2000, seed), lincheck::check_pool(threads, 2000, seed)}) {
            histories += t.histories;
            good += t.linearizable;
        }
    }
    const double secs = seconds_since(t0);
    v.require(good == histories, "every history linearizable");
    v.require(secs < 120.0, "runtime < 2 min");
    v.detail << "histories=" << histories << " linearizable=" << good << " elapsed=" << secs << "s";
}

void ac9(Verdict& v) {
    int failures = 0, oom = 0, invocations = 0;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        std::mt19937_64 rng(seed);
        testing::ManualClock clock;
        RuntimeConfig rc;
        rc.memory_cap = 256 * kMiB;
        rc.reaper_period = std::chrono::milliseconds(0);
        rc.isolates.max_contexts = 1 + static_cast<int>(rng() % 4);
        rc.isolates.share_code_cache = rc.isolates.max_contexts > 1;
        Runtime rt(rc, EngineSet::defaults(), clock.source());
        const auto baseline = rt.memory().used();

        const std::vector<std::string> fids = {"syn", "lua", "echo"};
        auto install = [&](const std::string& fid) {
            if (fid == "syn") rt.register_function({fid, "main", R"({"alloc_mb":1,"run_ms":0})", 8 * kMiB, "synthetic"});
            if (fid == "lua") rt.register_function({fid, "main", testing::kCounterScript, 4 * kMiB, "lua"});
            if (fid == "echo") rt.register_function({fid, "echo", "echo", 2 * kMiB, "prebuilt"});
        };
        for (const auto& f : fids) install(f);

        auto random_args = [&] {
            if (rng() % 5 == 0) {
                const auto mb = rng() % 48;
                return json{{"emulate", {{"alloc_mb", mb}, {"run_ms", 0}}}}.dump();
            }
            return std::string("{}");
        };
        const int steps = 1 + static_cast<int>(rng() % 40);
        for (int s = 0; s < steps; ++s) {
            const auto& fid = fids[rng() % fids.size()];
            switch (rng() % 6) {
                case 0:
                case 1: {
                    auto inv = rt.invoke(fid, random_args());
                    ++invocations;
                    oom += inv.outcome == Outcome::oom;
                    break;
                }
                case 2: {
                    std::vector<std::future<Invocation>> batch;
                    const int n = 2 + static_cast<int>(rng() % 3);
                    for (int k = 0; k < n; ++k)
                        batch.push_back(std::async(std::launch::async, [&rt, fid, a = random_args()] {
                            return rt.invoke(fid, a);
                        }));
                    for (auto& f : batch) {
                        oom += f.get().outcome == Outcome::oom;
                        ++invocations;
                    }
                    break;
                }
                case 3: clock.advance(std::chrono::milliseconds(rng() % 8000)); break;
                case 4: rt.isolates().reap(); break;
                case 5:
                    rt.deregister(fid);
                    if (rng() % 2) install(fid);
                    break;
            }
        }
        clock.advance(rc.isolates.ttl + std::chrono::seconds(1));
        rt.isolates().reap();
        rt.isolates().drain();
        const auto st = rt.isolates().stats();
        if (rt.memory().used() != baseline || st.live_isolates != 0) ++failures;
    }
    v.require(failures == 0, "memory at baseline and no live isolates after every sequence");
    v.detail << "sequences=500 invocations=" << invocations << " oom=" << oom << " violations=" << failures;
}

}  // namespace

// With arguments, runs only the criteria whose ids (AC1..AC9) are listed.
int main(int argc, char** argv) {
    const std::set<std::string> only(argv + 1, argv + argc);
    const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
        {"AC1 interface conformance", ac1},   {"AC2 isolate pool TTL", ac2},
        {"AC3 budget enforcement", ac3},      {"AC4 warm/cold hierarchy", ac4},
        {"AC5 context isolation", ac5},       {"AC6 policy dominance", ac6},
        {"AC7 sim/live agreement", ac7},      {"AC8 linearizability", ac8},
        {"AC9 conservation", ac9},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && !only.count(name.substr(0, name.find(' ')))) continue;
        Verdict v;
        try {
            run(v);
        } catch (const std::exception& e) {
            v.ok = false;
            v.detail << "[exception: " << e.what() << "]";
        }
        failed += v.ok ? 0 : 1;
        std::printf("%s %s: %s\n", v.ok ? "PASS" : "FAIL", name.c_str(), v.detail.str().c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
