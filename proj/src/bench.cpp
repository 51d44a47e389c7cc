#include "isovisor/bench.hpp"

#include <chrono>
#include <random>
#include <sstream>
#include <algorithm>
#include <stdexcept>

#include "isovisor/replay.hpp"
#include "isovisor/runtime.hpp"

namespace isovisor {

namespace {

using steady = std::chrono::steady_clock;

double us_since(steady::time_point start) {
    return std::chrono::duration<double, std::micro>(steady::now() - start).count();
}

BenchRow finish(std::string name, std::vector<double> samples) {
    BenchRow row{std::move(name), std::move(samples)};
    row.median_us = replay::percentile(row.samples_us, 50);
    row.p99_us = replay::percentile(row.samples_us, 99);
    return row;
}

void expect_ok(const Invocation& inv) {
    if (inv.outcome != Outcome::ok) throw std::runtime_error("bench invocation failed: " + inv.body);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& o) {
    if (o.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (o.concurrent_isolates < 0) throw std::invalid_argument("concurrent-isolates must be >= 0");

    RuntimeConfig rc;
    rc.reaper_period = std::chrono::milliseconds(0);
    rc.memory_cap = std::max<std::int64_t>(2 * kGiB, (o.concurrent_isolates + 16) * 8 * kMiB);
    Runtime rt(rc, EngineSet::defaults(SyntheticEngine::Options{true}));
    const std::string fid = "bench-noop";
    rt.register_function({fid, "main", R"({"alloc_mb":0,"run_ms":0})", 4 * kMiB, "synthetic"});
    const auto desc = rt.lookup(fid);
    auto& iso = rt.isolates();

    // Arguments vary per call so no layer can memoize a response.
    std::mt19937_64 rng(o.seed);
    auto args = [&] { return R"({"nonce":)" + std::to_string(rng() >> 12) + "}"; };

    std::vector<IsolatePtr> resident;
    for (int i = 0; i < o.concurrent_isolates; ++i) resident.push_back(iso.create_isolate(desc));

    std::vector<double> create, poll_hit, cold, warm;
    for (int i = 0; i < o.iterations; ++i) {
        const auto t = steady::now();
        auto fresh = iso.create_isolate(desc);
        create.push_back(us_since(t));
        fresh.reset();
    }

    iso.drain();
    expect_ok(rt.invoke(fid, args()));
    for (int i = 0; i < o.iterations; ++i) {
        const auto t = steady::now();
        auto hit = iso.poll(fid);
        poll_hit.push_back(us_since(t));
        if (!hit) throw std::runtime_error("bench pool miss");
        iso.offer(fid, std::move(hit));
    }

    for (int i = 0; i < o.iterations; ++i) {
        iso.drain();
        const auto a = args();
        const auto t = steady::now();
        auto inv = rt.invoke(fid, a);
        cold.push_back(us_since(t));
        expect_ok(inv);
        if (!inv.cold) throw std::runtime_error("bench cold invocation was served warm");
    }

    expect_ok(rt.invoke(fid, args()));
    for (int i = 0; i < o.iterations; ++i) {
        const auto a = args();
        const auto t = steady::now();
        auto inv = rt.invoke(fid, a);
        warm.push_back(us_since(t));
        expect_ok(inv);
        if (inv.cold) throw std::runtime_error("bench warm invocation was served cold");
    }

    resident.clear();
    iso.drain();
    return {finish("isolate_cold_create", std::move(create)), finish("warm_poll_hit", std::move(poll_hit)),
            finish("cold_invocation", std::move(cold)), finish("warm_invocation", std::move(warm))};
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "name,iterations,median_us,p99_us\n";
    for (const auto& r : rows) out << r.name << ',' << r.samples_us.size() << ',' << r.median_us << ',' << r.p99_us << '\n';
    return out.str();
}

}  // namespace isovisor
