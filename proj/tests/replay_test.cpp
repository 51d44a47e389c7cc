#include <filesystem>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "isovisor/replay.hpp"
#include "json.hpp"

using namespace isovisor;
using namespace isovisor::replay;
using trace::TraceEvent;

namespace {

ReplayOptions with(Policy p) {
    ReplayOptions o;
    o.policy = p;
    return o;
}

constexpr std::int64_t MiB = kMiB;

/// One tenant, four functions, two overlapping invocations each.
std::vector<TraceEvent> four_function_tenant() {
    std::vector<TraceEvent> ev;
    for (int i = 0; i < 8; ++i)
        ev.push_back({10.0 * i, "t", "f" + std::to_string(i % 4), 1000, 128});
    return ev;
}

}  // namespace

TEST_CASE("policy names") {
    CHECK(parse_policy("per-tenant") == Policy::per_tenant);
    CHECK(parse_policy("per-function") == Policy::per_function);
    CHECK(parse_policy("per-invocation") == Policy::per_invocation);
    CHECK_FALSE(parse_policy("bogus"));
    CHECK(to_string(Policy::per_invocation) == "per-invocation");
}

TEST_CASE("nearest-rank percentile") {
    CHECK(percentile({}, 50) == 0);
    CHECK(percentile({5}, 99) == 5);
    CHECK(percentile({1, 2, 3, 4}, 50) == 2);
    CHECK(percentile({4, 3, 2, 1}, 75) == 3);
    CHECK(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 90) == 9);
    CHECK(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 99) == 10);
}

TEST_CASE("two overlapping invocations: one worker each per-invocation") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 500, 128}, {100, "t", "f", 500, 128}};
    auto r = replay_sim(ev, with(Policy::per_invocation));
    CHECK(r.workers_created == 2);
    CHECK(r.runtime_cold_starts == 2);
    CHECK(r.isolate_cold_starts == 0);
}

TEST_CASE("two overlapping invocations share a consolidating worker") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 500, 128}, {100, "t", "f", 500, 128}};
    for (auto p : {Policy::per_function, Policy::per_tenant}) {
        auto r = replay_sim(ev, with(p));
        CHECK(r.workers_created == 1);
        CHECK(r.runtime_cold_starts == 1);
        CHECK(r.isolate_cold_starts == 1);
    }
}

TEST_CASE("four overlapping functions of one tenant") {
    std::vector<TraceEvent> ev;
    for (int i = 0; i < 4; ++i) ev.push_back({10.0 * i, "t", "f" + std::to_string(i), 1000, 128});
    CHECK(replay_sim(ev, with(Policy::per_function)).workers_created == 4);
    auto pt = replay_sim(ev, with(Policy::per_tenant));
    CHECK(pt.workers_created == 1);
    CHECK(pt.isolate_cold_starts == 4);
}

TEST_CASE("footprints match the analytic worker-count oracle") {
    const auto ev = four_function_tenant();
    const auto pi = compute_metrics(replay_sim(ev, with(Policy::per_invocation)));
    const auto pf = compute_metrics(replay_sim(ev, with(Policy::per_function)));
    const auto pt = compute_metrics(replay_sim(ev, with(Policy::per_tenant)));
    CHECK(pi.workers_created == 8);
    CHECK(pf.workers_created == 4);
    CHECK(pt.workers_created == 1);
    // Every invocation overlaps every other, so each bucket holds the peak.
    CHECK(pi.max_memory_bytes == 8 * (30 + 128) * MiB);
    CHECK(pf.max_memory_bytes == 4 * (30 + 1 + 2 * 128) * MiB);
    CHECK(pt.max_memory_bytes == (30 + 4 * 1 + 8 * 128) * MiB);
    CHECK(pi.mean_memory_bytes == doctest::Approx(8.0 * (30 + 128) * MiB));
    CHECK(pt.mean_memory_bytes < pf.mean_memory_bytes);
    CHECK(pf.mean_memory_bytes < pi.mean_memory_bytes);
    // Every invocation waits for a booting worker; consolidation adds the isolate start.
    CHECK(pi.p99_ms == 1200);
    CHECK(pf.p99_ms == doctest::Approx(1200.5));
    CHECK(pt.p99_ms == doctest::Approx(1200.5));
}

TEST_CASE("single cold event latency is cold start plus duration") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 64}};
    CHECK(compute_metrics(replay_sim(ev, with(Policy::per_invocation))).p99_ms == 300);
    CHECK(compute_metrics(replay_sim(ev, with(Policy::per_tenant))).p99_ms == doctest::Approx(300.5));
}

TEST_CASE("empty trace gives an empty report") {
    auto r = replay_sim({}, with(Policy::per_tenant));
    auto s = compute_metrics(r);
    CHECK(r.memory_timeline.empty());
    CHECK(r.worker_timeline.empty());
    CHECK(s.events == 0);
    CHECK(s.p50_ms == 0);
    CHECK(s.mean_memory_bytes == 0);
    CHECK(s.max_active_workers == 0);
}

TEST_CASE("per-invocation reuses an idle worker within keep-alive") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 128}, {1000, "t", "f", 100, 128}};
    auto r = replay_sim(ev, with(Policy::per_invocation));
    CHECK(r.workers_created == 1);
    CHECK_FALSE(r.records[1].runtime_cold);
    CHECK(r.records[1].latency_ms == 100);
}

TEST_CASE("per-invocation worker does not serve a bigger invocation") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 128}, {1000, "t", "f", 100, 256}};
    CHECK(replay_sim(ev, with(Policy::per_invocation)).workers_created == 2);
}

TEST_CASE("keep-alive expiry is strict") {
    auto o = with(Policy::per_invocation);
    o.keep_alive_ms = 1000;
    // Finishes at 300; idle for exactly 1000 ms at t = 1300.
    std::vector<TraceEvent> at = {{0, "t", "f", 100, 128}, {1300, "t", "f", 100, 128}};
    CHECK(replay_sim(at, o).workers_created == 1);
    std::vector<TraceEvent> after = {{0, "t", "f", 100, 128}, {1301, "t", "f", 100, 128}};
    CHECK(replay_sim(after, o).workers_created == 2);
}

TEST_CASE("isolate TTL inside a consolidating worker") {
    auto o = with(Policy::per_function);
    o.isolate_ttl_ms = 1000;
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 128}, {5000, "t", "f", 100, 128}};
    auto r = replay_sim(ev, o);
    CHECK(r.workers_created == 1);
    CHECK(r.isolate_cold_starts == 2);
    CHECK(r.records[1].latency_ms == doctest::Approx(100.5));
    // Between the isolate's expiry and the next arrival only the worker remains.
    REQUIRE(r.memory_timeline.size() >= 4);
    CHECK(r.memory_timeline[3] == 30 * MiB);
}

TEST_CASE("requests wait for a booting worker") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 1000, 128}, {50, "t", "f", 1000, 128}};
    auto r = replay_sim(ev, with(Policy::per_function));
    CHECK(r.records[1].start_ms == 200);
    CHECK(r.records[1].latency_ms == 1150);
}

TEST_CASE("global cap rejects what does not fit") {
    auto o = with(Policy::per_invocation);
    o.global_cap_bytes = 300 * MiB;
    std::vector<TraceEvent> ev = {{0, "t", "f", 500, 128}, {100, "t", "f", 500, 128}, {1000, "t", "f", 500, 128}};
    auto r = replay_sim(ev, o);
    CHECK(r.rejected == std::vector<std::size_t>{1});
    CHECK(r.workers_created == 1);
    CHECK(r.peak_memory_bytes <= o.global_cap_bytes);
    auto s = compute_metrics(r);
    CHECK(s.completed + s.rejected == 3);
}

TEST_CASE("worker cap forces a second consolidating worker") {
    auto o = with(Policy::per_tenant);
    o.worker_cap_bytes = 300 * MiB;
    std::vector<TraceEvent> ev = {{0, "t", "f", 500, 128}, {10, "t", "g", 500, 128}, {20, "t", "h", 500, 128}};
    auto r = replay_sim(ev, o);
    CHECK(r.workers_created == 2);
    CHECK(r.records[2].worker_id != r.records[0].worker_id);
}

TEST_CASE("global cap holds on a large synthetic trace") {
    auto ev = trace::synthesize_trace({8, 4, 0.2, 120, 7});
    for (auto p : {Policy::per_invocation, Policy::per_function, Policy::per_tenant}) {
        auto o = with(p);
        o.global_cap_bytes = 3 * kGiB;
        auto r = replay_sim(ev, o);
        CHECK(r.peak_memory_bytes <= o.global_cap_bytes);
        auto s = compute_metrics(r);
        CHECK(s.completed + s.rejected == ev.size());
        if (p == Policy::per_invocation) CHECK(s.rejected > 0);
    }
}

TEST_CASE("sim replay is deterministic") {
    auto ev = trace::synthesize_trace({4, 3, 0.1, 120, 3});
    auto a = replay_sim(ev, with(Policy::per_tenant));
    auto b = replay_sim(ev, with(Policy::per_tenant));
    CHECK(summary_json(compute_metrics(a)) == summary_json(compute_metrics(b)));
    CHECK(a.memory_timeline == b.memory_timeline);
}

TEST_CASE("timeline buckets keep the max within each second") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 128}};
    auto r = replay_sim(ev, with(Policy::per_invocation));
    REQUIRE(r.memory_timeline.size() == 1);
    CHECK(r.memory_timeline[0] == 158 * MiB);
    CHECK(r.worker_timeline[0] == 1);
}

TEST_CASE("report files") {
    auto dir = std::filesystem::temp_directory_path() / "isovisor-report-test";
    std::filesystem::remove_all(dir);
    auto r = replay_sim(four_function_tenant(), with(Policy::per_tenant));
    auto s = compute_metrics(r);
    write_report(dir, r, s);
    std::ifstream mem(dir / "memory_timeline.csv");
    std::string line;
    std::getline(mem, line);
    CHECK(line == "t_s,bytes");
    std::getline(mem, line);
    CHECK(line == "0," + std::to_string(r.memory_timeline[0]));
    std::ifstream cdf(dir / "latency_cdf.csv");
    std::getline(cdf, line);
    CHECK(line == "latency_ms,fraction");
    int rows = 0;
    std::string last;
    while (std::getline(cdf, line)) {
        ++rows;
        last = line;
    }
    CHECK(rows == 8);
    CHECK(last.ends_with(",1"));
    std::ifstream sj(dir / "summary.json");
    auto j = nlohmann::json::parse(sj);
    CHECK(j["policy"] == "per-tenant");
    CHECK(j["events"] == 8);
    CHECK(j["workers_created"] == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("live replay matches sim on a small trace") {
    std::vector<TraceEvent> ev = {
        {0, "a", "a1", 300, 8}, {20, "a", "a2", 300, 8}, {40, "a", "a1", 300, 8},
        {400, "b", "b1", 200, 8}, {700, "a", "a1", 100, 8},
    };
    for (auto p : {Policy::per_invocation, Policy::per_function, Policy::per_tenant}) {
        auto o = with(p);
        auto sim = replay_sim(ev, o);
        auto live = replay_live(ev, o);
        CHECK(live.workers_created == sim.workers_created);
        CHECK(live.runtime_cold_starts == sim.runtime_cold_starts);
        CHECK(live.isolate_cold_starts == sim.isolate_cold_starts);
        CHECK(live.rejected == sim.rejected);
        CHECK(std::abs(compute_metrics(live).p50_ms - compute_metrics(sim).p50_ms) <= 20.0);
    }
}
