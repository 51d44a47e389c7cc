#include <algorithm>
#include <barrier>
#include <map>
#include <future>
#include <set>
#include <thread>

#include "doctest.h"
#include "isovisor/runtime.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace isovisor;
using namespace isovisor::testing;

namespace {

RuntimeConfig quiet(std::int64_t cap = 2 * kGiB) {
    RuntimeConfig rc;
    rc.memory_cap = cap;
    rc.reaper_period = std::chrono::milliseconds(0);
    return rc;
}

FunctionDescriptor synth(std::string fid, std::string spec, std::int64_t mem = 16 * kMiB) {
    return {std::move(fid), "main", std::move(spec), mem, "synthetic"};
}

}  // namespace

TEST_CASE("runtime: one cold and nine warm invocations compile once") {
    Runtime rt(quiet());
    REQUIRE(rt.register_function(synth("f", R"({"alloc_mb":1,"run_ms":0,"echo":true})")));
    for (int i = 0; i < 10; ++i) {
        auto inv = rt.invoke("f", R"({"i":)" + std::to_string(i) + "}");
        CHECK(inv.outcome == Outcome::ok);
        CHECK(inv.body == R"({"i":)" + std::to_string(i) + "}");
        CHECK(inv.cold == (i == 0));
    }
    CHECK(rt.cold_invocations() == 1);
    CHECK(rt.warm_invocations() == 9);
    CHECK(rt.isolates().stats().compiles == 1);
}

TEST_CASE("runtime: unregistered and deregistered functions") {
    Runtime rt(quiet());
    CHECK(rt.invoke("ghost", "{}").outcome == Outcome::not_registered);
    REQUIRE(rt.register_function(synth("f", R"({"alloc_mb":0,"run_ms":0})")));
    CHECK(rt.invoke("f", "{}").outcome == Outcome::ok);
    CHECK(rt.isolates().stats().pooled_isolates == 1);
    CHECK(rt.deregister("f"));
    CHECK(rt.isolates().stats().pooled_isolates == 0);
    CHECK(rt.isolates().stats().live_isolates == 0);
    CHECK(rt.invoke("f", "{}").outcome == Outcome::not_registered);
    CHECK_FALSE(rt.deregister("f"));
}

TEST_CASE("runtime: re-registered fid never reuses isolates of the old code") {
    Runtime rt(quiet());
    REQUIRE(rt.register_function({"f", "main", "function main(a) return { v = 1 } end", 8 * kMiB, "lua"}));
    CHECK(rt.invoke("f", "{}").body == R"({"v":1})");
    REQUIRE(rt.deregister("f"));
    REQUIRE(rt.register_function({"f", "main", "function main(a) return { v = 2 } end", 8 * kMiB, "lua"}));
    CHECK(rt.invoke("f", "{}").body == R"({"v":2})");
}

TEST_CASE("runtime: in-flight invocations finish across deregistration") {
    Runtime rt(quiet());
    REQUIRE(rt.register_function(synth("slow", R"({"alloc_mb":0,"run_ms":200,"echo":true})")));
    auto pending = std::async(std::launch::async, [&] { return rt.invoke("slow", R"({"k":1})"); });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(rt.deregister("slow"));
    auto inv = pending.get();
    CHECK(inv.outcome == Outcome::ok);
    CHECK(inv.body == R"({"k":1})");
    CHECK(rt.isolates().stats().live_isolates == 0);
    CHECK(rt.memory().used() == 0);
}

TEST_CASE("runtime: allocation over the isolate budget is oom and drops the isolate") {
    auto rc = quiet();
    rc.isolates.share_code_cache = false;
    Runtime rt(rc);
    REQUIRE(rt.register_function(synth("big", R"({"alloc_mb":17,"run_ms":0})")));
    auto inv = rt.invoke("big", "{}");
    CHECK(inv.outcome == Outcome::oom);
    CHECK_FALSE(rt.isolates().is_pooled(inv.isolate_id));
    CHECK(rt.isolates().stats().live_isolates == 0);
}

TEST_CASE("runtime: runtime cap refusal is oom") {
    Runtime rt(quiet(16 * kMiB));
    REQUIRE(rt.register_function(synth("f", R"({"alloc_mb":20,"run_ms":0})", 64 * kMiB)));
    auto inv = rt.invoke("f", "{}");
    CHECK(inv.outcome == Outcome::oom);
    CHECK(rt.memory().used() == 0);
    CHECK(rt.memory().peak() <= 16 * kMiB);
}

TEST_CASE("runtime: prewarmed isolates serve the first invocation warm") {
    auto rc = quiet();
    rc.isolates.prewarm_n = 2;
    Runtime rt(rc);
    REQUIRE(rt.register_function(synth("f", R"({"alloc_mb":0,"run_ms":0})")));
    CHECK(rt.isolates().stats().pooled_isolates == 2);
    CHECK_FALSE(rt.invoke("f", "{}").cold);
}

TEST_CASE("runtime: two concurrent invocations share one isolate in two contexts") {
    Runtime rt(quiet());
    REQUIRE(rt.register_function(synth("f", R"({"alloc_mb":0,"run_ms":100})")));
    auto call = [&] { return rt.invoke("f", "{}"); };
    // Simultaneous cold misses may each create an isolate; start the second
    // call once the first is executing.
    auto a = std::async(std::launch::async, call);
    while (rt.isolates().stats().executing_isolates == 0) std::this_thread::yield();
    auto b = std::async(std::launch::async, call);
    const auto ra = a.get();
    const auto rb = b.get();
    CHECK(ra.outcome == Outcome::ok);
    CHECK(rb.outcome == Outcome::ok);
    CHECK(ra.isolate_id == rb.isolate_id);
    CHECK(ra.context_id != rb.context_id);
    CHECK(rt.isolates().stats().isolates_created == 1);
    CHECK(rt.isolates().stats().peak_contexts_per_isolate == 2);
}

TEST_CASE("runtime: lua counters stay per context under concurrency") {
    Runtime rt(quiet());
    REQUIRE(rt.register_function({"c", "main", kCounterScript, 8 * kMiB, "lua"}));
    std::vector<std::future<Invocation>> calls;
    for (int i = 0; i < 40; ++i)
        calls.push_back(std::async(std::launch::async, [&] { return rt.invoke("c", "{}"); }));
    std::map<std::uint64_t, std::vector<int>> seen;
    for (auto& c : calls) {
        auto inv = c.get();
        REQUIRE(inv.outcome == Outcome::ok);
        auto j = nlohmann::json::parse(inv.body);
        CHECK(j["ctx"].get<std::uint64_t>() == inv.context_id);
        seen[inv.context_id].push_back(j["count"].get<int>());
    }
    for (auto& [ctx, counts] : seen) {
        std::sort(counts.begin(), counts.end());
        for (std::size_t i = 0; i < counts.size(); ++i) CHECK(counts[i] == static_cast<int>(i + 1));
    }
    CHECK(rt.isolates().stats().peak_contexts_per_isolate <= 4);
}
