#include <algorithm>
#include <map>
#include <random>
#include <barrier>
#include <thread>
#include <vector>

#include "doctest.h"
#include "isovisor/isolate.hpp"
#include "support.hpp"

using namespace isovisor;
using namespace isovisor::testing;
using namespace std::chrono_literals;

namespace {

struct Fixture {
    ManualClock clock;
    MemoryAccount account{2 * kGiB};
    IsolateManager mgr;

    explicit Fixture(IsolateConfig cfg = {}) : mgr(EngineSet::defaults(), account, cfg, clock.source()) {}

    RunResult run(Isolate& iso, const DescriptorPtr& fn, std::string args = "{}") {
        return mgr.run_in_isolate(iso, ObjectHandle<DescriptorPtr>(fn), ObjectHandle<std::string>(std::move(args)));
    }
};

}  // namespace

TEST_CASE("object handle is single use") {
    ObjectHandle<std::string> h(std::string("x"));
    CHECK(h.pinned());
    CHECK(h.retrieve() == "x");
    CHECK_FALSE(h.pinned());
    CHECK_THROWS_AS(h.retrieve(), HandleConsumed);
    ObjectHandle<int> empty;
    CHECK_THROWS_AS(empty.retrieve(), HandleConsumed);
}

TEST_CASE("pool: empty poll, MRU order, doomed offers dropped") {
    MemoryAccount account(kGiB);
    auto engines = EngineSet::defaults();
    auto fn = synthetic_fn("f");
    auto make = [&](std::uint64_t id) {
        return std::make_shared<Isolate>(id, fn, *engines->find("synthetic"), 16 * kMiB, 1, kMiB, account);
    };
    IsolatePool pool;
    CHECK(pool.poll("f") == nullptr);

    auto i1 = make(1);
    CHECK(pool.offer("f", i1));
    CHECK(pool.poll("f") == i1);
    CHECK(pool.size() == 0);

    auto i2 = make(2);
    CHECK(pool.offer("f", i1));
    CHECK(pool.offer("f", i2));
    CHECK(pool.poll("f") == i2);
    CHECK(pool.poll("f") == i1);
    CHECK(pool.poll("f") == nullptr);

    i1->doom();
    CHECK_FALSE(pool.offer("f", i1));
    CHECK(pool.size() == 0);
    CHECK_FALSE(pool.contains(1));
}

TEST_CASE("pool: random offer/poll sequences match a stack per fid") {
    MemoryAccount account(kGiB);
    auto engines = EngineSet::defaults();
    std::vector<IsolatePtr> all;
    for (std::uint64_t id = 1; id <= 6; ++id)
        all.push_back(std::make_shared<Isolate>(id, synthetic_fn(id % 2 ? "a" : "b"), *engines->find("synthetic"),
                                                4 * kMiB, 1, 0, account));
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        std::mt19937_64 rng(seed);
        IsolatePool pool;
        std::map<std::string, std::vector<IsolatePtr>> model;
        std::vector<IsolatePtr> out = all;
        for (int step = 0; step < 60; ++step) {
            if (!out.empty() && rng() % 2) {
                const auto k = rng() % out.size();
                auto iso = out[k];
                out.erase(out.begin() + static_cast<long>(k));
                pool.offer(iso->fid(), iso);
                model[iso->fid()].push_back(iso);
            } else {
                const std::string fid = rng() % 2 ? "a" : "b";
                auto got = pool.poll(fid);
                auto& stack = model[fid];
                if (stack.empty()) {
                    CHECK(got == nullptr);
                } else {
                    CHECK(got == stack.back());
                    stack.pop_back();
                    out.push_back(got);
                }
            }
        }
        CHECK(pool.size() == all.size() - out.size());
    }
}

TEST_CASE("first isolate carries only the base heap") {
    Fixture f;
    auto iso = f.mgr.create_isolate(synthetic_fn("f"));
    CHECK(iso->allocator().total() == kMiB);
    CHECK(iso->context_count() == 0);
    CHECK_FALSE(iso->has_program());
    CHECK(iso->budget() == 4 * 16 * kMiB);
    CHECK(f.account.used() == kMiB);
    iso.reset();
    CHECK(f.account.used() == 0);
}

TEST_CASE("budget is mem when code-cache sharing is off") {
    IsolateConfig cfg;
    cfg.share_code_cache = false;
    Fixture f(cfg);
    CHECK(f.mgr.create_isolate(synthetic_fn("f"))->budget() == 16 * kMiB);
}

TEST_CASE("creation without base-heap headroom is refused") {
    ManualClock clock;
    MemoryAccount account(kMiB + kMiB / 2);
    IsolateManager mgr(EngineSet::defaults(), account, {}, clock.source());
    auto first = mgr.create_isolate(synthetic_fn("f"));
    CHECK_THROWS_AS(mgr.create_isolate(synthetic_fn("f")), GlobalMemoryExhausted);
    CHECK(account.used() == kMiB);
}

TEST_CASE("compiling twice in one isolate compiles once") {
    Fixture f;
    auto fn = synthetic_fn("f");
    auto iso = f.mgr.create_isolate(fn);
    const auto before = GuestEngine::compiles_total();
    bool compiled = false;
    auto p1 = iso->program(&compiled);
    CHECK(compiled);
    auto p2 = iso->program(&compiled);
    CHECK_FALSE(compiled);
    CHECK(p1 == p2);
    CHECK(GuestEngine::compiles_total() == before + 1);
}

TEST_CASE("four contexts share one compile") {
    Fixture f;
    auto fn = std::make_shared<const FunctionDescriptor>(FunctionDescriptor{"c", "main", kCounterScript, 8 * kMiB, "lua"});
    auto iso = f.mgr.create_isolate(fn);
    const auto before = GuestEngine::compiles_total();
    std::vector<GuestContext*> held;
    for (int i = 0; i < 4; ++i) {
        bool created = false;
        held.push_back(&iso->bind_context(&created));
        CHECK(created);
    }
    CHECK(GuestEngine::compiles_total() == before + 1);
    CHECK(iso->context_count() == 4);
    CHECK_THROWS_AS(iso->bind_context(), ContextError);
    for (auto* c : held) iso->unbind_context(*c);
    CHECK(iso->busy_contexts() == 0);
    CHECK(iso->peak_busy_contexts() == 4);
}

TEST_CASE("cold then warm invocation path") {
    Fixture f;
    auto fn = synthetic_fn("f", R"({"alloc_mb":0,"run_ms":0,"echo":true})");

    auto lease = f.mgr.acquire(fn);
    CHECK(lease.cold());
    auto r = f.run(lease.isolate(), fn, R"({"a":1})");
    CHECK(r.outcome == Outcome::ok);
    CHECK(r.compiled);
    CHECK(r.context_created);
    CHECK(r.result.retrieve() == R"({"a":1})");
    const auto id = lease.isolate().id();
    lease.release();
    CHECK(f.mgr.is_pooled(id));

    auto warm = f.mgr.acquire(fn);
    CHECK_FALSE(warm.cold());
    CHECK(warm.isolate().id() == id);
    auto r2 = f.run(warm.isolate(), fn);
    CHECK_FALSE(r2.compiled);
    CHECK_FALSE(r2.context_created);
    CHECK(f.mgr.stats().compiles == 1);
}

TEST_CASE("oom destroys the isolate instead of pooling it") {
    Fixture f;
    auto fn = synthetic_fn("f", R"({"alloc_mb":100,"run_ms":0})", 16 * kMiB);
    std::uint64_t id = 0;
    {
        auto lease = f.mgr.acquire(fn);
        id = lease.isolate().id();
        auto r = f.run(lease.isolate(), fn);
        CHECK(r.outcome == Outcome::oom);
        lease.poison();
    }
    CHECK_FALSE(f.mgr.is_pooled(id));
    CHECK_FALSE(f.mgr.is_live(id));
    CHECK(f.mgr.stats().live_isolates == 0);
    CHECK(f.account.used() == 0);
}

TEST_CASE("guest errors keep the isolate") {
    Fixture f;
    auto fn = std::make_shared<const FunctionDescriptor>(
        FunctionDescriptor{"e", "main", "function main(a) error('x') end", 8 * kMiB, "lua"});
    std::uint64_t id = 0;
    {
        auto lease = f.mgr.acquire(fn);
        id = lease.isolate().id();
        CHECK(f.run(lease.isolate(), fn).outcome == Outcome::guest_error);
    }
    CHECK(f.mgr.is_pooled(id));
}

TEST_CASE("compile errors are guest errors and keep the isolate") {
    Fixture f;
    auto fn = synthetic_fn("bad", R"({"alloc_mb":0})");
    std::uint64_t id = 0;
    {
        auto lease = f.mgr.acquire(fn);
        id = lease.isolate().id();
        CHECK(f.run(lease.isolate(), fn).outcome == Outcome::guest_error);
        CHECK(f.run(lease.isolate(), fn).outcome == Outcome::guest_error);
    }
    CHECK(f.mgr.is_pooled(id));
}

TEST_CASE("reap honours the TTL strictly") {
    Fixture f;
    auto fn = synthetic_fn("f");
    { auto lease = f.mgr.acquire(fn); }
    CHECK(f.mgr.stats().pooled_isolates == 1);

    f.clock.advance(9s);
    CHECK(f.mgr.reap() == 0);
    f.clock.advance(1s);
    CHECK(f.mgr.reap() == 0);  // exactly the TTL
    f.clock.advance(1s);
    CHECK(f.mgr.reap() == 1);
    CHECK(f.mgr.stats().pooled_isolates == 0);
    CHECK(f.account.used() == 0);
}

TEST_CASE("reaping five idle isolates releases their charges") {
    Fixture f;
    std::vector<IsolateManager::Lease> leases;
    std::vector<DescriptorPtr> fns;
    for (int i = 0; i < 5; ++i) fns.push_back(synthetic_fn("f" + std::to_string(i)));
    for (auto& fn : fns) leases.push_back(f.mgr.acquire(fn));
    std::int64_t charged = 0;
    for (auto& l : leases) charged += l.isolate().allocator().total();
    leases.clear();
    const auto before = f.account.used();
    CHECK(before == charged);
    f.clock.advance(11s);
    CHECK(f.mgr.reap() == 5);
    CHECK(before - f.account.used() == charged);
}

TEST_CASE("reap never touches executing isolates") {
    Fixture f;
    auto fn = synthetic_fn("f");
    auto lease = f.mgr.acquire(fn);
    f.clock.advance(60s);
    CHECK(f.mgr.reap() == 0);
    CHECK(f.mgr.is_live(lease.isolate().id()));
}

TEST_CASE("doom: pooled isolates die, executing ones on return") {
    Fixture f;
    auto fn = synthetic_fn("f");
    { auto a = f.mgr.acquire(fn); }
    auto busy = f.mgr.acquire(fn);
    auto extra = f.mgr.create_isolate(fn);
    f.mgr.offer("f", extra);
    CHECK(f.mgr.stats().pooled_isolates == 1);
    f.mgr.doom("f");
    CHECK(f.mgr.stats().pooled_isolates == 0);
    const auto id = busy.isolate().id();
    busy.release();
    CHECK_FALSE(f.mgr.is_live(id));
}

TEST_CASE("executing isolate with a free context takes co-located invocations") {
    Fixture f;
    auto fn = synthetic_fn("f");
    auto a = f.mgr.acquire(fn);
    auto b = f.mgr.acquire(fn);
    CHECK(a.isolate().id() == b.isolate().id());
    CHECK_FALSE(b.cold());
    auto c = f.mgr.acquire(fn);
    auto d = f.mgr.acquire(fn);
    auto e = f.mgr.acquire(fn);  // fifth concurrent: a new isolate
    CHECK(e.cold());
    CHECK(e.isolate().id() != a.isolate().id());
}

TEST_CASE("without sharing every concurrent invocation gets its own isolate") {
    IsolateConfig cfg;
    cfg.share_code_cache = false;
    Fixture f(cfg);
    auto fn = synthetic_fn("f");
    auto a = f.mgr.acquire(fn);
    auto b = f.mgr.acquire(fn);
    CHECK(a.isolate().id() != b.isolate().id());
}

TEST_CASE("prewarm fills the pool") {
    Fixture f;
    auto fn = synthetic_fn("f");
    f.mgr.prewarm(fn, 3);
    CHECK(f.mgr.stats().pooled_isolates == 3);
    auto lease = f.mgr.acquire(fn);
    CHECK_FALSE(lease.cold());
}

TEST_CASE("concurrent contexts never exceed max_contexts per isolate") {
    Fixture f;
    auto fn = synthetic_fn("f", R"({"alloc_mb":0,"run_ms":5})");
    std::vector<std::thread> threads;
    std::barrier sync(16);
    for (int t = 0; t < 16; ++t)
        threads.emplace_back([&] {
            sync.arrive_and_wait();
            for (int i = 0; i < 10; ++i) {
                auto lease = f.mgr.acquire(fn);
                auto r = f.run(lease.isolate(), fn);
                CHECK(r.outcome == Outcome::ok);
            }
        });
    for (auto& t : threads) t.join();
    CHECK(f.mgr.stats().peak_contexts_per_isolate <= 4);
    CHECK(f.mgr.stats().executing_isolates == 0);
}

TEST_CASE("128 sequential creations are measured") {
    Fixture f;
    auto fn = synthetic_fn("f");
    std::vector<IsolatePtr> live;
    for (int i = 0; i < 128; ++i) live.push_back(f.mgr.create_isolate(fn));
    auto lat = f.mgr.creation_latencies_us();
    REQUIRE(lat.size() == 128);
    std::sort(lat.begin(), lat.end());
    MESSAGE("median isolate creation at 128 live isolates: " << lat[64] << " us");
    CHECK(lat[64] < 5000.0);
    CHECK(f.account.used() == 128 * kMiB);
}

TEST_CASE("drain empties the pool and restores the account") {
    Fixture f;
    for (int i = 0; i < 4; ++i) f.mgr.offer("f", f.mgr.create_isolate(synthetic_fn("f")));
    CHECK(f.mgr.drain() == 4);
    CHECK(f.account.used() == 0);
    CHECK(f.mgr.stats().live_isolates == 0);
}
