#include <random>
#include <thread>
#include <vector>

#include "doctest.h"
#include "isovisor/accounting.hpp"

using namespace isovisor;

TEST_CASE("allocator: second charge past the budget is refused") {
    AccountingAllocator a(10 * kMiB, nullptr);
    CHECK(a.account(6 * kMiB) == Charge::ok);
    CHECK(a.account(6 * kMiB) == Charge::oom);
    CHECK(a.total() == 6 * kMiB);
}

TEST_CASE("allocator: free then charge up to the budget") {
    AccountingAllocator a(10 * kMiB, nullptr);
    CHECK(a.account(6 * kMiB) == Charge::ok);
    CHECK(a.account(-6 * kMiB) == Charge::ok);
    CHECK(a.account(10 * kMiB) == Charge::ok);
    CHECK(a.total() == 10 * kMiB);
    CHECK(a.account(1) == Charge::oom);
}

TEST_CASE("allocator: frees never fail and never go negative") {
    MemoryAccount parent(kGiB);
    AccountingAllocator a(kMiB, &parent);
    CHECK(a.account(-5) == Charge::ok);
    CHECK(a.total() == 0);
    CHECK(a.account(100) == Charge::ok);
    CHECK(a.account(-1000) == Charge::ok);
    CHECK(a.total() == 0);
    CHECK(parent.used() == 0);
}

TEST_CASE("allocator: random deltas match a scalar replay") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::int64_t> delta(-3 * kMiB, 3 * kMiB);
        const std::int64_t budget = 8 * kMiB;
        MemoryAccount parent(kGiB);
        AccountingAllocator a(budget, &parent);
        std::int64_t expect = 0;
        for (int i = 0; i < 200; ++i) {
            const auto d = delta(rng);
            const bool refused = d > 0 && expect + d > budget;
            const auto r = a.account(d);
            CHECK((r == Charge::oom) == refused);
            if (!refused) expect = std::max<std::int64_t>(0, expect + d);
            REQUIRE(a.total() == expect);
            REQUIRE(parent.used() == expect);
        }
    }
}

TEST_CASE("allocator: parent cap binds before the budget") {
    MemoryAccount parent(4 * kMiB);
    AccountingAllocator a(10 * kMiB, &parent);
    CHECK(a.account(3 * kMiB) == Charge::ok);
    CHECK(a.account(2 * kMiB) == Charge::oom);
    CHECK(a.total() == 3 * kMiB);
    CHECK(parent.used() == 3 * kMiB);
}

TEST_CASE("allocator: teardown releases the parent") {
    MemoryAccount parent(kGiB);
    {
        AccountingAllocator a(10 * kMiB, &parent);
        CHECK(a.account(7 * kMiB) == Charge::ok);
        CHECK(parent.used() == 7 * kMiB);
    }
    CHECK(parent.used() == 0);
    CHECK(parent.peak() == 7 * kMiB);
}

TEST_CASE("memory account: concurrent charges never exceed the cap") {
    MemoryAccount account(1000);
    std::vector<std::thread> threads;
    std::atomic<int> granted{0};
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < 1000; ++i)
                if (account.try_charge(1) == Charge::ok) granted.fetch_add(1);
        });
    for (auto& t : threads) t.join();
    CHECK(granted.load() == 1000);
    CHECK(account.used() == 1000);
}

TEST_CASE("quantized charge rounds up to 4 KiB quanta") {
    AccountingAllocator a(kMiB, nullptr);
    QuantizedCharge q(a);
    CHECK(q.grow(1));
    CHECK(a.total() == kAccountingQuantum);
    CHECK(q.grow(kAccountingQuantum));
    CHECK(a.total() == 2 * kAccountingQuantum);
    CHECK(q.in_use() == kAccountingQuantum + 1);

    q.shrink(kAccountingQuantum + 1);
    CHECK(q.in_use() == 0);
    CHECK(a.total() <= kAccountingQuantum);

    CHECK_FALSE(q.grow(2 * kMiB));
    CHECK(q.in_use() == 0);
    q.reset();
    CHECK(a.total() == 0);
}

TEST_CASE("round_to_quantum") {
    CHECK(round_to_quantum(0) == 0);
    CHECK(round_to_quantum(1) == 4096);
    CHECK(round_to_quantum(4096) == 4096);
    CHECK(round_to_quantum(4097) == 8192);
}
