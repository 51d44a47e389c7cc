#include "doctest.h"
#include "linearizability.hpp"

using namespace isovisor::lincheck;

TEST_CASE("checker accepts an overlapping reorder") {
    // lookup overlaps register, so seeing the registration is allowed.
    History h = {
        {0, Kind::reg, "a", 5, 1, 0, 3},
        {1, Kind::lookup, "a", 0, 5, 1, 2},
    };
    CHECK(linearizable<RegistryModel>(h));
}

TEST_CASE("checker rejects a stale read after a completed write") {
    History h = {
        {0, Kind::reg, "a", 5, 1, 0, 1},
        {1, Kind::lookup, "a", 0, -1, 2, 3},
    };
    CHECK_FALSE(linearizable<RegistryModel>(h));
}

TEST_CASE("checker rejects a duplicated pool hand-out") {
    History h = {
        {0, Kind::offer, "a", 7, 0, 0, 1},
        {1, Kind::poll, "a", 0, 7, 2, 3},
        {2, Kind::poll, "a", 0, 7, 2, 4},
    };
    CHECK_FALSE(linearizable<PoolModel>(h));
}

TEST_CASE("checker rejects FIFO where the pool is a stack") {
    History h = {
        {0, Kind::offer, "a", 1, 0, 0, 1},
        {0, Kind::offer, "a", 2, 0, 2, 3},
        {1, Kind::poll, "a", 0, 1, 4, 5},
    };
    CHECK_FALSE(linearizable<PoolModel>(h));
}

TEST_CASE("registry histories are linearizable") {
    for (int threads = 2; threads <= 4; ++threads) {
        auto t = check_registry(threads, 300, static_cast<std::uint64_t>(threads));
        CHECK(t.linearizable == t.histories);
    }
}

TEST_CASE("pool histories are linearizable") {
    for (int threads = 2; threads <= 4; ++threads) {
        auto t = check_pool(threads, 300, static_cast<std::uint64_t>(100 + threads));
        CHECK(t.linearizable == t.histories);
    }
}
