#include <map>
#include <random>

#include "doctest.h"
#include "isovisor/accounting.hpp"
#include "isovisor/registry.hpp"

using namespace isovisor;

namespace {

FunctionRegistry make_registry() {
    return FunctionRegistry([](const std::string& lang) { return lang == "synthetic" || lang == "lua"; });
}

FunctionDescriptor synthetic(std::string fid, std::int64_t mem = 256 * kMiB) {
    return {std::move(fid), "main", R"({"alloc_mb":0,"run_ms":0})", mem, "synthetic"};
}

}  // namespace

TEST_CASE("register then lookup returns the exact descriptor") {
    auto r = make_registry();
    CHECK(r.register_function(synthetic("f1")));
    auto d = r.lookup("f1");
    REQUIRE(d);
    CHECK(*d == synthetic("f1"));
    CHECK(r.registrations_total() == 1);
}

TEST_CASE("duplicate fid is refused and the first descriptor kept") {
    auto r = make_registry();
    CHECK(r.register_function(synthetic("f1", 256 * kMiB)));
    CHECK_FALSE(r.register_function(synthetic("f1", 128 * kMiB)));
    CHECK(r.lookup("f1")->mem == 256 * kMiB);
    CHECK(r.size() == 1);
}

TEST_CASE("invalid descriptors are refused without side effects") {
    auto r = make_registry();
    CHECK_FALSE(r.register_function(synthetic("f1", 0)));
    CHECK_FALSE(r.register_function(synthetic("f1", -1)));
    CHECK_FALSE(r.register_function(synthetic("")));
    auto no_fep = synthetic("f1");
    no_fep.fep.clear();
    CHECK_FALSE(r.register_function(no_fep));
    auto no_code = synthetic("f1");
    no_code.code.clear();
    CHECK_FALSE(r.register_function(no_code));
    auto huge = synthetic("f1");
    huge.code.assign(kMaxCodeBytes + 1, ' ');
    CHECK_FALSE(r.register_function(huge));
    auto cobol = synthetic("f1");
    cobol.language = "cobol";
    CHECK_FALSE(r.register_function(cobol));
    CHECK(r.size() == 0);
    CHECK(r.registrations_total() == 0);
    CHECK(r.lookup("f1") == nullptr);
}

TEST_CASE("deregister semantics") {
    auto r = make_registry();
    CHECK_FALSE(r.deregister("ghost"));
    CHECK(r.register_function(synthetic("f1")));
    CHECK(r.deregister("f1"));
    CHECK(r.lookup("f1") == nullptr);
    CHECK_FALSE(r.deregister("f1"));
    CHECK(r.register_function(synthetic("f1")));
    CHECK(r.lookup("f1"));
}

TEST_CASE("a looked-up descriptor outlives its deregistration") {
    auto r = make_registry();
    CHECK(r.register_function(synthetic("f1")));
    auto held = r.lookup("f1");
    CHECK(r.deregister("f1"));
    CHECK(held->fid == "f1");
}

TEST_CASE("1000 registrations then 1000 lookups all hit") {
    auto r = make_registry();
    for (int i = 0; i < 1000; ++i) REQUIRE(r.register_function(synthetic("f" + std::to_string(i))));
    for (int i = 0; i < 1000; ++i) REQUIRE(r.lookup("f" + std::to_string(i)));
    CHECK(r.list().size() == 1000);
}

TEST_CASE("random op sequences match a plain map") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        auto r = make_registry();
        std::map<std::string, std::int64_t> model;
        for (int i = 0; i < 500; ++i) {
            const std::string fid = "f" + std::to_string(rng() % 8);
            const auto mem = static_cast<std::int64_t>(rng() % 3) * kMiB;  // 0 is invalid
            switch (rng() % 3) {
                case 0: {
                    const bool expect = mem > 0 && !model.count(fid);
                    CHECK(r.register_function(synthetic(fid, mem)) == expect);
                    if (expect) model[fid] = mem;
                    break;
                }
                case 1:
                    CHECK(r.deregister(fid) == (model.erase(fid) == 1));
                    break;
                default: {
                    auto d = r.lookup(fid);
                    auto it = model.find(fid);
                    REQUIRE((d != nullptr) == (it != model.end()));
                    if (d) CHECK(d->mem == it->second);
                }
            }
        }
        CHECK(r.size() == model.size());
    }
}
