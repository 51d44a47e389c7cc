#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <unistd.h>
#include <sstream>

#include "doctest.h"
#include "isovisor/trace.hpp"

using namespace isovisor::trace;

namespace {

std::vector<TraceEvent> parse(const std::string& text) {
    std::istringstream in(text);
    return parse_trace(in);
}

std::size_t error_line(const std::string& text) {
    try {
        parse(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    return 0;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("isovisor-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("well-formed rows parse sorted") {
    auto ev = parse(
        "t_ms,tenant_id,function_id,duration_ms,memory_mb\n"
        "200,t1,f2,50,128\n"
        "0,t1,f1,100,256\n"
        "100.5,t2,f3,10,64\n");
    REQUIRE(ev.size() == 3);
    CHECK(ev[0].t_ms == 0);
    CHECK(ev[1].t_ms == 100.5);
    CHECK(ev[2].t_ms == 200);
    CHECK(ev[0].function_id == "f1");
    CHECK(ev[1].memory_mb == 64);
}

TEST_CASE("ties keep file order") {
    auto ev = parse(
        "t_ms,tenant_id,function_id,duration_ms,memory_mb\n"
        "5,t,b,1,1\n"
        "5,t,a,1,1\n");
    CHECK(ev[0].function_id == "b");
    CHECK(ev[1].function_id == "a");
}

TEST_CASE("invalid rows report their line") {
    const std::string h = "t_ms,tenant_id,function_id,duration_ms,memory_mb\n";
    CHECK(error_line(h + "0,t,f,100,128\n0,t,f,0,128\n") == 3);
    CHECK(error_line(h + "-1,t,f,100,128\n") == 2);
    CHECK(error_line(h + "0,t,f,100,0\n") == 2);
    CHECK(error_line(h + "0,t,f,100\n") == 2);
    CHECK(error_line(h + "0,,f,100,1\n") == 2);
    CHECK(error_line(h + "x,t,f,100,1\n") == 2);
    CHECK(error_line(h + "\n\n1,t,f,nan,1\n") == 4);
    CHECK(error_line("time,tenant,fn,dur,mem\n") == 1);
    CHECK(error_line("") == 1);
}

TEST_CASE("header only is an empty trace; CRLF is accepted") {
    CHECK(parse("t_ms,tenant_id,function_id,duration_ms,memory_mb\n").empty());
    CHECK(parse("t_ms,tenant_id,function_id,duration_ms,memory_mb\r\n1,t,f,2,3\r\n").size() == 1);
}

TEST_CASE("write then parse round-trips") {
    std::vector<TraceEvent> ev = {{0, "t", "f", 100, 128}, {12.25, "t", "g", 0.5, 1.5}};
    std::ostringstream out;
    write_trace(out, ev);
    CHECK(out.str().starts_with("t_ms,tenant_id,function_id,duration_ms,memory_mb\n0,t,f,100,128\n"));
    CHECK(parse(out.str()) == ev);
}

TEST_CASE("synthetic trace: determinism and ranges") {
    SynthParams p;
    auto a = synthesize_trace(p);
    auto b = synthesize_trace(p);
    CHECK(a == b);
    REQUIRE_FALSE(a.empty());
    std::set<std::string> tenants, fns;
    for (const auto& e : a) {
        CHECK(e.t_ms >= 0);
        CHECK(e.t_ms < 600000);
        CHECK(e.memory_mb >= 120);
        CHECK(e.memory_mb <= 170);
        CHECK(e.duration_ms >= 100);
        CHECK(e.duration_ms <= 3000);
        tenants.insert(e.tenant_id);
        fns.insert(e.function_id);
    }
    CHECK(tenants.size() == 8);
    CHECK(fns.size() == 32);
    CHECK(std::is_sorted(a.begin(), a.end(), [](auto& x, auto& y) { return x.t_ms < y.t_ms; }));

    p.seed = 2;
    CHECK(synthesize_trace(p) != a);
    CHECK_THROWS_AS(synthesize_trace(SynthParams{0}), std::invalid_argument);
}

TEST_CASE("synthetic trace: memory is fixed per function") {
    std::map<std::string, double> mem;
    for (const auto& e : synthesize_trace({})) {
        auto [it, fresh] = mem.emplace(e.function_id, e.memory_mb);
        CHECK(it->second == e.memory_mb);
    }
}

TEST_CASE("azure conversion") {
    const auto dir = temp_dir("azure");
    {
        std::ofstream inv(dir / "inv.csv");
        inv << "HashOwner,HashApp,HashFunction,Trigger,1,2,3\n"
            << "o1,a1,fa,http,2,0,1\n"
            << "o1,a1,fb,http,0,1,0\n"
            << "o2,a2,fc,timer,1,0,0\n"
            << "o3,a3,fz,http,0,0,0\n"
            << "o4,a4,nodur,http,5,0,0\n";
        std::ofstream dur(dir / "dur.csv");
        dur << "HashOwner,HashApp,HashFunction,Average,Count\n"
            << "o1,a1,fa,150,3\n"
            << "o1,a1,fb,20,1\n"
            << "o2,a2,fc,1000,1\n"
            << "o3,a3,fz,1,1\n";
        std::ofstream mem(dir / "mem.csv");
        mem << "HashOwner,HashApp,SampleCount,AverageAllocatedMb\n"
            << "o1,a1,10,300\n"
            << "o2,a2,10,90\n"
            << "o3,a3,1,10\n"
            << "o4,a4,1,10\n";
    }
    AzureInputs in{dir / "inv.csv", dir / "dur.csv", dir / "mem.csv", 1, 3};
    auto ev = convert_azure(in);
    REQUIRE(ev.size() == 5);
    // fa: two calls in minute 1 at 15 s and 45 s, one in minute 3 at 150 s.
    std::vector<double> fa;
    for (const auto& e : ev) {
        if (e.function_id == "fa") {
            fa.push_back(e.t_ms);
            CHECK(e.tenant_id == "o1");
            CHECK(e.duration_ms == 150);
            CHECK(e.memory_mb == 150);  // 300 MB split between fa and fb
        }
        if (e.function_id == "fc") CHECK(e.memory_mb == 90);
    }
    CHECK(fa == std::vector<double>{15000, 45000, 150000});
    for (const auto& e : ev) CHECK(e.t_ms < 180000);

    AzureInputs window{dir / "inv.csv", dir / "dur.csv", dir / "mem.csv", 2, 1};
    auto one = convert_azure(window);
    REQUIRE(one.size() == 1);
    CHECK(one[0].function_id == "fb");
    CHECK(one[0].t_ms == 30000);
    CHECK(one[0].memory_mb == 300);

    CHECK_THROWS(convert_azure({dir / "inv.csv", dir / "dur.csv", dir / "mem.csv", 3, 5}));
    std::filesystem::remove_all(dir);
}
