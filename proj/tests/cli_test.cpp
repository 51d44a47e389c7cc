#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "isovisor/cli_config.hpp"
#include "json.hpp"

using namespace isovisor;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string output;
};

/// Runs the CLI through the shell, capturing stdout and stderr together.
Run cli(const std::string& args, const std::string& env = "") {
    const auto log = fs::temp_directory_path() / ("isovisor-cli-" + std::to_string(::getpid()) + ".log");
    const std::string cmd = env + " " + ISOVISOR_BIN + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    fs::remove(log);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("isovisor-cli-" + name + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("sizes accept binary suffixes") {
    CHECK(parse_size("4096") == 4096);
    CHECK(parse_size("4096B") == 4096);
    CHECK(parse_size("64KiB") == 64 * kKiB);
    CHECK(parse_size("512MiB") == 512 * kMiB);
    CHECK(parse_size("2GiB") == 2 * kGiB);
    CHECK(parse_size("16GiB") == 16 * kGiB);
    CHECK_FALSE(parse_size(""));
    CHECK_FALSE(parse_size("GiB"));
    CHECK_FALSE(parse_size("-1"));
    CHECK_FALSE(parse_size("2GB"));
    CHECK_FALSE(parse_size("1.5GiB"));
    CHECK_FALSE(parse_size("99999999999999GiB"));
}

TEST_CASE("config file overrides defaults") {
    GatewayConfig c;
    std::istringstream in(
        "# comment\n"
        "port = 9000\n"
        "memory_cap=1GiB\n"
        "ttl=5  # seconds\n"
        "share_code_cache=false\n"
        "\n"
        "max_invoke_body=1MiB\n");
    apply_config(c, in);
    CHECK(c.port == 9000);
    CHECK(c.runtime_memory_cap == kGiB);
    CHECK(c.ttl_seconds == 5);
    CHECK_FALSE(c.share_code_cache);
    CHECK(c.max_invoke_body == static_cast<std::size_t>(kMiB));
    CHECK(c.worker_count == GatewayConfig{}.worker_count);
}

TEST_CASE("config file errors name the line") {
    GatewayConfig c;
    std::istringstream unknown("port=1\ncolour=red\n");
    CHECK_THROWS_WITH_AS(apply_config(c, unknown, "x.conf"), "x.conf:2: unknown key 'colour'", std::invalid_argument);
    std::istringstream bad("ttl=ten\n");
    CHECK_THROWS_AS(apply_config(c, bad), std::invalid_argument);
    std::istringstream novalue("just-a-word\n");
    CHECK_THROWS_AS(apply_config(c, novalue), std::invalid_argument);
}

TEST_CASE("describe round-trips through the config parser") {
    GatewayConfig c;
    c.port = 1234;
    c.runtime_memory_cap = 3 * kGiB;
    c.share_code_cache = false;
    GatewayConfig back;
    std::istringstream in(describe(c));
    apply_config(back, in);
    CHECK(describe(back) == describe(c));
}

TEST_CASE("cli: usage errors exit nonzero before doing anything") {
    CHECK(cli("serve --max-contexts 0").code == 2);
    CHECK(cli("serve --memory-cap lots").code == 2);
    CHECK(cli("serve --memory-cap 1MiB").code == 2);
    CHECK(cli("").code == 2);
    CHECK(cli("replay").code == 2);
    CHECK(cli("replay --trace x.csv --policy best").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("--help").code == 0);
}

TEST_CASE("cli: bad config file from the environment is a usage error") {
    auto dir = scratch("env");
    std::ofstream(dir / "bad.conf") << "workers=0\n";
    auto r = cli("serve --port 0", "ISOVISOR_CONFIG=" + (dir / "bad.conf").string());
    CHECK(r.code == 2);
    CHECK(r.output.find("worker_count") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: serve listens with the requested cap and stops on SIGINT") {
    auto dir = scratch("serve");
    std::ofstream(dir / "ok.conf") << "ttl=7\nmemory_cap=512MiB\n";
    auto r = cli("serve --port 0 --memory-cap 2GiB",
                 "ISOVISOR_CONFIG=" + (dir / "ok.conf").string() + " timeout --preserve-status -s INT 1");
    CHECK(r.code == 0);
    CHECK(r.output.find("serving on") != std::string::npos);
    CHECK(r.output.find("memory_cap=2147483648") != std::string::npos);
    CHECK(r.output.find("ttl=7") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli: synth-trace, replay --policy all and reports") {
    auto dir = scratch("replay");
    const auto trace = (dir / "t.csv").string();
    REQUIRE(cli("synth-trace --tenants 2 --funcs-per-tenant 2 --duration-s 60 --rate 0.2 --seed 5 --out " + trace)
                .code == 0);
    auto again = dir / "t2.csv";
    REQUIRE(cli("synth-trace --tenants 2 --funcs-per-tenant 2 --duration-s 60 --rate 0.2 --seed 5 --out " +
                again.string())
                .code == 0);
    std::ifstream a(trace), b(again);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());

    const auto out = dir / "all";
    auto r = cli("replay --trace " + trace + " --policy all --out " + out.string());
    REQUIRE(r.code == 0);
    for (auto p : {"per-invocation", "per-function", "per-tenant"}) {
        CHECK(fs::exists(out / p / "summary.json"));
        CHECK(fs::exists(out / p / "memory_timeline.csv"));
        CHECK(fs::exists(out / p / "latency_cdf.csv"));
    }
    std::ifstream cmp(out / "comparison.json");
    auto j = nlohmann::json::parse(cmp);
    REQUIRE(j.size() == 3);
    CHECK(j[0]["policy"] == "per-invocation");
    CHECK(j[2]["policy"] == "per-tenant");

    const auto single = dir / "one";
    REQUIRE(cli("replay --trace " + trace + " --policy per-tenant --mode sim --out " + single.string()).code == 0);
    CHECK(fs::exists(single / "summary.json"));
    std::ifstream s1(single / "summary.json");
    CHECK(nlohmann::json::parse(s1) == j[2]);

    const auto capped = dir / "capped";
    REQUIRE(cli("replay --trace " + trace + " --policy per-invocation --global-cap 300MiB --out " + capped.string())
                .code == 0);
    std::ifstream s2(capped / "summary.json");
    CHECK(nlohmann::json::parse(s2)["rejected"].get<int>() > 0);
    fs::remove_all(dir);
}

TEST_CASE("cli: replay of a malformed trace names the line") {
    auto dir = scratch("bad");
    std::ofstream(dir / "t.csv") << "t_ms,tenant_id,function_id,duration_ms,memory_mb\n0,t,f,10,1\n5,t,f,0,1\n";
    auto r = cli("replay --trace " + (dir / "t.csv").string() + " --out " + (dir / "o").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("line 3") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o" / "summary.json"));
    fs::remove_all(dir);
}

TEST_CASE("cli: bench with ten iterations") {
    auto r = cli("bench --iterations 10 --concurrent-isolates 8");
    REQUIRE(r.code == 0);
    std::istringstream in(r.output);
    std::string line;
    std::getline(in, line);
    CHECK(line == "name,iterations,median_us,p99_us");
    std::vector<std::string> names;
    while (std::getline(in, line)) {
        names.push_back(line.substr(0, line.find(',')));
        CHECK(line.find(",10,") != std::string::npos);
    }
    CHECK(names == std::vector<std::string>{"isolate_cold_create", "warm_poll_hit", "cold_invocation", "warm_invocation"});
}
