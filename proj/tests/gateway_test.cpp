#include <atomic>
#include <barrier>
#include <future>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "isovisor/gateway.hpp"
#include "json.hpp"

using namespace isovisor;
using json = nlohmann::json;

namespace {

GatewayConfig test_config() {
    GatewayConfig c;
    c.port = 0;
    c.reaper_period = std::chrono::milliseconds(0);
    return c;
}

std::string register_body(const std::string& fid, const std::string& code, std::int64_t mem = 16 * kMiB,
                          const std::string& language = "synthetic") {
    return json{{"fid", fid}, {"fep", "main"}, {"code", base64_encode(code)}, {"mem", mem}, {"language", language}}
        .dump();
}

struct Server {
    Gateway gateway;
    int port;
    httplib::Client client;

    explicit Server(GatewayConfig c = test_config()) : gateway(c), port(gateway.start()), client("127.0.0.1", port) {
        client.set_read_timeout(30, 0);
    }

    httplib::Result post(const std::string& path, const std::string& body) {
        return client.Post(path, body, "application/json");
    }
    json metrics() { return json::parse(client.Get("/metrics")->body); }
};

}  // namespace

TEST_CASE("base64 round trip and strictness") {
    for (std::string s : std::vector<std::string>{"", "a", "ab", "abc", "abcd", "hello, world", std::string("\0\xff\x10", 3)})
        CHECK(base64_decode(base64_encode(s)) == s);
    CHECK(base64_encode("abc") == "YWJj");
    CHECK(base64_encode("ab") == "YWI=");
    CHECK_FALSE(base64_decode("YWJ"));
    CHECK_FALSE(base64_decode("Y!Jj"));
    CHECK_FALSE(base64_decode("YW=j"));
}

TEST_CASE("gateway config validation") {
    GatewayConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_contexts = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.worker_count = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.runtime_memory_cap = 16 * kMiB - 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("work pool runs FIFO and rejects past capacity") {
    WorkPool pool(1, 2);
    std::promise<void> gate;
    auto opened = gate.get_future().share();
    std::vector<int> order;
    std::mutex m;
    CHECK(pool.try_submit([&, opened](bool) { opened.wait(); }));
    while (pool.running() == 0) std::this_thread::yield();
    CHECK(pool.try_submit([&](bool) { std::lock_guard l(m); order.push_back(1); }));
    CHECK(pool.try_submit([&](bool) { std::lock_guard l(m); order.push_back(2); }));
    CHECK_FALSE(pool.try_submit([](bool) {}));
    CHECK(pool.depth() == 2);
    gate.set_value();
    CHECK(pool.shutdown(std::chrono::milliseconds(5000)) == 0);
    CHECK(order == std::vector<int>{1, 2});
    CHECK_FALSE(pool.try_submit([](bool) {}));
}

TEST_CASE("work pool cancels what it cannot run before the deadline") {
    WorkPool pool(1, 4);
    std::atomic<int> cancelled{0};
    CHECK(pool.try_submit([](bool) { std::this_thread::sleep_for(std::chrono::milliseconds(200)); }));
    while (pool.running() == 0) std::this_thread::yield();
    for (int i = 0; i < 3; ++i) CHECK(pool.try_submit([&](bool c) { cancelled += c ? 1 : 0; }));
    CHECK(pool.shutdown(std::chrono::milliseconds(0)) == 3);
    CHECK(cancelled.load() == 3);
}

TEST_CASE("http: unregistered invoke is 404 with a JSON error body") {
    Server s;
    auto r = s.post("/invoke", R"({"fid":"nope","args":{}})");
    REQUIRE(r);
    CHECK(r->status == 404);
    auto body = json::parse(r->body);
    CHECK(body["outcome"] == "not-registered");
    CHECK(body["error"].is_string());
}

TEST_CASE("http: lifecycle register, invoke, deregister, invoke") {
    Server s;
    auto r = s.post("/register", register_body("f1", R"({"alloc_mb":0,"run_ms":0,"echo":true})"));
    CHECK(r->status == 200);
    CHECK(r->body == "true");
    CHECK(s.post("/register", register_body("f1", R"({"alloc_mb":0,"run_ms":0})"))->body == "false");

    r = s.post("/invoke", R"({"fid":"f1","args":{"a":[1,2]}})");
    CHECK(r->status == 200);
    CHECK(r->body == R"({"a":[1,2]})");

    CHECK(s.post("/deregister", R"({"fid":"f1"})")->body == "true");
    CHECK(s.post("/deregister", R"({"fid":"f1"})")->body == "false");
    CHECK(s.post("/invoke", R"({"fid":"f1","args":{}})")->status == 404);
}

TEST_CASE("http: malformed requests are 400") {
    Server s;
    CHECK(s.post("/register", "{not json")->status == 400);
    auto missing_fep = json::parse(register_body("f", "{}"));
    missing_fep.erase("fep");
    CHECK(s.post("/register", missing_fep.dump())->status == 400);
    auto string_mem = json::parse(register_body("f", "{}"));
    string_mem["mem"] = "256MiB";
    CHECK(s.post("/register", string_mem.dump())->status == 400);
    auto bad_b64 = json::parse(register_body("f", "{}"));
    bad_b64["code"] = "***";
    CHECK(s.post("/register", bad_b64.dump())->status == 400);
    CHECK(s.post("/invoke", R"({"args":{}})")->status == 400);
    CHECK(s.post("/invoke", R"({"fid":"f","args":[1]})")->status == 400);
    CHECK(s.post("/deregister", R"({"fid":3})")->status == 400);
    auto r = s.post("/invoke", "[]");
    CHECK(json::parse(r->body)["outcome"] == "bad-request");
}

TEST_CASE("http: invalid registrations answer false") {
    Server s;
    CHECK(s.post("/register", register_body("f", "{}", 0))->body == "false");
    CHECK(s.post("/register", register_body("f", "{}", 16 * kMiB, "cobol"))->body == "false");
}

TEST_CASE("http: mem in bytes round-trips through /functions") {
    Server s;
    CHECK(s.post("/register", register_body("f", R"({"alloc_mb":0,"run_ms":0})", 268435456))->body == "true");
    auto list = json::parse(s.client.Get("/functions")->body);
    REQUIRE(list.size() == 1);
    CHECK(list[0]["fid"] == "f");
    CHECK(list[0]["mem"] == 268435456);
}

TEST_CASE("http: oversize invoke body is 413") {
    auto c = test_config();
    c.max_invoke_body = 1024;
    Server s(c);
    json big = {{"fid", "f"}, {"args", {{"pad", std::string(2048, 'x')}}}};
    CHECK(s.post("/invoke", big.dump())->status == 413);
}

TEST_CASE("http: over-budget invocation is 507") {
    Server s;
    CHECK(s.post("/register", register_body("big", R"({"alloc_mb":80,"run_ms":0})", 16 * kMiB))->body == "true");
    auto r = s.post("/invoke", R"({"fid":"big","args":{}})");
    CHECK(r->status == 507);
    CHECK(json::parse(r->body)["outcome"] == "oom");
    CHECK(s.metrics()["pooled_isolates"] == 0);
    CHECK(s.metrics()["live_isolates"] == 0);
}

TEST_CASE("http: guest error is 500") {
    Server s;
    CHECK(s.post("/register", register_body("bad", "function main(a) error('no') end", 8 * kMiB, "lua"))->body ==
          "true");
    auto r = s.post("/invoke", R"({"fid":"bad","args":{}})");
    CHECK(r->status == 500);
    CHECK(json::parse(r->body)["outcome"] == "guest-error");
}

TEST_CASE("http: fresh server metrics are zero") {
    Server s;
    auto m = s.metrics();
    CHECK(m["accounted_memory_bytes"] == 0);
    CHECK(m["live_isolates"] == 0);
    CHECK(m["pooled_isolates"] == 0);
    CHECK(m["compiles_total"] == 0);
    CHECK(m["cold_invocations_total"] == 0);
    CHECK(m["warm_invocations_total"] == 0);
    CHECK(m["queue_depth"] == 0);
    CHECK(m["runtime_memory_cap_bytes"] == 2 * kGiB);
    CHECK(m["latency_count"] == 0);
    CHECK(m["isolate_create_us"] == 0);
    for (auto& [k, v] : m.items()) CHECK_FALSE(v.is_structured());
}

TEST_CASE("http: one cold then nine warm invocations") {
    Server s;
    CHECK(s.post("/register", register_body("f", R"({"alloc_mb":0,"run_ms":0})"))->body == "true");
    for (int i = 0; i < 10; ++i) CHECK(s.post("/invoke", R"({"fid":"f","args":{}})")->status == 200);
    auto m = s.metrics();
    CHECK(m["cold_invocations_total"] == 1);
    CHECK(m["warm_invocations_total"] == 9);
    CHECK(m["compiles_total"] == 1);
    CHECK(m["outcome_ok_total"] == 10);
    std::uint64_t total = 0;
    for (auto& [k, v] : m.items())
        if (k.rfind("latency_us_le_", 0) == 0) total += v.get<std::uint64_t>();
    CHECK(total == 10);
    CHECK(m["latency_count"] == 10);
    CHECK(m["isolate_create_us"].get<double>() > 0);
    auto recs = s.gateway.records();
    REQUIRE(recs.size() == 10);
    for (auto& r : recs) {
        CHECK(r.enqueued <= r.started);
        CHECK(r.started <= r.finished);
    }
    CHECK(recs.front().cold);
}

TEST_CASE("http: two concurrent invocations share one isolate") {
    Server s;
    CHECK(s.post("/register", register_body("f", R"({"alloc_mb":0,"run_ms":400})"))->body == "true");
    auto call = [&] {
        httplib::Client c("127.0.0.1", s.port);
        return c.Post("/invoke", R"({"fid":"f","args":{}})", "application/json")->status;
    };
    // Two simultaneous cold misses may each create an isolate, so the second
    // call goes out only once the first one is executing.
    auto a = std::async(std::launch::async, call);
    while (s.gateway.runtime().isolates().stats().executing_isolates == 0) std::this_thread::yield();
    auto b = std::async(std::launch::async, call);
    CHECK(a.get() == 200);
    CHECK(b.get() == 200);
    auto m = s.metrics();
    CHECK(m["isolates_created_total"] == 1);
    CHECK(m["contexts_created_total"] == 2);
    CHECK(m["peak_contexts_per_isolate"] == 2);
}

TEST_CASE("http: queue full is 503") {
    auto c = test_config();
    c.worker_count = 1;
    c.queue_capacity = 2;
    Server s(c);
    CHECK(s.post("/register", register_body("slow", R"({"alloc_mb":0,"run_ms":600})"))->body == "true");
    const int n = static_cast<int>(c.queue_capacity) + c.worker_count + 1;
    std::barrier sync(n);
    std::vector<std::future<int>> calls;
    for (int i = 0; i < n; ++i)
        calls.push_back(std::async(std::launch::async, [&] {
            httplib::Client cl("127.0.0.1", s.port);
            cl.set_read_timeout(30, 0);
            sync.arrive_and_wait();
            return cl.Post("/invoke", R"({"fid":"slow","args":{}})", "application/json")->status;
        }));
    int ok = 0, rejected = 0;
    for (auto& f : calls) (f.get() == 503 ? rejected : ok)++;
    CHECK(rejected == 1);
    CHECK(ok == n - 1);
    CHECK(s.metrics()["outcome_rejected_queue_full_total"] == 1);
}

TEST_CASE("http: stop drains isolates") {
    Server s;
    CHECK(s.post("/register", register_body("f", R"({"alloc_mb":1,"run_ms":0})"))->body == "true");
    CHECK(s.post("/invoke", R"({"fid":"f","args":{}})")->status == 200);
    s.gateway.stop();
    CHECK(s.gateway.runtime().isolates().stats().live_isolates == 0);
    CHECK(s.gateway.runtime().memory().used() == 0);
}

TEST_CASE("bind failure is reported") {
    Server s;
    auto c = test_config();
    c.port = s.port;
    Gateway second(c);
    CHECK_THROWS_AS(second.start(), std::runtime_error);
}
