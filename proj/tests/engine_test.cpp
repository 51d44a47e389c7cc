#include <chrono>
#include <string>

#include "doctest.h"
#include "isovisor/engine.hpp"
#include "lauxlib.h"
#include "lua.h"
#include "lualib.h"

using namespace isovisor;

namespace {

FunctionDescriptor fn(std::string language, std::string code, std::string fep = "main") {
    return {"f", std::move(fep), std::move(code), 64 * kMiB, std::move(language)};
}

constexpr const char* kLenScript = R"(
function main(args)
  return { len = #args.s }
end
)";

/// Runs kLenScript in a plain interpreter state, away from the engine.
long long reference_len(const char* s) {
    lua_State* L = luaL_newstate();
    luaL_openlibs(L);
    REQUIRE(luaL_dostring(L, kLenScript) == LUA_OK);
    lua_getglobal(L, "main");
    lua_newtable(L);
    lua_pushstring(L, s);
    lua_setfield(L, -2, "s");
    REQUIRE(lua_pcall(L, 1, 1, 0) == LUA_OK);
    lua_getfield(L, -1, "len");
    const auto n = lua_tointeger(L, -1);
    lua_close(L);
    return n;
}

}  // namespace

TEST_CASE("synthetic spec parsing") {
    auto s = parse_synthetic_spec(R"({"alloc_mb":10,"run_ms":50})");
    CHECK(s.alloc_mb == 10);
    CHECK(s.run_ms == 50);
    CHECK_FALSE(s.echo);
    CHECK(parse_synthetic_spec(R"({"alloc_mb":0,"run_ms":0,"echo":true})").echo);

    CHECK_THROWS_AS(parse_synthetic_spec(R"({"alloc_mb":1,"run_ms":1,"colour":"red"})"), CompileError);
    CHECK_THROWS_AS(parse_synthetic_spec(R"({"alloc_mb":-1,"run_ms":1})"), CompileError);
    CHECK_THROWS_AS(parse_synthetic_spec(R"({"alloc_mb":1})"), CompileError);
    CHECK_THROWS_AS(parse_synthetic_spec(R"({"alloc_mb":"1","run_ms":1})"), CompileError);
    CHECK_THROWS_AS(parse_synthetic_spec("[]"), CompileError);
    CHECK_THROWS_AS(parse_synthetic_spec("not json"), CompileError);
}

TEST_CASE("synthetic echo runs for at least run_ms") {
    SyntheticEngine engine;
    AccountingAllocator alloc(64 * kMiB, nullptr);
    auto prog = engine.compile(fn("synthetic", R"({"alloc_mb":1,"run_ms":10,"echo":true})"));
    auto ctx = engine.create_context(prog, alloc);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = ctx->exec("main", R"({"x":1})");
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    CHECK(r.status == GuestStatus::ok);
    CHECK(r.output == R"({"x":1})");
    CHECK(ms >= 10.0);
}

TEST_CASE("synthetic without echo returns the empty object") {
    SyntheticEngine engine;
    AccountingAllocator alloc(kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("synthetic", R"({"alloc_mb":0,"run_ms":0})")), alloc);
    CHECK(ctx->exec("main", "{}").output == "{}");
    CHECK(ctx->exec("main", R"({"a":2})").output == "{}");
}

TEST_CASE("synthetic is deterministic") {
    SyntheticEngine engine;
    AccountingAllocator alloc(8 * kMiB, nullptr);
    auto prog = engine.compile(fn("synthetic", R"({"alloc_mb":2,"run_ms":0,"echo":true})"));
    auto a = engine.create_context(prog, alloc);
    auto b = engine.create_context(prog, alloc);
    const std::string args = R"({"k":[1,2,{"z":null}],"s":"t"})";
    CHECK(a->exec("main", args).output == b->exec("main", args).output);
    CHECK(a->exec("main", args).output == a->exec("main", args).output);
}

TEST_CASE("synthetic accounting rises by alloc_mb and returns to its floor") {
    SyntheticEngine engine;
    AccountingAllocator alloc(64 * kMiB, nullptr);
    CHECK(alloc.account(kMiB) == Charge::ok);  // stand-in base heap
    auto ctx = engine.create_context(engine.compile(fn("synthetic", R"({"alloc_mb":5,"run_ms":0})")), alloc);
    const auto floor = alloc.total();
    CHECK(ctx->exec("main", "{}").status == GuestStatus::ok);
    CHECK(alloc.peak() >= floor + 5 * kMiB);
    CHECK(alloc.total() == floor);
}

TEST_CASE("synthetic allocation past the budget is oom") {
    SyntheticEngine engine;
    AccountingAllocator alloc(4 * kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("synthetic", R"({"alloc_mb":5,"run_ms":0})")), alloc);
    CHECK(ctx->exec("main", "{}").status == GuestStatus::oom);
    CHECK(alloc.total() == 0);
}

TEST_CASE("synthetic emulate arguments override the spec") {
    SyntheticEngine engine({false});
    AccountingAllocator alloc(8 * kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("synthetic", R"({"alloc_mb":0,"run_ms":0})")), alloc);
    CHECK(ctx->exec("main", R"({"emulate":{"alloc_mb":6,"run_ms":0}})").status == GuestStatus::ok);
    CHECK(alloc.peak() >= 6 * kMiB);
    CHECK(ctx->exec("main", R"({"emulate":{"alloc_mb":9,"run_ms":0}})").status == GuestStatus::oom);
}

TEST_CASE("synthetic unknown entry point") {
    SyntheticEngine engine;
    AccountingAllocator alloc(kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("synthetic", R"({"alloc_mb":0,"run_ms":0})")), alloc);
    CHECK(ctx->exec("nope", "{}").status == GuestStatus::entry_not_found);
}

TEST_CASE("engines count compilations") {
    SyntheticEngine engine;
    const auto before = GuestEngine::compiles_total();
    (void)engine.compile(fn("synthetic", R"({"alloc_mb":0,"run_ms":0})"));
    CHECK(GuestEngine::compiles_total() == before + 1);
    CHECK_THROWS_AS(engine.compile(fn("synthetic", "{}")), CompileError);
}

TEST_CASE("lua: input length matches the reference interpreter") {
    LuaEngine engine;
    AccountingAllocator alloc(16 * kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("lua", kLenScript)), alloc);
    const auto r = ctx->exec("main", R"({"s":"abc"})");
    CHECK(r.status == GuestStatus::ok);
    CHECK(r.output == R"({"len":)" + std::to_string(reference_len("abc")) + "}");
    CHECK(r.output == R"({"len":3})");
}

TEST_CASE("lua: empty script does not compile") {
    LuaEngine engine;
    CHECK_THROWS_AS(engine.compile(fn("lua", "")), CompileError);
    CHECK_THROWS_AS(engine.compile(fn("lua", "  \n\t ")), CompileError);
    CHECK_THROWS_AS(engine.compile(fn("lua", "function main(")), CompileError);
}

TEST_CASE("lua: guest errors and missing entry points") {
    LuaEngine engine;
    AccountingAllocator alloc(16 * kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("lua", "function main(a) error('boom') end")), alloc);
    auto r = ctx->exec("main", "{}");
    CHECK(r.status == GuestStatus::guest_error);
    CHECK(r.output.find("boom") != std::string::npos);
    CHECK(ctx->exec("missing", "{}").status == GuestStatus::entry_not_found);
    // The context stays usable after a guest error.
    CHECK(ctx->exec("main", "{}").status == GuestStatus::guest_error);
}

TEST_CASE("lua: values round-trip through JSON") {
    LuaEngine engine;
    AccountingAllocator alloc(16 * kMiB, nullptr);
    auto ctx = engine.create_context(engine.compile(fn("lua", "function main(a) return a end")), alloc);
    auto r = ctx->exec("main", R"({"a":[1,2,3],"b":{"c":"d"},"e":true,"f":1.5})");
    REQUIRE(r.status == GuestStatus::ok);
    CHECK(r.output == R"({"a":[1,2,3],"b":{"c":"d"},"e":true,"f":1.5})");
}

TEST_CASE("lua: contexts do not share globals") {
    LuaEngine engine;
    AccountingAllocator alloc(32 * kMiB, nullptr);
    auto prog = engine.compile(fn("lua", "n = 0\nfunction main(a) n = n + 1; return { n = n } end"));
    auto a = engine.create_context(prog, alloc);
    auto b = engine.create_context(prog, alloc);
    CHECK(a->exec("main", "{}").output == R"({"n":1})");
    CHECK(a->exec("main", "{}").output == R"({"n":2})");
    CHECK(b->exec("main", "{}").output == R"({"n":1})");
    CHECK(a->exec("main", "{}").output == R"({"n":3})");
}

TEST_CASE("lua: unbounded allocation is oom, not a crash") {
    LuaEngine engine;
    AccountingAllocator alloc(4 * kMiB, nullptr);
    auto ctx = engine.create_context(
        engine.compile(fn("lua", "function main(a) local t = {} for i = 1, 1e9 do t[i] = i end end")), alloc);
    CHECK(ctx->exec("main", "{}").status == GuestStatus::oom);
    CHECK(alloc.total() <= 4 * kMiB);
}

TEST_CASE("lua: context creation inside an exhausted budget fails with oom") {
    LuaEngine engine;
    AccountingAllocator alloc(8 * kKiB, nullptr);
    auto prog = engine.compile(fn("lua", kLenScript));
    try {
        (void)engine.create_context(prog, alloc);
        FAIL("context creation should have failed");
    } catch (const ContextError& e) {
        CHECK(e.status() == GuestStatus::oom);
    }
    CHECK(alloc.total() == 0);
}

TEST_CASE("lua: sandbox hides file loading") {
    LuaEngine engine;
    AccountingAllocator alloc(16 * kMiB, nullptr);
    auto ctx = engine.create_context(
        engine.compile(fn("lua", "function main(a) return { io = io == nil, dofile = dofile == nil, os = os == nil } end")),
        alloc);
    CHECK(ctx->exec("main", "{}").output == R"({"dofile":true,"io":true,"os":true})");
}

TEST_CASE("prebuilt builtins skip compilation") {
    PrebuiltEngine engine;
    AccountingAllocator alloc(kMiB, nullptr);
    const auto before = GuestEngine::compiles_total();
    auto ctx = engine.create_context(engine.compile(fn("prebuilt", "sum")), alloc);
    CHECK(ctx->exec("main", R"({"a":1,"b":2.5,"c":"x"})").output == R"({"sum":3.5})");
    CHECK(GuestEngine::compiles_total() == before);
    CHECK_FALSE(engine.supports_code_cache());
    CHECK_THROWS_AS(engine.compile(fn("prebuilt", "nonexistent")), CompileError);
    auto echo = engine.create_context(engine.compile(fn("prebuilt", "echo")), alloc);
    CHECK(echo->exec("main", R"({"q":[1]})").output == R"({"q":[1]})");
    CHECK(echo->exec("main", "not json").status == GuestStatus::guest_error);
}

TEST_CASE("engine set defaults") {
    auto set = EngineSet::defaults();
    CHECK(set->installed("synthetic"));
    CHECK(set->installed("lua"));
    CHECK(set->installed("prebuilt"));
    CHECK_FALSE(set->installed("python"));
    CHECK(set->languages().size() == 3);
}
