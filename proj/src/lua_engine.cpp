#include <cstdlib>
#include <cstring>

#include "isovisor/engine.hpp"
#include "json.hpp"

// Lua is built as C++ so guest errors unwind through C++ frames.
#include "lauxlib.h"
#include "lua.h"
#include "lualib.h"

namespace isovisor {

using json = nlohmann::json;

namespace {

constexpr int kMaxJsonDepth = 64;

class LuaProgram final : public CompiledProgram {
public:
    LuaProgram(std::string fid, std::string bytecode)
        : CompiledProgram(std::move(fid)), bytecode(std::move(bytecode)) {}

    std::int64_t footprint() const noexcept override { return static_cast<std::int64_t>(bytecode.size()); }

    std::string bytecode;
};

int dump_writer(lua_State*, const void* p, std::size_t sz, void* ud) {
    static_cast<std::string*>(ud)->append(static_cast<const char*>(p), sz);
    return 0;
}

// -- JSON <-> Lua -----------------------------------------------------------

void push_json(lua_State* L, const json& v, int depth) {
    if (depth > kMaxJsonDepth) luaL_error(L, "argument nesting too deep");
    luaL_checkstack(L, 3, "json");
    switch (v.type()) {
        case json::value_t::null: lua_pushnil(L); break;
        case json::value_t::boolean: lua_pushboolean(L, v.get<bool>()); break;
        case json::value_t::number_integer: lua_pushinteger(L, v.get<std::int64_t>()); break;
        case json::value_t::number_unsigned: lua_pushinteger(L, static_cast<lua_Integer>(v.get<std::uint64_t>())); break;
        case json::value_t::number_float: lua_pushnumber(L, v.get<double>()); break;
        case json::value_t::string: {
            const auto& s = v.get_ref<const std::string&>();
            lua_pushlstring(L, s.data(), s.size());
            break;
        }
        case json::value_t::array: {
            lua_createtable(L, static_cast<int>(v.size()), 0);
            lua_Integer i = 1;
            for (const auto& e : v) {
                push_json(L, e, depth + 1);
                lua_rawseti(L, -2, i++);
            }
            break;
        }
        case json::value_t::object: {
            lua_createtable(L, 0, static_cast<int>(v.size()));
            for (const auto& [k, e] : v.items()) {
                push_json(L, e, depth + 1);
                lua_setfield(L, -2, k.c_str());
            }
            break;
        }
        default: lua_pushnil(L); break;
    }
}

json to_json(lua_State* L, int idx, int depth);

json table_to_json(lua_State* L, int idx, int depth) {
    idx = lua_absindex(L, idx);
    const auto len = static_cast<lua_Integer>(lua_rawlen(L, idx));
    lua_Integer keys = 0;
    bool all_integer = true;
    lua_pushnil(L);
    while (lua_next(L, idx) != 0) {
        ++keys;
        if (!lua_isinteger(L, -2)) all_integer = false;
        lua_pop(L, 1);
    }
    if (keys > 0 && all_integer && keys == len) {
        json arr = json::array();
        for (lua_Integer i = 1; i <= len; ++i) {
            lua_rawgeti(L, idx, i);
            arr.push_back(to_json(L, -1, depth + 1));
            lua_pop(L, 1);
        }
        return arr;
    }
    json obj = json::object();
    lua_pushnil(L);
    while (lua_next(L, idx) != 0) {
        std::string key;
        if (lua_type(L, -2) == LUA_TSTRING) {
            std::size_t n = 0;
            const char* s = lua_tolstring(L, -2, &n);
            key.assign(s, n);
        } else {
            lua_pushvalue(L, -2);
            key = luaL_tolstring(L, -1, nullptr);
            lua_pop(L, 2);
        }
        obj[key] = to_json(L, -1, depth + 1);
        lua_pop(L, 1);
    }
    return obj;
}

json to_json(lua_State* L, int idx, int depth) {
    if (depth > kMaxJsonDepth) luaL_error(L, "result nesting too deep");
    switch (lua_type(L, idx)) {
        case LUA_TNIL: return nullptr;
        case LUA_TBOOLEAN: return lua_toboolean(L, idx) != 0;
        case LUA_TNUMBER:
            if (lua_isinteger(L, idx)) return static_cast<std::int64_t>(lua_tointeger(L, idx));
            return lua_tonumber(L, idx);
        case LUA_TSTRING: {
            std::size_t n = 0;
            const char* s = lua_tolstring(L, idx, &n);
            return std::string(s, n);
        }
        case LUA_TTABLE: return table_to_json(L, idx, depth);
        default: luaL_error(L, "cannot convert %s to JSON", luaL_typename(L, idx));
    }
    return nullptr;
}

// -- context ----------------------------------------------------------------

struct CallFrame {
    std::string_view args;
    std::string result;
};

int protected_call(lua_State* L) {
    auto* frame = static_cast<CallFrame*>(lua_touserdata(L, 1));
    // stack: frame, entry function
    json args = json::parse(frame->args, nullptr, false);
    if (args.is_discarded()) return luaL_error(L, "arguments are not JSON");
    push_json(L, args, 0);
    lua_call(L, 1, 1);
    frame->result = to_json(L, -1, 0).dump(-1, ' ', false, json::error_handler_t::replace);
    return 0;
}

class LuaContext final : public GuestContext {
public:
    LuaContext(ProgramPtr program, AccountingAllocator& alloc)
        : GuestContext(std::move(program)), charge_(alloc) {
        L_ = lua_newstate(&LuaContext::allocate, this);
        if (L_ == nullptr) throw ContextError(GuestStatus::oom, "cannot create Lua state within budget");

        const auto& prog = static_cast<const LuaProgram&>(*this->program());
        int rc = lua_cpcall_setup(prog);
        if (rc != LUA_OK) {
            std::string why = lua_tostring(L_, -1) != nullptr ? lua_tostring(L_, -1) : "context setup failed";
            lua_close(L_);
            L_ = nullptr;
            throw ContextError(rc == LUA_ERRMEM ? GuestStatus::oom : GuestStatus::guest_error, why);
        }
    }

    ~LuaContext() override {
        if (L_ != nullptr) lua_close(L_);
    }

    GuestResult exec(std::string_view fep, std::string_view json_args) override {
        lua_settop(L_, 0);
        std::string entry(fep);
        if (lua_getglobal(L_, entry.c_str()) != LUA_TFUNCTION) {
            lua_settop(L_, 0);
            return GuestResult::failure(GuestStatus::entry_not_found, entry);
        }
        count_execution();
        CallFrame frame{json_args, {}};
        lua_pushcfunction(L_, &protected_call);
        lua_pushlightuserdata(L_, &frame);
        lua_pushvalue(L_, 1);
        const int rc = lua_pcall(L_, 2, 0, 0);
        GuestResult out;
        if (rc == LUA_OK) {
            out = GuestResult::success(std::move(frame.result));
        } else {
            const char* msg = lua_tostring(L_, -1);
            out = GuestResult::failure(rc == LUA_ERRMEM ? GuestStatus::oom : GuestStatus::guest_error,
                                       msg != nullptr ? msg : "guest error");
        }
        lua_settop(L_, 0);
        lua_gc(L_, LUA_GCSTEP, 0);
        return out;
    }

private:
    int lua_cpcall_setup(const LuaProgram& prog) {
        lua_pushcfunction(L_, [](lua_State* L) -> int {
            auto* self = static_cast<LuaContext*>(lua_touserdata(L, 1));
            const auto* p = static_cast<const LuaProgram*>(lua_touserdata(L, 2));
            luaL_requiref(L, LUA_GNAME, luaopen_base, 1);
            luaL_requiref(L, LUA_TABLIBNAME, luaopen_table, 1);
            luaL_requiref(L, LUA_STRLIBNAME, luaopen_string, 1);
            luaL_requiref(L, LUA_MATHLIBNAME, luaopen_math, 1);
            luaL_requiref(L, LUA_UTF8LIBNAME, luaopen_utf8, 1);
            lua_settop(L, 2);
            for (const char* name : {"dofile", "loadfile", "load", "collectgarbage"}) {
                lua_pushnil(L);
                lua_setglobal(L, name);
            }
            lua_pushinteger(L, static_cast<lua_Integer>(self->id()));
            lua_setglobal(L, "CONTEXT_ID");
            if (luaL_loadbufferx(L, p->bytecode.data(), p->bytecode.size(), p->fid().c_str(), "b") != LUA_OK)
                return lua_error(L);
            lua_call(L, 0, 0);
            return 0;
        });
        lua_pushlightuserdata(L_, this);
        lua_pushlightuserdata(L_, const_cast<LuaProgram*>(&prog));
        return lua_pcall(L_, 2, 0, 0);
    }

    static void* allocate(void* ud, void* ptr, std::size_t osize, std::size_t nsize) {
        auto* self = static_cast<LuaContext*>(ud);
        const std::size_t old_size = ptr == nullptr ? 0 : osize;
        if (nsize == 0) {
            std::free(ptr);
            self->charge_.shrink(static_cast<std::int64_t>(old_size));
            return nullptr;
        }
        if (nsize > old_size) {
            if (!self->charge_.grow(static_cast<std::int64_t>(nsize - old_size))) return nullptr;
            void* p = std::realloc(ptr, nsize);
            if (p == nullptr) self->charge_.shrink(static_cast<std::int64_t>(nsize - old_size));
            return p;
        }
        void* p = std::realloc(ptr, nsize);
        if (p == nullptr) return ptr;  // shrinking may keep the old block
        self->charge_.shrink(static_cast<std::int64_t>(old_size - nsize));
        return p;
    }

    QuantizedCharge charge_;
    lua_State* L_ = nullptr;
};

bool blank(std::string_view s) {
    for (char c : s)
        if (c != ' ' && c != '\t' && c != '\n' && c != '\r') return false;
    return true;
}

}  // namespace

ProgramPtr LuaEngine::compile(const FunctionDescriptor& d) {
    if (blank(d.code)) throw CompileError("empty script");
    lua_State* L = luaL_newstate();
    if (L == nullptr) throw CompileError("out of memory while compiling");
    std::string bytecode;
    if (luaL_loadbufferx(L, d.code.data(), d.code.size(), d.fid.c_str(), "t") != LUA_OK) {
        std::string why = lua_tostring(L, -1);
        lua_close(L);
        throw CompileError(why);
    }
    lua_dump(L, &dump_writer, &bytecode, 0);
    lua_close(L);
    note_compile();
    return std::make_shared<LuaProgram>(d.fid, std::move(bytecode));
}

std::unique_ptr<GuestContext> LuaEngine::create_context(ProgramPtr program, AccountingAllocator& alloc) {
    return std::make_unique<LuaContext>(std::move(program), alloc);
}

}  // namespace isovisor
