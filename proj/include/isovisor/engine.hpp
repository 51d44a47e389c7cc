#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "isovisor/accounting.hpp"
#include "isovisor/registry.hpp"

namespace isovisor {

enum class GuestStatus { ok, entry_not_found, guest_error, oom };

struct GuestResult {
    GuestStatus status = GuestStatus::ok;
    /// JSON result on success, diagnostic text otherwise.
    std::string output;

    static GuestResult success(std::string json) { return {GuestStatus::ok, std::move(json)}; }
    static GuestResult failure(GuestStatus s, std::string why) { return {s, std::move(why)}; }
};

/// Malformed code artifact.
class CompileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Context construction failed. `oom` distinguishes a budget breach from a
/// guest error raised while loading the program into the context.
class ContextError : public std::runtime_error {
public:
    ContextError(GuestStatus status, const std::string& what)
        : std::runtime_error(what), status_(status) {}
    GuestStatus status() const noexcept { return status_; }

private:
    GuestStatus status_;
};

/// Immutable compiled form of one function, shared by every context in the
/// isolate that compiled it.
class CompiledProgram {
public:
    explicit CompiledProgram(std::string fid)
        : fid_(std::move(fid)), compiled_at_(std::chrono::steady_clock::now()) {}
    virtual ~CompiledProgram() = default;

    CompiledProgram(const CompiledProgram&) = delete;
    CompiledProgram& operator=(const CompiledProgram&) = delete;

    const std::string& fid() const noexcept { return fid_; }
    std::chrono::steady_clock::time_point compiled_at() const noexcept { return compiled_at_; }

    /// Bytes held by the compiled representation; charged to the owning isolate.
    virtual std::int64_t footprint() const noexcept { return 0; }

private:
    std::string fid_;
    std::chrono::steady_clock::time_point compiled_at_;
};

using ProgramPtr = std::shared_ptr<const CompiledProgram>;

/// Per-invocation mutable guest state. Confined: at most one worker executes
/// in a context at a time, but a context may move between workers across
/// invocations.
class GuestContext {
public:
    explicit GuestContext(ProgramPtr program);
    virtual ~GuestContext() = default;

    GuestContext(const GuestContext&) = delete;
    GuestContext& operator=(const GuestContext&) = delete;

    virtual GuestResult exec(std::string_view fep, std::string_view json_args) = 0;

    std::uint64_t id() const noexcept { return id_; }
    const ProgramPtr& program() const noexcept { return program_; }

    /// Claims the context for one execution; false if already claimed.
    bool try_bind() noexcept;
    void unbind() noexcept;
    bool bound() const noexcept { return bound_.load(std::memory_order_acquire); }

    std::uint64_t executions() const noexcept { return executions_; }

protected:
    void count_execution() noexcept { ++executions_; }

private:
    std::uint64_t id_;
    ProgramPtr program_;
    std::atomic<bool> bound_{false};
    std::uint64_t executions_ = 0;
};

/// A pluggable guest language.
class GuestEngine {
public:
    virtual ~GuestEngine() = default;

    virtual std::string_view language() const noexcept = 0;
    virtual bool supports_code_cache() const noexcept = 0;

    /// Throws CompileError on a malformed artifact.
    virtual ProgramPtr compile(const FunctionDescriptor& descriptor) = 0;

    /// All guest allocations of the new context flow through `alloc`.
    /// Throws ContextError.
    virtual std::unique_ptr<GuestContext> create_context(ProgramPtr program,
                                                         AccountingAllocator& alloc) = 0;

    /// Process-wide number of real compilations performed by engines.
    static std::uint64_t compiles_total() noexcept;

protected:
    static void note_compile() noexcept;
};

/// Synthetic emulated function: allocate memory, hold it for a while, return.
struct SyntheticSpec {
    double alloc_mb = 0;
    double run_ms = 0;
    bool echo = false;
};

/// Strict parse of a synthetic-spec document; throws CompileError.
SyntheticSpec parse_synthetic_spec(std::string_view document);

class SyntheticEngine final : public GuestEngine {
public:
    struct Options {
        /// Touch every page of the emulated allocation, not only account for it.
        bool materialize = true;
    };

    SyntheticEngine() : SyntheticEngine(Options{}) {}
    explicit SyntheticEngine(Options opts) : opts_(opts) {}

    std::string_view language() const noexcept override { return "synthetic"; }
    bool supports_code_cache() const noexcept override { return true; }
    ProgramPtr compile(const FunctionDescriptor& descriptor) override;
    std::unique_ptr<GuestContext> create_context(ProgramPtr program,
                                                 AccountingAllocator& alloc) override;

private:
    Options opts_;
};

/// Lua 5.4 guest. A function is a chunk that defines a global entry point
/// taking one table (the JSON arguments) and returning a JSON-convertible
/// value. Each context is a separate Lua state; the compiled program is the
/// precompiled bytecode of the chunk.
class LuaEngine final : public GuestEngine {
public:
    std::string_view language() const noexcept override { return "lua"; }
    bool supports_code_cache() const noexcept override { return true; }
    ProgramPtr compile(const FunctionDescriptor& descriptor) override;
    std::unique_ptr<GuestContext> create_context(ProgramPtr program,
                                                 AccountingAllocator& alloc) override;
};

/// Host-implemented builtins addressed by name in the code artifact. There is
/// nothing to compile; resolving the name is the whole load step.
class PrebuiltEngine final : public GuestEngine {
public:
    using Builtin = std::function<std::string(std::string_view json_args)>;

    PrebuiltEngine();

    void add(std::string name, Builtin fn);
    bool has(std::string_view name) const;

    std::string_view language() const noexcept override { return "prebuilt"; }
    bool supports_code_cache() const noexcept override { return false; }
    ProgramPtr compile(const FunctionDescriptor& descriptor) override;
    std::unique_ptr<GuestContext> create_context(ProgramPtr program,
                                                 AccountingAllocator& alloc) override;

private:
    std::map<std::string, Builtin, std::less<>> builtins_;
};

/// The installed guest engines, keyed by language tag.
class EngineSet {
public:
    /// synthetic + lua + prebuilt.
    static std::shared_ptr<EngineSet> defaults(SyntheticEngine::Options synthetic = {});

    void install(std::shared_ptr<GuestEngine> engine);
    GuestEngine* find(std::string_view language) const;
    bool installed(std::string_view language) const { return find(language) != nullptr; }
    std::vector<std::string> languages() const;

private:
    std::map<std::string, std::shared_ptr<GuestEngine>, std::less<>> engines_;
};

}  // namespace isovisor
