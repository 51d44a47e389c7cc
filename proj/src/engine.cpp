#include "isovisor/engine.hpp"

#include <cmath>
#include <thread>

#include "json.hpp"

namespace isovisor {

using json = nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_compiles{0};
std::atomic<std::uint64_t> g_context_ids{0};

}  // namespace

GuestContext::GuestContext(ProgramPtr program)
    : id_(g_context_ids.fetch_add(1, std::memory_order_relaxed) + 1), program_(std::move(program)) {}

bool GuestContext::try_bind() noexcept {
    bool expected = false;
    return bound_.compare_exchange_strong(expected, true, std::memory_order_acq_rel);
}

void GuestContext::unbind() noexcept { bound_.store(false, std::memory_order_release); }

std::uint64_t GuestEngine::compiles_total() noexcept { return g_compiles.load(std::memory_order_relaxed); }

void GuestEngine::note_compile() noexcept { g_compiles.fetch_add(1, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// synthetic

SyntheticSpec parse_synthetic_spec(std::string_view document) {
    json doc = json::parse(document, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw CompileError("synthetic spec must be a JSON object");

    SyntheticSpec spec;
    bool have_alloc = false;
    bool have_run = false;
    for (const auto& [key, value] : doc.items()) {
        if (key == "alloc_mb") {
            if (!value.is_number()) throw CompileError("alloc_mb must be a number");
            spec.alloc_mb = value.get<double>();
            have_alloc = true;
        } else if (key == "run_ms") {
            if (!value.is_number()) throw CompileError("run_ms must be a number");
            spec.run_ms = value.get<double>();
            have_run = true;
        } else if (key == "echo") {
            if (!value.is_boolean()) throw CompileError("echo must be a boolean");
            spec.echo = value.get<bool>();
        } else {
            throw CompileError("unknown synthetic spec key: " + key);
        }
    }
    if (!have_alloc || !have_run) throw CompileError("synthetic spec needs alloc_mb and run_ms");
    if (!std::isfinite(spec.alloc_mb) || spec.alloc_mb < 0) throw CompileError("alloc_mb must be >= 0");
    if (!std::isfinite(spec.run_ms) || spec.run_ms < 0) throw CompileError("run_ms must be >= 0");
    return spec;
}

namespace {

class SyntheticProgram final : public CompiledProgram {
public:
    SyntheticProgram(std::string fid, std::string fep, SyntheticSpec spec)
        : CompiledProgram(std::move(fid)), fep(std::move(fep)), spec(spec) {}

    std::string fep;
    SyntheticSpec spec;
};

class SyntheticContext final : public GuestContext {
public:
    SyntheticContext(ProgramPtr program, AccountingAllocator& alloc, bool materialize)
        : GuestContext(std::move(program)), alloc_(&alloc), materialize_(materialize) {}

    GuestResult exec(std::string_view fep, std::string_view json_args) override {
        const auto start = std::chrono::steady_clock::now();
        const auto& prog = static_cast<const SyntheticProgram&>(*program());
        if (fep != prog.fep) return GuestResult::failure(GuestStatus::entry_not_found, std::string(fep));

        json args = json::parse(json_args, nullptr, false);
        if (args.is_discarded()) return GuestResult::failure(GuestStatus::guest_error, "arguments are not JSON");
        count_execution();

        SyntheticSpec spec = prog.spec;
        // The trace emulator passes per-request shape in "emulate".
        if (args.is_object()) {
            if (auto it = args.find("emulate"); it != args.end() && it->is_object()) {
                if (auto a = it->find("alloc_mb"); a != it->end() && a->is_number() && a->get<double>() >= 0)
                    spec.alloc_mb = a->get<double>();
                if (auto r = it->find("run_ms"); r != it->end() && r->is_number() && r->get<double>() >= 0)
                    spec.run_ms = r->get<double>();
            }
        }

        QuantizedCharge charge(*alloc_);
        std::vector<std::unique_ptr<std::byte[]>> blocks;
        auto remaining = static_cast<std::int64_t>(std::llround(spec.alloc_mb * static_cast<double>(kMiB)));
        while (remaining > 0) {
            const auto chunk = std::min<std::int64_t>(remaining, kMiB);
            if (!charge.grow(chunk)) {
                return GuestResult::failure(GuestStatus::oom, "allocation exceeds isolate budget");
            }
            if (materialize_) {
                auto block = std::make_unique_for_overwrite<std::byte[]>(static_cast<std::size_t>(chunk));
                for (std::int64_t off = 0; off < chunk; off += 4096) block[static_cast<std::size_t>(off)] = std::byte{1};
                blocks.push_back(std::move(block));
            }
            remaining -= chunk;
        }

        std::this_thread::sleep_until(start + std::chrono::duration<double, std::milli>(spec.run_ms));
        return GuestResult::success(spec.echo ? args.dump() : std::string("{}"));
    }

private:
    AccountingAllocator* alloc_;
    bool materialize_;
};

}  // namespace

ProgramPtr SyntheticEngine::compile(const FunctionDescriptor& d) {
    auto spec = parse_synthetic_spec(d.code);
    note_compile();
    return std::make_shared<SyntheticProgram>(d.fid, d.fep, spec);
}

std::unique_ptr<GuestContext> SyntheticEngine::create_context(ProgramPtr program, AccountingAllocator& alloc) {
    return std::make_unique<SyntheticContext>(std::move(program), alloc, opts_.materialize);
}

// ---------------------------------------------------------------------------
// prebuilt

namespace {

class PrebuiltProgram final : public CompiledProgram {
public:
    PrebuiltProgram(std::string fid, PrebuiltEngine::Builtin fn)
        : CompiledProgram(std::move(fid)), fn(std::move(fn)) {}
    PrebuiltEngine::Builtin fn;
};

class PrebuiltContext final : public GuestContext {
public:
    PrebuiltContext(ProgramPtr program, AccountingAllocator& alloc)
        : GuestContext(std::move(program)), charge_(alloc) {
        if (!charge_.grow(kAccountingQuantum)) throw ContextError(GuestStatus::oom, "no room for context state");
    }

    GuestResult exec(std::string_view, std::string_view json_args) override {
        count_execution();
        try {
            return GuestResult::success(static_cast<const PrebuiltProgram&>(*program()).fn(json_args));
        } catch (const std::exception& e) {
            return GuestResult::failure(GuestStatus::guest_error, e.what());
        }
    }

private:
    QuantizedCharge charge_;
};

}  // namespace

PrebuiltEngine::PrebuiltEngine() {
    add("noop", [](std::string_view) { return std::string("{}"); });
    add("echo", [](std::string_view args) { return json::parse(args).dump(); });
    add("sum", [](std::string_view args) {
        double total = 0;
        const json doc = json::parse(args);
        for (const auto& [k, v] : doc.items())
            if (v.is_number()) total += v.get<double>();
        return json{{"sum", total}}.dump();
    });
}

void PrebuiltEngine::add(std::string name, Builtin fn) { builtins_[std::move(name)] = std::move(fn); }

bool PrebuiltEngine::has(std::string_view name) const { return builtins_.find(name) != builtins_.end(); }

ProgramPtr PrebuiltEngine::compile(const FunctionDescriptor& d) {
    auto it = builtins_.find(std::string_view(d.code));
    if (it == builtins_.end()) throw CompileError("no builtin named '" + d.code + "'");
    return std::make_shared<PrebuiltProgram>(d.fid, it->second);
}

std::unique_ptr<GuestContext> PrebuiltEngine::create_context(ProgramPtr program, AccountingAllocator& alloc) {
    return std::make_unique<PrebuiltContext>(std::move(program), alloc);
}

// ---------------------------------------------------------------------------

std::shared_ptr<EngineSet> EngineSet::defaults(SyntheticEngine::Options synthetic) {
    auto set = std::make_shared<EngineSet>();
    set->install(std::make_shared<SyntheticEngine>(synthetic));
    set->install(std::make_shared<LuaEngine>());
    set->install(std::make_shared<PrebuiltEngine>());
    return set;
}

void EngineSet::install(std::shared_ptr<GuestEngine> engine) {
    std::string tag(engine->language());
    engines_[std::move(tag)] = std::move(engine);
}

GuestEngine* EngineSet::find(std::string_view language) const {
    auto it = engines_.find(language);
    return it == engines_.end() ? nullptr : it->second.get();
}

std::vector<std::string> EngineSet::languages() const {
    std::vector<std::string> out;
    for (const auto& [tag, e] : engines_) out.push_back(tag);
    return out;
}

}  // namespace isovisor
