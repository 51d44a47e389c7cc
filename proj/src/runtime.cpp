#include "isovisor/runtime.hpp"

namespace isovisor {

Runtime::Runtime(RuntimeConfig config, std::shared_ptr<EngineSet> engines, Clock clock)
    : config_(config),
      engines_(std::move(engines)),
      account_(config.memory_cap),
      registry_([e = engines_](const std::string& lang) { return e->installed(lang); }),
      isolates_(engines_, account_, config.isolates, std::move(clock)) {
    if (config_.reaper_period.count() > 0) isolates_.start_reaper(config_.reaper_period);
}

Runtime::~Runtime() { isolates_.stop_reaper(); }

bool Runtime::register_function(FunctionDescriptor descriptor) {
    const std::string fid = descriptor.fid;
    if (!registry_.register_function(std::move(descriptor))) return false;
    if (config_.isolates.prewarm_n > 0) {
        try {
            isolates_.prewarm(registry_.lookup(fid), config_.isolates.prewarm_n);
        } catch (const GlobalMemoryExhausted&) {
            // Pre-warming is best effort; the function stays registered.
        }
    }
    return true;
}

bool Runtime::deregister(const std::string& fid) {
    if (!registry_.deregister(fid)) return false;
    isolates_.doom(fid);
    return true;
}

std::optional<Runtime::Ticket> Runtime::prepare(const std::string& fid, Invocation* failure) {
    auto fn = registry_.lookup(fid);
    if (!fn) {
        if (failure != nullptr) *failure = Invocation{Outcome::not_registered, "function not registered: " + fid};
        return std::nullopt;
    }
    try {
        return Ticket{fn, isolates_.acquire(fn)};
    } catch (const GlobalMemoryExhausted& e) {
        if (failure != nullptr) *failure = Invocation{Outcome::oom, e.what()};
    } catch (const std::exception& e) {
        if (failure != nullptr) *failure = Invocation{Outcome::guest_error, e.what()};
    }
    return std::nullopt;
}

Invocation Runtime::execute(Ticket ticket, std::string args_json) {
    Invocation out;
    Isolate& iso = ticket.lease.isolate();
    out.cold = ticket.lease.cold();
    out.isolate_id = iso.id();
    (out.cold ? cold_ : warm_).fetch_add(1, std::memory_order_relaxed);

    RunResult r = isolates_.run_in_isolate(iso, ObjectHandle<DescriptorPtr>(ticket.function),
                                           ObjectHandle<std::string>(std::move(args_json)));
    out.outcome = r.outcome;
    out.compiled = r.compiled;
    out.context_id = r.context_id;
    // A breached budget leaves guest heaps in an unknown state.
    if (r.outcome == Outcome::oom) ticket.lease.poison();
    ticket.lease.release();
    out.body = r.result.retrieve();
    return out;
}

Invocation Runtime::invoke(const std::string& fid, std::string args_json) {
    Invocation failure;
    auto ticket = prepare(fid, &failure);
    if (!ticket) return failure;
    return execute(std::move(*ticket), std::move(args_json));
}

}  // namespace isovisor
