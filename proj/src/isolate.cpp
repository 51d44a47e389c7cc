#include "isovisor/isolate.hpp"

#include <algorithm>
#include <cstring>

namespace isovisor {

const char* to_string(Outcome o) noexcept {
    switch (o) {
        case Outcome::ok: return "ok";
        case Outcome::not_registered: return "not-registered";
        case Outcome::oom: return "oom";
        case Outcome::guest_error: return "guest-error";
        case Outcome::rejected_queue_full: return "rejected-queue-full";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Isolate

Isolate::Isolate(std::uint64_t id, DescriptorPtr descriptor, GuestEngine& engine, std::int64_t budget,
                 int max_contexts, std::int64_t base_heap_bytes, MemoryAccount& runtime_account,
                 std::shared_ptr<std::atomic<std::uint64_t>> destroyed_counter)
    : id_(id),
      descriptor_(std::move(descriptor)),
      engine_(engine),
      max_contexts_(std::max(1, max_contexts)),
      allocator_(budget, &runtime_account) {
    if (base_heap_bytes > 0) {
        if (allocator_.account(base_heap_bytes) == Charge::oom) {
            if (base_heap_bytes > budget)
                throw GlobalMemoryExhausted("function budget smaller than the isolate base heap");
            throw GlobalMemoryExhausted("runtime memory cap reached");
        }
        base_heap_ = std::make_unique<std::byte[]>(static_cast<std::size_t>(base_heap_bytes));
    }
    touch(std::chrono::steady_clock::now());
    destroyed_counter_ = std::move(destroyed_counter);
}

Isolate::~Isolate() {
    {
        std::lock_guard lock(mutex_);
        slots_.clear();
        program_.reset();
    }
    allocator_.release_all();
    if (destroyed_counter_) destroyed_counter_->fetch_add(1, std::memory_order_relaxed);
}

ProgramPtr Isolate::program(bool* compiled_now) {
    std::lock_guard lock(mutex_);
    if (compiled_now != nullptr) *compiled_now = false;
    if (program_) return program_;
    if (compile_error_) throw CompileError(*compile_error_);
    try {
        auto prog = engine_.compile(*descriptor_);
        if (allocator_.account(prog->footprint()) == Charge::oom)
            throw ContextError(GuestStatus::oom, "compiled program exceeds isolate budget");
        program_ = std::move(prog);
        if (compiled_now != nullptr) *compiled_now = true;
    } catch (const CompileError& e) {
        compile_error_ = e.what();
        throw;
    }
    return program_;
}

bool Isolate::has_program() const {
    std::lock_guard lock(mutex_);
    return program_ != nullptr;
}

GuestContext& Isolate::bind_context(bool* created_now) {
    if (created_now != nullptr) *created_now = false;
    auto prog = program();
    const auto me = std::this_thread::get_id();

    std::lock_guard lock(mutex_);
    Slot* pick = nullptr;
    for (auto& s : slots_) {
        if (s.context->bound()) continue;
        if (s.last_thread == me) {
            pick = &s;
            break;
        }
        if (pick == nullptr) pick = &s;
    }
    if (pick == nullptr) {
        if (static_cast<int>(slots_.size()) >= max_contexts_)
            throw ContextError(GuestStatus::guest_error, "isolate has no free context");
        slots_.push_back(Slot{engine_.create_context(prog, allocator_), me});
        pick = &slots_.back();
        if (created_now != nullptr) *created_now = true;
    }
    pick->context->try_bind();
    pick->last_thread = me;
    ++busy_;
    int seen = peak_busy_.load(std::memory_order_relaxed);
    while (busy_ > seen && !peak_busy_.compare_exchange_weak(seen, busy_)) {
    }
    return *pick->context;
}

void Isolate::unbind_context(GuestContext& ctx) {
    std::lock_guard lock(mutex_);
    ctx.unbind();
    --busy_;
}

std::size_t Isolate::context_count() const {
    std::lock_guard lock(mutex_);
    return slots_.size();
}

int Isolate::busy_contexts() const {
    std::lock_guard lock(mutex_);
    return busy_;
}

SteadyTime Isolate::last_used() const noexcept {
    return SteadyTime(SteadyTime::duration(last_used_.load(std::memory_order_acquire)));
}

void Isolate::touch(SteadyTime now) noexcept {
    last_used_.store(now.time_since_epoch().count(), std::memory_order_release);
}

// ---------------------------------------------------------------------------
// IsolatePool

IsolatePtr IsolatePool::poll(const std::string& fid) {
    std::lock_guard lock(mutex_);
    auto it = idle_.find(fid);
    if (it == idle_.end() || it->second.empty()) return nullptr;
    auto iso = std::move(it->second.back());
    it->second.pop_back();
    if (it->second.empty()) idle_.erase(it);
    --count_;
    return iso;
}

bool IsolatePool::offer(const std::string& fid, IsolatePtr isolate) {
    if (!isolate || isolate->doomed()) return false;
    std::lock_guard lock(mutex_);
    idle_[fid].push_back(std::move(isolate));
    ++count_;
    return true;
}

std::vector<IsolatePtr> IsolatePool::take_expired(SteadyTime now, std::chrono::nanoseconds ttl) {
    std::vector<IsolatePtr> out;
    std::lock_guard lock(mutex_);
    for (auto it = idle_.begin(); it != idle_.end();) {
        auto& stack = it->second;
        auto keep = std::stable_partition(stack.begin(), stack.end(),
                                          [&](const IsolatePtr& i) { return now - i->last_used() <= ttl; });
        for (auto e = keep; e != stack.end(); ++e) out.push_back(std::move(*e));
        stack.erase(keep, stack.end());
        it = stack.empty() ? idle_.erase(it) : std::next(it);
    }
    count_ -= out.size();
    return out;
}

std::vector<IsolatePtr> IsolatePool::take_all(const std::string& fid) {
    std::lock_guard lock(mutex_);
    auto it = idle_.find(fid);
    if (it == idle_.end()) return {};
    auto out = std::move(it->second);
    idle_.erase(it);
    count_ -= out.size();
    return out;
}

std::vector<IsolatePtr> IsolatePool::take_all() {
    std::lock_guard lock(mutex_);
    std::vector<IsolatePtr> out;
    for (auto& [fid, stack] : idle_)
        for (auto& i : stack) out.push_back(std::move(i));
    idle_.clear();
    count_ = 0;
    return out;
}

std::size_t IsolatePool::size() const {
    std::lock_guard lock(mutex_);
    return count_;
}

std::size_t IsolatePool::size(const std::string& fid) const {
    std::lock_guard lock(mutex_);
    auto it = idle_.find(fid);
    return it == idle_.end() ? 0 : it->second.size();
}

bool IsolatePool::contains(std::uint64_t isolate_id) const {
    std::lock_guard lock(mutex_);
    for (const auto& [fid, stack] : idle_)
        for (const auto& i : stack)
            if (i->id() == isolate_id) return true;
    return false;
}

// ---------------------------------------------------------------------------
// IsolateManager

IsolateManager::IsolateManager(std::shared_ptr<EngineSet> engines, MemoryAccount& runtime_account,
                               IsolateConfig config, Clock clock)
    : engines_(std::move(engines)), account_(runtime_account), config_(config), clock_(std::move(clock)) {
    if (config_.max_contexts < 1) throw std::invalid_argument("max_contexts must be >= 1");
}

IsolateManager::~IsolateManager() {
    stop_reaper();
    drain();
}

IsolateManager::Lease& IsolateManager::Lease::operator=(Lease&& other) noexcept {
    if (this != &other) {
        release();
        owner_ = std::exchange(other.owner_, nullptr);
        isolate_ = std::move(other.isolate_);
        cold_ = other.cold_;
        poisoned_ = other.poisoned_;
    }
    return *this;
}

void IsolateManager::Lease::release() noexcept {
    if (owner_ != nullptr && isolate_) owner_->give_back(std::move(isolate_), poisoned_);
    owner_ = nullptr;
    isolate_.reset();
}

std::int64_t IsolateManager::budget_for(const FunctionDescriptor& d) const {
    return config_.share_code_cache ? d.mem * config_.max_contexts : d.mem;
}

IsolatePtr IsolateManager::create_isolate(const DescriptorPtr& descriptor) {
    GuestEngine* engine = engines_->find(descriptor->language);
    if (engine == nullptr) throw std::invalid_argument("no engine for language " + descriptor->language);

    const auto t0 = std::chrono::steady_clock::now();
    auto iso = std::make_shared<Isolate>(next_id_.fetch_add(1), descriptor, *engine, budget_for(*descriptor),
                                         config_.share_code_cache ? config_.max_contexts : 1,
                                         config_.base_heap_bytes, account_, destroyed_);
    const auto us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    iso->touch(clock_());
    created_.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard lock(mutex_);
    if (create_us_.size() >= 65536) create_us_.erase(create_us_.begin(), create_us_.begin() + 32768);
    create_us_.push_back(us);
    return iso;
}

IsolateManager::Lease IsolateManager::acquire(const DescriptorPtr& descriptor) {
    {
        std::lock_guard lock(mutex_);
        if (config_.share_code_cache && config_.max_contexts > 1) {
            // Co-locate with an executing isolate of the same function that
            // still has a free context slot; most recently acquired first.
            Executing* best = nullptr;
            for (auto& [id, e] : executing_) {
                if (e.poisoned || e.isolate->doomed() || e.isolate->descriptor() != descriptor) continue;
                if (e.active >= config_.max_contexts) continue;
                if (best == nullptr || e.acquired_seq > best->acquired_seq) best = &e;
            }
            if (best != nullptr) {
                ++best->active;
                best->acquired_seq = ++acquire_seq_;
                return Lease(this, best->isolate, false);
            }
        }
        while (auto iso = pool_.poll(descriptor->fid)) {
            if (iso->descriptor() != descriptor) {
                // Left over from an earlier registration of the same fid.
                continue;
            }
            executing_[iso->id()] = Executing{iso, 1, false, ++acquire_seq_};
            return Lease(this, std::move(iso), false);
        }
    }

    auto iso = create_isolate(descriptor);
    std::lock_guard lock(mutex_);
    executing_[iso->id()] = Executing{iso, 1, false, ++acquire_seq_};
    return Lease(this, std::move(iso), true);
}

void IsolateManager::give_back(IsolatePtr isolate, bool poisoned) {
    const auto now = clock_();
    isolate->touch(now);
    std::lock_guard lock(mutex_);
    auto it = executing_.find(isolate->id());
    if (it == executing_.end()) {
        // Not tracked (created directly); pool it like offer().
        if (!poisoned) pool_.offer(isolate->fid(), isolate);
        return;
    }
    auto& e = it->second;
    e.poisoned = e.poisoned || poisoned;
    if (--e.active > 0) return;
    const bool destroy = e.poisoned;
    executing_.erase(it);
    if (!destroy) pool_.offer(isolate->fid(), isolate);
}

RunResult IsolateManager::run_in_isolate(Isolate& isolate, ObjectHandle<DescriptorPtr> func,
                                         ObjectHandle<std::string> args) {
    RunResult out;
    const DescriptorPtr fn = func.retrieve();
    const std::string request = args.retrieve();

    GuestContext* ctx = nullptr;
    try {
        (void)isolate.program(&out.compiled);
        if (out.compiled) compiles_.fetch_add(1, std::memory_order_relaxed);
        ctx = &isolate.bind_context(&out.context_created);
    } catch (const CompileError& e) {
        out.outcome = Outcome::guest_error;
        out.result = ObjectHandle<std::string>(std::string("compile error: ") + e.what());
        return out;
    } catch (const ContextError& e) {
        out.outcome = e.status() == GuestStatus::oom ? Outcome::oom : Outcome::guest_error;
        out.result = ObjectHandle<std::string>(std::string(e.what()));
        return out;
    }
    if (out.context_created) contexts_created_.fetch_add(1, std::memory_order_relaxed);
    {
        int busy = isolate.peak_busy_contexts();
        int seen = peak_contexts_.load(std::memory_order_relaxed);
        while (busy > seen && !peak_contexts_.compare_exchange_weak(seen, busy)) {
        }
    }

    out.context_id = ctx->id();
    GuestResult r = ctx->exec(fn->fep, request);
    isolate.unbind_context(*ctx);
    isolate.touch(clock_());

    switch (r.status) {
        case GuestStatus::ok: out.outcome = Outcome::ok; break;
        case GuestStatus::oom: out.outcome = Outcome::oom; break;
        case GuestStatus::entry_not_found:
            out.outcome = Outcome::guest_error;
            r.output = "entry point not found: " + r.output;
            break;
        case GuestStatus::guest_error: out.outcome = Outcome::guest_error; break;
    }
    out.result = ObjectHandle<std::string>(std::move(r.output));
    return out;
}

IsolatePtr IsolateManager::poll(const std::string& fid) {
    std::lock_guard lock(mutex_);
    auto iso = pool_.poll(fid);
    if (iso) executing_[iso->id()] = Executing{iso, 1, false, ++acquire_seq_};
    return iso;
}

void IsolateManager::offer(const std::string& fid, IsolatePtr isolate) {
    (void)fid;
    give_back(std::move(isolate), false);
}

void IsolateManager::prewarm(const DescriptorPtr& descriptor, int n) {
    for (int i = 0; i < n; ++i) {
        pool_.offer(descriptor->fid, create_isolate(descriptor));
    }
}

std::size_t IsolateManager::reap(SteadyTime now) {
    auto expired = pool_.take_expired(now, config_.ttl);
    const auto n = expired.size();
    expired.clear();
    reaped_.fetch_add(n, std::memory_order_relaxed);
    return n;
}

void IsolateManager::doom(const std::string& fid) {
    std::vector<IsolatePtr> dying;
    {
        std::lock_guard lock(mutex_);
        for (auto& [id, e] : executing_)
            if (e.isolate->fid() == fid) e.isolate->doom();
        dying = pool_.take_all(fid);
        for (auto& i : dying) i->doom();
    }
    dying.clear();
}

std::size_t IsolateManager::drain() {
    auto all = pool_.take_all();
    const auto n = all.size();
    all.clear();
    return n;
}

void IsolateManager::start_reaper(std::chrono::milliseconds period) {
    stop_reaper();
    {
        std::lock_guard lock(reaper_mutex_);
        reaper_stop_ = false;
    }
    reaper_ = std::thread([this, period] {
        std::unique_lock lock(reaper_mutex_);
        while (!reaper_cv_.wait_for(lock, period, [this] { return reaper_stop_; })) {
            lock.unlock();
            reap();
            lock.lock();
        }
    });
}

void IsolateManager::stop_reaper() {
    {
        std::lock_guard lock(reaper_mutex_);
        reaper_stop_ = true;
    }
    reaper_cv_.notify_all();
    if (reaper_.joinable()) reaper_.join();
}

IsolateStats IsolateManager::stats() const {
    IsolateStats s;
    s.isolates_created = created_.load();
    s.isolates_destroyed = destroyed_->load();
    s.isolates_reaped = reaped_.load();
    s.compiles = compiles_.load();
    s.contexts_created = contexts_created_.load();
    s.pooled_isolates = pool_.size();
    {
        std::lock_guard lock(mutex_);
        s.executing_isolates = executing_.size();
    }
    s.live_isolates = static_cast<std::size_t>(s.isolates_created - s.isolates_destroyed);
    s.peak_contexts_per_isolate = peak_contexts_.load();
    return s;
}

bool IsolateManager::is_live(std::uint64_t isolate_id) const {
    if (pool_.contains(isolate_id)) return true;
    std::lock_guard lock(mutex_);
    return executing_.count(isolate_id) != 0;
}

std::vector<double> IsolateManager::creation_latencies_us() const {
    std::lock_guard lock(mutex_);
    return create_us_;
}

}  // namespace isovisor
