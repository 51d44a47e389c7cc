#pragma once

// Small-scale linearizability checking: record concurrent histories of a
// shared object, then search for a sequential order that respects real time
// and reproduces every observed result (Wing & Gong style brute force).

#include <atomic>
#include <barrier>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "isovisor/isolate.hpp"
#include "isovisor/registry.hpp"

namespace isovisor::lincheck {

enum class Kind { reg, dereg, lookup, offer, poll };

struct Op {
    int thread = 0;
    Kind kind = Kind::lookup;
    std::string key;
    std::int64_t arg = 0;
    std::int64_t result = 0;
    std::uint64_t call = 0;
    std::uint64_t ret = 0;
};

using History = std::vector<Op>;

/// Sequential specification of the function registry: fid -> mem.
struct RegistryModel {
    std::map<std::string, std::int64_t> map;

    std::int64_t apply(const Op& op) {
        switch (op.kind) {
            case Kind::reg:
                if (op.arg <= 0 || map.count(op.key)) return 0;
                map[op.key] = op.arg;
                return 1;
            case Kind::dereg: return map.erase(op.key) == 1 ? 1 : 0;
            case Kind::lookup: {
                auto it = map.find(op.key);
                return it == map.end() ? -1 : it->second;
            }
            default: return -2;
        }
    }
};

/// Sequential specification of the isolate pool: a stack per fid.
struct PoolModel {
    std::map<std::string, std::vector<std::int64_t>> stacks;

    std::int64_t apply(const Op& op) {
        auto& s = stacks[op.key];
        switch (op.kind) {
            case Kind::offer: s.push_back(op.arg); return 0;
            case Kind::poll: {
                if (s.empty()) return 0;
                const auto id = s.back();
                s.pop_back();
                return id;
            }
            default: return -2;
        }
    }
};

namespace detail {

template <typename Model>
bool search(const History& h, std::vector<bool>& done, std::size_t left, const Model& state) {
    if (left == 0) return true;
    // The earliest response among pending ops bounds which op may go first.
    std::uint64_t horizon = UINT64_MAX;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (!done[i]) horizon = std::min(horizon, h[i].ret);
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (done[i] || h[i].call > horizon) continue;
        Model next = state;
        if (next.apply(h[i]) != h[i].result) continue;
        done[i] = true;
        if (search(h, done, left - 1, next)) return true;
        done[i] = false;
    }
    return false;
}

}  // namespace detail

template <typename Model>
bool linearizable(const History& h, Model initial = {}) {
    std::vector<bool> done(h.size(), false);
    return detail::search(h, done, h.size(), initial);
}

/// Runs `threads` workers; each executes its scripted ops against the shared
/// object, stamping call/return on a global logical clock.
template <typename Exec>
History record(const std::vector<std::vector<Op>>& scripts, Exec exec) {
    std::atomic<std::uint64_t> clock{0};
    std::vector<std::vector<Op>> out(scripts.size());
    std::barrier sync(static_cast<std::ptrdiff_t>(scripts.size()));
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < scripts.size(); ++t)
        threads.emplace_back([&, t] {
            sync.arrive_and_wait();
            for (auto op : scripts[t]) {
                op.call = clock.fetch_add(1);
                op.result = exec(op);
                op.ret = clock.fetch_add(1);
                out[t].push_back(op);
                if (op.call % 3 == 0) std::this_thread::yield();
            }
        });
    for (auto& th : threads) th.join();
    History h;
    for (auto& v : out) h.insert(h.end(), v.begin(), v.end());
    return h;
}

/// Splits at most `max_ops` operations over `threads` callers.
inline std::vector<int> op_counts(int threads, int max_ops) {
    std::vector<int> n(static_cast<std::size_t>(threads), max_ops / threads);
    for (int i = 0; i < max_ops % threads; ++i) ++n[static_cast<std::size_t>(i)];
    return n;
}

struct Tally {
    int histories = 0;
    int linearizable = 0;
};

/// Random register/deregister/lookup histories against FunctionRegistry.
inline Tally check_registry(int threads, int trials, std::uint64_t seed, int max_ops = 8) {
    std::mt19937_64 rng(seed);
    Tally tally;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<std::vector<Op>> scripts;
        const auto counts = op_counts(threads, max_ops);
        for (int t = 0; t < threads; ++t) {
            std::vector<Op> s;
            for (int i = 0; i < counts[static_cast<std::size_t>(t)]; ++i) {
                Op op;
                op.thread = t;
                op.kind = static_cast<Kind>(rng() % 3);
                op.key = rng() % 2 ? "a" : "b";
                op.arg = static_cast<std::int64_t>(1 + rng() % 2);
                s.push_back(op);
            }
            scripts.push_back(std::move(s));
        }
        FunctionRegistry reg([](const std::string&) { return true; });
        auto h = record(scripts, [&](const Op& op) -> std::int64_t {
            switch (op.kind) {
                case Kind::reg: return reg.register_function({op.key, "main", "x", op.arg, "synthetic"}) ? 1 : 0;
                case Kind::dereg: return reg.deregister(op.key) ? 1 : 0;
                default: {
                    auto d = reg.lookup(op.key);
                    return d ? d->mem : -1;
                }
            }
        });
        ++tally.histories;
        if (linearizable<RegistryModel>(h)) ++tally.linearizable;
    }
    return tally;
}

/// Random offer/poll histories against IsolatePool. Every isolate is offered
/// at most once by the thread that owns it.
inline Tally check_pool(int threads, int trials, std::uint64_t seed, int max_ops = 8) {
    std::mt19937_64 rng(seed);
    MemoryAccount account(kGiB);
    auto engines = EngineSet::defaults();
    GuestEngine& engine = *engines->find("synthetic");
    auto fn_a = std::make_shared<const FunctionDescriptor>(FunctionDescriptor{"a", "main", "{}", kMiB, "synthetic"});
    auto fn_b = std::make_shared<const FunctionDescriptor>(FunctionDescriptor{"b", "main", "{}", kMiB, "synthetic"});

    Tally tally;
    for (int trial = 0; trial < trials; ++trial) {
        std::map<std::int64_t, IsolatePtr> isolates;
        std::int64_t next_id = 1;
        std::vector<std::vector<Op>> scripts;
        const auto counts = op_counts(threads, max_ops);
        for (int t = 0; t < threads; ++t) {
            std::vector<Op> s;
            for (int i = 0; i < counts[static_cast<std::size_t>(t)]; ++i) {
                Op op;
                op.thread = t;
                op.key = rng() % 2 ? "a" : "b";
                if (rng() % 2) {
                    op.kind = Kind::offer;
                    op.arg = next_id++;
                    isolates[op.arg] = std::make_shared<Isolate>(static_cast<std::uint64_t>(op.arg),
                                                                 op.key == "a" ? fn_a : fn_b, engine, kMiB, 1, 0,
                                                                 account);
                } else {
                    op.kind = Kind::poll;
                }
                s.push_back(op);
            }
            scripts.push_back(std::move(s));
        }
        IsolatePool pool;
        auto h = record(scripts, [&](const Op& op) -> std::int64_t {
            if (op.kind == Kind::offer) {
                pool.offer(op.key, isolates.at(op.arg));
                return 0;
            }
            auto iso = pool.poll(op.key);
            return iso ? static_cast<std::int64_t>(iso->id()) : 0;
        });
        ++tally.histories;
        if (linearizable<PoolModel>(h)) ++tally.linearizable;
    }
    return tally;
}

}  // namespace isovisor::lincheck
