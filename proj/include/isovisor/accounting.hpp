#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>

namespace isovisor {

inline constexpr std::int64_t kKiB = 1024;
inline constexpr std::int64_t kMiB = 1024 * kKiB;
inline constexpr std::int64_t kGiB = 1024 * kMiB;

/// Granularity at which guest allocations are charged against a budget.
inline constexpr std::int64_t kAccountingQuantum = 4 * kKiB;

enum class Charge { ok, oom };

/// Runtime-wide memory account. Every isolate allocator charges through to
/// one of these, so the sum of live isolate charges never exceeds the cap.
class MemoryAccount {
public:
    explicit MemoryAccount(std::int64_t cap_bytes) noexcept : cap_(cap_bytes) {}

    MemoryAccount(const MemoryAccount&) = delete;
    MemoryAccount& operator=(const MemoryAccount&) = delete;

    [[nodiscard]] Charge try_charge(std::int64_t bytes) noexcept;
    void release(std::int64_t bytes) noexcept;

    std::int64_t used() const noexcept { return used_.load(std::memory_order_acquire); }
    std::int64_t cap() const noexcept { return cap_; }
    std::int64_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }

private:
    const std::int64_t cap_;
    std::atomic<std::int64_t> used_{0};
    std::atomic<std::int64_t> peak_{0};
};

/// Budgeted allocator front for one isolate. Charges are rejected once the
/// running total would exceed the budget (or the parent account's cap);
/// frees never fail and the total never drops below zero.
class AccountingAllocator {
public:
    AccountingAllocator(std::int64_t budget_bytes, MemoryAccount* parent) noexcept
        : budget_(budget_bytes), parent_(parent) {}

    ~AccountingAllocator();

    AccountingAllocator(const AccountingAllocator&) = delete;
    AccountingAllocator& operator=(const AccountingAllocator&) = delete;

    /// Positive delta charges, negative delta releases.
    [[nodiscard]] Charge account(std::int64_t delta_bytes) noexcept;

    std::int64_t total() const noexcept { return total_.load(std::memory_order_acquire); }
    std::int64_t budget() const noexcept { return budget_; }
    std::int64_t peak() const noexcept { return peak_.load(std::memory_order_relaxed); }

    /// Releases everything still charged (isolate teardown).
    void release_all() noexcept;

private:
    const std::int64_t budget_;
    MemoryAccount* parent_;
    std::atomic<std::int64_t> total_{0};
    std::atomic<std::int64_t> peak_{0};
};

/// Rounds a byte count up to the accounting quantum.
constexpr std::int64_t round_to_quantum(std::int64_t bytes) noexcept {
    return (bytes + kAccountingQuantum - 1) / kAccountingQuantum * kAccountingQuantum;
}

/// Per-context charge tracker: turns fine-grained allocation deltas into
/// quantum-sized charges on an AccountingAllocator. Not thread-safe; a
/// context is confined to one worker at a time.
class QuantizedCharge {
public:
    explicit QuantizedCharge(AccountingAllocator& alloc) noexcept : alloc_(&alloc) {}
    ~QuantizedCharge() { reset(); }

    QuantizedCharge(const QuantizedCharge&) = delete;
    QuantizedCharge& operator=(const QuantizedCharge&) = delete;

    /// Returns false when growing would breach the budget; usage is unchanged then.
    bool grow(std::int64_t bytes) noexcept;
    void shrink(std::int64_t bytes) noexcept;
    void reset() noexcept;

    std::int64_t in_use() const noexcept { return in_use_; }
    std::int64_t reserved() const noexcept { return reserved_; }

private:
    AccountingAllocator* alloc_;
    std::int64_t in_use_ = 0;
    std::int64_t reserved_ = 0;
};

}  // namespace isovisor
