#include "isovisor/accounting.hpp"

#include <algorithm>

namespace isovisor {

namespace {

void raise_peak(std::atomic<std::int64_t>& peak, std::int64_t value) noexcept {
    auto seen = peak.load(std::memory_order_relaxed);
    while (value > seen && !peak.compare_exchange_weak(seen, value, std::memory_order_relaxed)) {
    }
}

}  // namespace

Charge MemoryAccount::try_charge(std::int64_t bytes) noexcept {
    if (bytes <= 0) return Charge::ok;
    auto cur = used_.load(std::memory_order_relaxed);
    do {
        if (cur + bytes > cap_) return Charge::oom;
    } while (!used_.compare_exchange_weak(cur, cur + bytes, std::memory_order_acq_rel));
    raise_peak(peak_, cur + bytes);
    return Charge::ok;
}

void MemoryAccount::release(std::int64_t bytes) noexcept {
    if (bytes <= 0) return;
    auto cur = used_.load(std::memory_order_relaxed);
    while (!used_.compare_exchange_weak(cur, std::max<std::int64_t>(0, cur - bytes),
                                        std::memory_order_acq_rel)) {
    }
}

AccountingAllocator::~AccountingAllocator() { release_all(); }

Charge AccountingAllocator::account(std::int64_t delta_bytes) noexcept {
    if (delta_bytes == 0) return Charge::ok;
    if (delta_bytes < 0) {
        auto cur = total_.load(std::memory_order_relaxed);
        std::int64_t freed = 0;
        std::int64_t next = 0;
        do {
            next = std::max<std::int64_t>(0, cur + delta_bytes);
            freed = cur - next;
        } while (!total_.compare_exchange_weak(cur, next, std::memory_order_acq_rel));
        if (parent_ != nullptr) parent_->release(freed);
        return Charge::ok;
    }

    auto cur = total_.load(std::memory_order_relaxed);
    do {
        if (cur + delta_bytes > budget_) return Charge::oom;
    } while (!total_.compare_exchange_weak(cur, cur + delta_bytes, std::memory_order_acq_rel));

    if (parent_ != nullptr && parent_->try_charge(delta_bytes) == Charge::oom) {
        total_.fetch_sub(delta_bytes, std::memory_order_acq_rel);
        return Charge::oom;
    }
    raise_peak(peak_, cur + delta_bytes);
    return Charge::ok;
}

void AccountingAllocator::release_all() noexcept {
    const auto held = total_.exchange(0, std::memory_order_acq_rel);
    if (parent_ != nullptr) parent_->release(held);
}

bool QuantizedCharge::grow(std::int64_t bytes) noexcept {
    if (bytes <= 0) return true;
    const auto want = in_use_ + bytes;
    if (want > reserved_) {
        const auto target = round_to_quantum(want);
        if (alloc_->account(target - reserved_) == Charge::oom) return false;
        reserved_ = target;
    }
    in_use_ = want;
    return true;
}

void QuantizedCharge::shrink(std::int64_t bytes) noexcept {
    if (bytes <= 0) return;
    in_use_ = std::max<std::int64_t>(0, in_use_ - bytes);
    // Keep one spare quantum of slack so alloc/free churn at a boundary does
    // not hammer the shared counters.
    const auto target = round_to_quantum(in_use_) + kAccountingQuantum;
    if (reserved_ > target) {
        (void)alloc_->account(target - reserved_);
        reserved_ = target;
    }
}

void QuantizedCharge::reset() noexcept {
    if (reserved_ > 0) (void)alloc_->account(-reserved_);
    reserved_ = 0;
    in_use_ = 0;
}

}  // namespace isovisor
