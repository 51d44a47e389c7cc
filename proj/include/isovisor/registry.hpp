#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace isovisor {

inline constexpr std::size_t kMaxCodeBytes = 16u * 1024u * 1024u;

/// A registered function. Immutable once installed; shared by reference
/// between the function cache and in-flight invocations.
struct FunctionDescriptor {
    std::string fid;
    std::string fep;
    std::string code;
    std::int64_t mem = 0;
    std::string language;

    friend bool operator==(const FunctionDescriptor&, const FunctionDescriptor&) = default;
};

using DescriptorPtr = std::shared_ptr<const FunctionDescriptor>;

/// In-memory function cache: fid -> descriptor. All operations are
/// linearizable; readers never block each other.
class FunctionRegistry {
public:
    using LanguageCheck = std::function<bool(const std::string&)>;

    /// `is_installed` decides which language tags are accepted at registration.
    explicit FunctionRegistry(LanguageCheck is_installed);

    /// All-or-nothing: returns false on invalid fields or a duplicate fid.
    bool register_function(FunctionDescriptor descriptor);
    bool deregister(const std::string& fid);
    DescriptorPtr lookup(const std::string& fid) const;

    std::vector<DescriptorPtr> list() const;
    std::size_t size() const;
    std::uint64_t registrations_total() const;

    /// Field validation without touching the cache.
    bool valid(const FunctionDescriptor& descriptor) const;

private:
    LanguageCheck is_installed_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, DescriptorPtr, std::less<>> functions_;
    std::uint64_t registrations_ = 0;
};

}  // namespace isovisor
