#include "isovisor/registry.hpp"

#include <mutex>

namespace isovisor {

FunctionRegistry::FunctionRegistry(LanguageCheck is_installed)
    : is_installed_(std::move(is_installed)) {}

bool FunctionRegistry::valid(const FunctionDescriptor& d) const {
    if (d.fid.empty() || d.fep.empty()) return false;
    if (d.code.empty() || d.code.size() > kMaxCodeBytes) return false;
    if (d.mem <= 0) return false;
    return is_installed_ && is_installed_(d.language);
}

bool FunctionRegistry::register_function(FunctionDescriptor descriptor) {
    if (!valid(descriptor)) return false;
    auto entry = std::make_shared<const FunctionDescriptor>(std::move(descriptor));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = functions_.try_emplace(entry->fid, entry);
    if (inserted) ++registrations_;
    return inserted;
}

bool FunctionRegistry::deregister(const std::string& fid) {
    std::unique_lock lock(mutex_);
    return functions_.erase(fid) == 1;
}

DescriptorPtr FunctionRegistry::lookup(const std::string& fid) const {
    std::shared_lock lock(mutex_);
    auto it = functions_.find(fid);
    return it == functions_.end() ? nullptr : it->second;
}

std::vector<DescriptorPtr> FunctionRegistry::list() const {
    std::shared_lock lock(mutex_);
    std::vector<DescriptorPtr> out;
    out.reserve(functions_.size());
    for (const auto& [fid, d] : functions_) out.push_back(d);
    return out;
}

std::size_t FunctionRegistry::size() const {
    std::shared_lock lock(mutex_);
    return functions_.size();
}

std::uint64_t FunctionRegistry::registrations_total() const {
    std::shared_lock lock(mutex_);
    return registrations_;
}

}  // namespace isovisor
