#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "isovisor/gateway.hpp"

namespace isovisor {

/// Bytes with an optional B, KiB, MiB or GiB suffix ("2GiB", "512MiB", "4096").
/// nullopt on anything else, including negative values and overflow.
std::optional<std::int64_t> parse_size(std::string_view text);

/// Applies a key=value file onto `config`. Keys mirror the serve flags:
/// host, port, workers, queue_capacity, memory_cap, ttl, max_contexts,
/// share_code_cache, prewarm, reaper_period_ms, max_invoke_body,
/// shutdown_deadline_ms. '#' starts a comment. Throws std::invalid_argument
/// naming the file and line on unknown keys or bad values.
void apply_config(GatewayConfig& config, std::istream& in, const std::string& origin = "config");
void apply_config_file(GatewayConfig& config, const std::filesystem::path& path);

/// The effective configuration in the same key=value form.
std::string describe(const GatewayConfig& config);

}  // namespace isovisor
