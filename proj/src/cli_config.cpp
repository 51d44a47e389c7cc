#include "isovisor/cli_config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace isovisor {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
std::optional<T> parse_int(std::string_view s) {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<bool> parse_bool(std::string_view s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    return std::nullopt;
}

}  // namespace

std::optional<std::int64_t> parse_size(std::string_view text) {
    text = trim(text);
    std::size_t digits = 0;
    while (digits < text.size() && text[digits] >= '0' && text[digits] <= '9') ++digits;
    if (digits == 0) return std::nullopt;
    auto n = parse_int<std::int64_t>(text.substr(0, digits));
    if (!n) return std::nullopt;
    const auto suffix = trim(text.substr(digits));
    std::int64_t unit = 1;
    if (suffix.empty() || suffix == "B") unit = 1;
    else if (suffix == "KiB") unit = kKiB;
    else if (suffix == "MiB") unit = kMiB;
    else if (suffix == "GiB") unit = kGiB;
    else return std::nullopt;
    if (*n > std::numeric_limits<std::int64_t>::max() / unit) return std::nullopt;
    return *n * unit;
}

void apply_config(GatewayConfig& c, std::istream& in, const std::string& origin) {
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + why);
        };
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) fail("expected key=value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        auto integer = [&]() {
            auto v = parse_int<long long>(value);
            if (!v) fail("'" + std::string(key) + "' needs an integer");
            return *v;
        };
        auto size = [&]() {
            auto v = parse_size(value);
            if (!v) fail("'" + std::string(key) + "' needs a size");
            return *v;
        };
        if (key == "host") c.host = std::string(value);
        else if (key == "port") c.port = static_cast<int>(integer());
        else if (key == "workers") c.worker_count = static_cast<int>(integer());
        else if (key == "queue_capacity") {
            const auto v = integer();
            if (v < 0) fail("queue_capacity must be >= 0");
            c.queue_capacity = static_cast<std::size_t>(v);
        } else if (key == "memory_cap") c.runtime_memory_cap = size();
        else if (key == "ttl") c.ttl_seconds = static_cast<int>(integer());
        else if (key == "max_contexts") c.max_contexts = static_cast<int>(integer());
        else if (key == "share_code_cache") {
            auto b = parse_bool(value);
            if (!b) fail("share_code_cache needs true or false");
            c.share_code_cache = *b;
        } else if (key == "prewarm") c.prewarm_n = static_cast<int>(integer());
        else if (key == "reaper_period_ms") c.reaper_period = std::chrono::milliseconds(integer());
        else if (key == "max_invoke_body") c.max_invoke_body = static_cast<std::size_t>(size());
        else if (key == "shutdown_deadline_ms") c.shutdown_deadline = std::chrono::milliseconds(integer());
        else fail("unknown key '" + std::string(key) + "'");
    }
}

void apply_config_file(GatewayConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path.string());
    apply_config(config, in, path.string());
}

std::string describe(const GatewayConfig& c) {
    std::ostringstream out;
    out << "host=" << c.host << '\n'
        << "port=" << c.port << '\n'
        << "workers=" << c.worker_count << '\n'
        << "queue_capacity=" << c.queue_capacity << '\n'
        << "memory_cap=" << c.runtime_memory_cap << '\n'
        << "ttl=" << c.ttl_seconds << '\n'
        << "max_contexts=" << c.max_contexts << '\n'
        << "share_code_cache=" << (c.share_code_cache ? "true" : "false") << '\n'
        << "prewarm=" << c.prewarm_n << '\n'
        << "reaper_period_ms=" << c.reaper_period.count() << '\n'
        << "max_invoke_body=" << c.max_invoke_body << '\n'
        << "shutdown_deadline_ms=" << c.shutdown_deadline.count() << '\n';
    return out.str();
}

}  // namespace isovisor
