#include "isovisor/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace isovisor::trace {

namespace {

std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        const auto next = line.find(sep, pos);
        out.push_back(line.substr(pos, next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool to_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string format_number(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::vector<TraceEvent> parse_trace(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(1, "empty trace, expected header");
    ++lineno;
    if (trim(line) != kHeader) throw ParseError(1, "bad header, expected '" + std::string(kHeader) + "'");

    std::vector<TraceEvent> events;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split(line);
        if (cols.size() != 5) throw ParseError(lineno, "expected 5 columns, got " + std::to_string(cols.size()));
        TraceEvent e;
        if (!to_double(cols[0], e.t_ms) || e.t_ms < 0) throw ParseError(lineno, "t_ms must be a number >= 0");
        e.tenant_id = std::string(trim(cols[1]));
        e.function_id = std::string(trim(cols[2]));
        if (e.tenant_id.empty()) throw ParseError(lineno, "empty tenant_id");
        if (e.function_id.empty()) throw ParseError(lineno, "empty function_id");
        if (!to_double(cols[3], e.duration_ms) || e.duration_ms <= 0)
            throw ParseError(lineno, "duration_ms must be a number > 0");
        if (!to_double(cols[4], e.memory_mb) || e.memory_mb <= 0)
            throw ParseError(lineno, "memory_mb must be a number > 0");
        events.push_back(std::move(e));
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.t_ms < b.t_ms; });
    return events;
}

std::vector<TraceEvent> parse_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(0, "cannot open " + path.string());
    return parse_trace(in);
}

void write_trace(std::ostream& out, std::span<const TraceEvent> events) {
    out << kHeader << '\n';
    for (const auto& e : events)
        out << format_number(e.t_ms) << ',' << e.tenant_id << ',' << e.function_id << ','
            << format_number(e.duration_ms) << ',' << format_number(e.memory_mb) << '\n';
}

void write_trace(const std::filesystem::path& path, std::span<const TraceEvent> events) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_trace(out, events);
    if (!out) throw std::runtime_error("short write on " + path.string());
}

std::vector<TraceEvent> synthesize_trace(const SynthParams& p) {
    if (p.tenants <= 0 || p.funcs_per_tenant <= 0 || p.rate <= 0 || p.duration_s <= 0)
        throw std::invalid_argument("synthesize_trace parameters must be positive");

    std::mt19937_64 rng(p.seed);
    std::uniform_int_distribution<int> memory(120, 170);
    std::uniform_int_distribution<int> duration(100, 3000);
    std::uniform_real_distribution<double> offset(0.0, p.burst_spread_ms);
    std::exponential_distribution<double> gap_s(p.rate);

    const double horizon_ms = p.duration_s * 1000.0;
    std::vector<TraceEvent> events;
    for (int t = 0; t < p.tenants; ++t) {
        const std::string tenant = "t" + std::to_string(t);
        std::vector<std::pair<std::string, int>> functions;
        for (int f = 0; f < p.funcs_per_tenant; ++f)
            functions.emplace_back(tenant + "-f" + std::to_string(f), memory(rng));

        double burst_ms = gap_s(rng) * 1000.0;
        while (burst_ms < horizon_ms) {
            for (const auto& [fid, mem] : functions) {
                // Whole milliseconds keep the CSV form exact.
                const double at = std::floor(burst_ms + offset(rng));
                const int dur = duration(rng);
                if (at < horizon_ms) events.push_back({at, tenant, fid, static_cast<double>(dur), static_cast<double>(mem)});
            }
            burst_ms += gap_s(rng) * 1000.0;
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.t_ms < b.t_ms; });
    return events;
}

// ---------------------------------------------------------------------------
// Azure Functions 2019 dataset

namespace {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    for (auto c : split(line)) t.header.emplace_back(trim(c));
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> row;
        for (auto c : split(line)) row.emplace_back(trim(c));
        t.rows.push_back(std::move(row));
    }
    return t;
}

int require(const CsvTable& t, std::string_view name, const std::filesystem::path& path) {
    const int c = t.column(name);
    if (c < 0) throw std::runtime_error(path.string() + ": missing column " + std::string(name));
    return c;
}

}  // namespace

std::vector<TraceEvent> convert_azure(const AzureInputs& in) {
    if (in.start_minute < 1 || in.minutes < 1 || in.start_minute + in.minutes - 1 > 1440)
        throw std::invalid_argument("minute window must lie within 1..1440");

    const auto inv = read_csv(in.invocations);
    const auto dur = read_csv(in.durations);
    const auto mem = read_csv(in.memory);

    const int inv_owner = require(inv, "HashOwner", in.invocations);
    const int inv_app = require(inv, "HashApp", in.invocations);
    const int inv_fn = require(inv, "HashFunction", in.invocations);
    const int first_minute = require(inv, std::to_string(in.start_minute), in.invocations);
    (void)require(inv, std::to_string(in.start_minute + in.minutes - 1), in.invocations);

    const int dur_app = require(dur, "HashApp", in.durations);
    const int dur_fn = require(dur, "HashFunction", in.durations);
    const int dur_avg = require(dur, "Average", in.durations);

    const int mem_app = require(mem, "HashApp", in.memory);
    const int mem_avg = require(mem, "AverageAllocatedMb", in.memory);

    std::unordered_map<std::string, double> avg_duration;  // app/function -> ms
    for (const auto& r : dur.rows) {
        double v = 0;
        if (static_cast<int>(r.size()) > dur_avg && to_double(r[static_cast<std::size_t>(dur_avg)], v) && v > 0)
            avg_duration[r[static_cast<std::size_t>(dur_app)] + "/" + r[static_cast<std::size_t>(dur_fn)]] = v;
    }
    std::unordered_map<std::string, double> app_memory;
    for (const auto& r : mem.rows) {
        double v = 0;
        if (static_cast<int>(r.size()) > mem_avg && to_double(r[static_cast<std::size_t>(mem_avg)], v) && v > 0)
            app_memory[r[static_cast<std::size_t>(mem_app)]] = v;
    }

    struct Fn {
        std::string owner, app, fid;
        std::vector<long> counts;
        double duration_ms = 0;
    };
    std::vector<Fn> fns;
    std::map<std::string, int> fns_per_app;
    for (const auto& r : inv.rows) {
        if (static_cast<int>(r.size()) < first_minute + in.minutes) continue;
        Fn f{r[static_cast<std::size_t>(inv_owner)], r[static_cast<std::size_t>(inv_app)],
             r[static_cast<std::size_t>(inv_fn)], {}, 0};
        long total = 0;
        for (int m = 0; m < in.minutes; ++m) {
            double c = 0;
            to_double(r[static_cast<std::size_t>(first_minute + m)], c);
            f.counts.push_back(static_cast<long>(c));
            total += static_cast<long>(c);
        }
        if (total == 0) continue;
        auto d = avg_duration.find(f.app + "/" + f.fid);
        if (d == avg_duration.end() || app_memory.count(f.app) == 0) continue;
        f.duration_ms = d->second;
        ++fns_per_app[f.app];
        fns.push_back(std::move(f));
    }

    std::vector<TraceEvent> events;
    for (const auto& f : fns) {
        const double memory = std::max(1.0, std::round(app_memory[f.app] / fns_per_app[f.app]));
        for (int m = 0; m < in.minutes; ++m) {
            const long n = f.counts[static_cast<std::size_t>(m)];
            for (long i = 0; i < n; ++i) {
                const double at = std::floor(m * 60000.0 + (static_cast<double>(i) + 0.5) * 60000.0 / static_cast<double>(n));
                events.push_back({at, f.owner, f.fid, f.duration_ms, memory});
            }
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.t_ms < b.t_ms; });
    return events;
}

}  // namespace isovisor::trace
