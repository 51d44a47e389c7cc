// isovisor command-line driver: serve, replay, bench, synth-trace, convert-trace.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "isovisor/bench.hpp"
#include "isovisor/cli_config.hpp"
#include "isovisor/gateway.hpp"
#include "isovisor/replay.hpp"
#include "isovisor/trace.hpp"
#include "json.hpp"

using namespace isovisor;

namespace {

constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// CLI11 validator for byte sizes with optional KiB/MiB/GiB suffix.
struct SizeValidator : CLI::Validator {
    SizeValidator() {
        name_ = "SIZE";
        func_ = [](std::string& s) -> std::string {
            return parse_size(s) ? std::string{} : "invalid size '" + s + "' (expected bytes or N{KiB,MiB,GiB})";
        };
    }
};

std::int64_t size_of(const std::string& s) { return *parse_size(s); }

struct ServeFlags {
    std::string config;
    std::string host;
    int port = 0;
    int workers = 0;
    std::size_t queue = 0;
    std::string memory_cap;
    int ttl = 0;
    int max_contexts = 0;
    bool no_share = false;
    int prewarm = 0;
    int reaper_ms = 0;
    std::string max_body;
    int shutdown_ms = 0;
};

int run_serve(CLI::App& cmd, const ServeFlags& f) {
    GatewayConfig cfg;
    std::string path = f.config;
    if (path.empty())
        if (const char* env = std::getenv("ISOVISOR_CONFIG")) path = env;
    if (!path.empty()) {
        try {
            apply_config_file(cfg, path);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }

    auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
    if (given("--host")) cfg.host = f.host;
    if (given("--port")) cfg.port = f.port;
    if (given("--workers")) cfg.worker_count = f.workers;
    if (given("--queue-capacity")) cfg.queue_capacity = f.queue;
    if (given("--memory-cap")) cfg.runtime_memory_cap = size_of(f.memory_cap);
    if (given("--ttl")) cfg.ttl_seconds = f.ttl;
    if (given("--max-contexts")) cfg.max_contexts = f.max_contexts;
    if (given("--no-share-code-cache")) cfg.share_code_cache = !f.no_share;
    if (given("--prewarm")) cfg.prewarm_n = f.prewarm;
    if (given("--reaper-period-ms")) cfg.reaper_period = std::chrono::milliseconds(f.reaper_ms);
    if (given("--max-invoke-body")) cfg.max_invoke_body = static_cast<std::size_t>(size_of(f.max_body));
    if (given("--shutdown-deadline-ms")) cfg.shutdown_deadline = std::chrono::milliseconds(f.shutdown_ms);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Gateway gateway(cfg);
    const int port = gateway.start();
    std::clog << "isovisor serving on " << cfg.host << ':' << port << '\n' << describe(cfg) << std::flush;

    int sig = 0;
    sigwait(&set, &sig);
    std::clog << "signal " << sig << ", shutting down\n";
    gateway.stop();
    return 0;
}

struct ReplayFlags {
    std::string trace;
    std::string policy = "all";
    std::string mode = "sim";
    std::string out = "replay-out";
    std::string global_cap = "16GiB";
    std::string worker_cap = "2GiB";
    double keep_alive_ms = 60'000;
    double isolate_ttl_ms = 10'000;
    int max_contexts = 4;
    replay::CostModel cost;
    bool no_materialize = false;
};

int run_replay(const ReplayFlags& f) {
    replay::ReplayOptions base;
    base.cost = f.cost;
    base.global_cap_bytes = size_of(f.global_cap);
    base.worker_cap_bytes = size_of(f.worker_cap);
    base.keep_alive_ms = f.keep_alive_ms;
    base.isolate_ttl_ms = f.isolate_ttl_ms;
    base.max_contexts = f.max_contexts;

    std::vector<replay::Policy> policies;
    if (f.policy == "all") {
        policies = {replay::Policy::per_invocation, replay::Policy::per_function, replay::Policy::per_tenant};
    } else if (auto p = replay::parse_policy(f.policy)) {
        policies = {*p};
    } else {
        throw UsageError("unknown policy '" + f.policy + "'");
    }

    std::vector<trace::TraceEvent> events;
    try {
        events = trace::parse_trace(std::filesystem::path(f.trace));
    } catch (const trace::ParseError& e) {
        std::cerr << f.trace << ": " << e.what() << '\n';
        return 1;
    }

    nlohmann::ordered_json comparison = nlohmann::ordered_json::array();
    for (auto p : policies) {
        auto opts = base;
        opts.policy = p;
        const auto report = f.mode == "live"
                                ? replay::replay_live(events, opts, replay::LiveOptions{!f.no_materialize})
                                : replay::replay_sim(events, opts);
        const auto summary = replay::compute_metrics(report);
        const auto dir = policies.size() == 1 ? std::filesystem::path(f.out)
                                              : std::filesystem::path(f.out) / std::string(replay::to_string(p));
        replay::write_report(dir, report, summary);
        comparison.push_back(nlohmann::ordered_json::parse(replay::summary_json(summary)));
        std::cout << replay::summary_json(summary) << '\n';
    }
    if (policies.size() > 1) {
        const auto path = std::filesystem::path(f.out) / "comparison.json";
        std::ofstream out(path);
        out << comparison.dump(2) << '\n';
        if (!out) throw std::runtime_error("short write on " + path.string());
    }
    return 0;
}

int write_events(const std::string& out, const std::vector<trace::TraceEvent>& events) {
    if (out == "-") {
        trace::write_trace(std::cout, events);
        return std::cout ? 0 : 1;
    }
    trace::write_trace(std::filesystem::path(out), events);
    std::clog << events.size() << " events written to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"isovisor: pooled-isolate function runtime and policy trace replayer"};
    app.require_subcommand(1);
    const SizeValidator size;

    ServeFlags sf;
    auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
    serve->add_option("--config", sf.config, "key=value config file (default: $ISOVISOR_CONFIG)");
    serve->add_option("--host", sf.host, "Listen address");
    serve->add_option("--port", sf.port, "Listen port (0 picks a free port)")->check(CLI::Range(0, 65535));
    serve->add_option("--workers", sf.workers, "Worker threads")->check(CLI::PositiveNumber);
    serve->add_option("--queue-capacity", sf.queue, "Bounded request queue length")->check(CLI::PositiveNumber);
    serve->add_option("--memory-cap", sf.memory_cap, "Runtime memory cap")->check(size);
    serve->add_option("--ttl", sf.ttl, "Idle isolate TTL, seconds")->check(CLI::PositiveNumber);
    serve->add_option("--max-contexts", sf.max_contexts, "Contexts per isolate")->check(CLI::PositiveNumber);
    serve->add_flag("--no-share-code-cache", sf.no_share, "One context per isolate");
    serve->add_option("--prewarm", sf.prewarm, "Warm isolates per function at registration")
        ->check(CLI::NonNegativeNumber);
    serve->add_option("--reaper-period-ms", sf.reaper_ms, "Reaper period (0 disables)")->check(CLI::NonNegativeNumber);
    serve->add_option("--max-invoke-body", sf.max_body, "Largest accepted /invoke body")->check(size);
    serve->add_option("--shutdown-deadline-ms", sf.shutdown_ms, "Queue drain deadline on shutdown")
        ->check(CLI::NonNegativeNumber);

    ReplayFlags rf;
    auto* rep = app.add_subcommand("replay", "Replay a trace under one or all policies");
    rep->add_option("--trace", rf.trace, "Trace CSV")->required();
    rep->add_option("--policy", rf.policy, "per-invocation | per-function | per-tenant | all")
        ->check(CLI::IsMember({"per-invocation", "per-function", "per-tenant", "all"}))
        ->capture_default_str();
    rep->add_option("--mode", rf.mode, "sim | live")->check(CLI::IsMember({"sim", "live"}))->capture_default_str();
    rep->add_option("--out", rf.out, "Output directory")->capture_default_str();
    rep->add_option("--global-cap", rf.global_cap, "Memory cap of the whole node")->check(size)->capture_default_str();
    rep->add_option("--worker-cap", rf.worker_cap, "Memory cap of a consolidating worker")
        ->check(size)
        ->capture_default_str();
    rep->add_option("--keep-alive-ms", rf.keep_alive_ms, "Idle worker keep-alive")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_option("--isolate-ttl-ms", rf.isolate_ttl_ms, "Idle isolate TTL")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_option("--max-contexts", rf.max_contexts, "Contexts per isolate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    rep->add_option("--runtime-cold-ms", rf.cost.runtime_cold_start_ms, "Worker boot cost")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_option("--isolate-cold-us", rf.cost.isolate_cold_start_us, "Isolate creation cost")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_option("--worker-overhead-mb", rf.cost.per_worker_overhead_mb, "Fixed memory of a worker")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_option("--isolate-overhead-mb", rf.cost.per_isolate_overhead_mb, "Fixed memory of an isolate")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    rep->add_flag("--no-materialize", rf.no_materialize, "Live mode: account emulated memory without touching it");

    BenchOptions bo;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "Cold/warm start micro-benchmark");
    bench->add_option("--iterations", bo.iterations, "Samples per row")->check(CLI::PositiveNumber)->capture_default_str();
    bench->add_option("--concurrent-isolates", bo.concurrent_isolates, "Live isolates during creation timing")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    bench->add_option("--seed", bo.seed, "Argument nonce seed")->capture_default_str();
    bench->add_option("--out", bench_out, "Also write the CSV table here");

    trace::SynthParams sp;
    std::string synth_out = "-";
    auto* synth = app.add_subcommand("synth-trace", "Generate the seeded bursty multi-tenant trace");
    synth->add_option("--tenants", sp.tenants)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--funcs-per-tenant", sp.funcs_per_tenant)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--rate", sp.rate, "Bursts per second per tenant")->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--duration-s", sp.duration_s)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--burst-spread-ms", sp.burst_spread_ms)->check(CLI::NonNegativeNumber)->capture_default_str();
    synth->add_option("--seed", sp.seed)->capture_default_str();
    synth->add_option("--out", synth_out, "Output CSV ('-' for stdout)")->capture_default_str();

    trace::AzureInputs az;
    std::string conv_out = "-";
    auto* conv = app.add_subcommand("convert-trace", "Convert one day of the Azure Functions 2019 dataset");
    conv->add_option("--invocations", az.invocations, "invocations_per_function_md.anon.dNN.csv")
        ->required()
        ->check(CLI::ExistingFile);
    conv->add_option("--durations", az.durations, "function_durations_percentiles.anon.dNN.csv")
        ->required()
        ->check(CLI::ExistingFile);
    conv->add_option("--memory", az.memory, "app_memory_percentiles.anon.dNN.csv")->required()->check(CLI::ExistingFile);
    conv->add_option("--start-minute", az.start_minute)->check(CLI::Range(1, 1440))->capture_default_str();
    conv->add_option("--minutes", az.minutes)->check(CLI::Range(1, 1440))->capture_default_str();
    conv->add_option("--out", conv_out, "Output CSV ('-' for stdout)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kUsageError;
    }

    try {
        if (*serve) return run_serve(*serve, sf);
        if (*rep) return run_replay(rf);
        if (*bench) {
            const auto rows = run_bench(bo);
            const auto csv = bench_csv(rows);
            std::cout << csv;
            if (!bench_out.empty()) {
                std::ofstream out(bench_out);
                out << csv;
                if (!out) throw std::runtime_error("short write on " + bench_out);
            }
            return 0;
        }
        if (*synth) return write_events(synth_out, trace::synthesize_trace(sp));
        if (*conv) return write_events(conv_out, trace::convert_azure(az));
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
