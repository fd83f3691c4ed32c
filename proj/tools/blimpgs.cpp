// blimpgs: ground-station entry point.
//
// Exit codes: 0 success, 1 runtime failure (port busy, replay divergence),
// 2 invalid input, 3 replay log written by an incompatible version.

#include <atomic>
#include <charconv>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <system_error>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "blimp/arena.hpp"
#include "blimp/config.hpp"
#include "blimp/gateway.hpp"
#include "blimp/protocol.hpp"
#include "blimp/replay.hpp"
#include "blimp/server.hpp"
#include "blimp/sim_loop.hpp"

namespace {

enum Exit : int { kOk = 0, kRuntime = 1, kInvalid = 2, kVersion = 3 };

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

struct SimArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> drones;
    std::optional<int> frame_port;
    std::optional<int> console_port;
    std::optional<double> duration;
    std::string log;
    bool fast = false;
    bool real_time = false;
};

int run_sim(const SimArgs& a) {
    blimp::ConfigResult loaded;
    if (a.config.empty()) {
        loaded = blimp::parse_config(nlohmann::json::object());
    } else {
        loaded = blimp::load_config(a.config);
    }
    if (!loaded.ok()) {
        for (const auto& e : loaded.errors) fmt::print(stderr, "error: {}\n", e);
        return kInvalid;
    }
    blimp::SimConfig cfg = *loaded.config;

    // Command-line overrides win over the file; re-validate the result.
    if (a.seed || a.drones || a.frame_port || a.console_port) {
        nlohmann::json doc = a.config.empty() ? nlohmann::json::object() : nlohmann::json::parse(std::ifstream(a.config));
        if (a.seed) doc["seed"] = *a.seed;
        if (a.drones) doc["drones"] = *a.drones;
        if (a.frame_port) doc["ports"]["frames"] = *a.frame_port;
        if (a.console_port) doc["ports"]["console"] = *a.console_port;
        const auto base = a.config.empty() ? std::string(".") : std::filesystem::path(a.config).parent_path().string();
        loaded = blimp::parse_config(doc, base.empty() ? "." : base);
        if (!loaded.ok()) {
            for (const auto& e : loaded.errors) fmt::print(stderr, "error: {}\n", e);
            return kInvalid;
        }
        cfg = *loaded.config;
    }
    if (a.duration && !(*a.duration > 0.0)) {
        fmt::print(stderr, "error: --duration must be positive\n");
        return kInvalid;
    }

    std::unique_ptr<blimp::Server> server;
    try {
        server = std::make_unique<blimp::Server>(blimp::Server::Ports{static_cast<std::uint16_t>(cfg.frame_port),
                                                                      static_cast<std::uint16_t>(cfg.console_port)});
    } catch (const std::system_error& e) {
        fmt::print(stderr, "error: cannot listen: {}\n", e.what());
        return kRuntime;
    }

    const std::filesystem::path runs_dir(cfg.runs_dir);
    std::filesystem::path log_path = a.log;
    if (log_path.empty()) {
        const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
        log_path = runs_dir / fmt::format("replay-{}.jsonl", stamp);
    }
    std::error_code ec;
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path(), ec);
    std::ofstream log(log_path);
    if (!log) {
        fmt::print(stderr, "error: cannot write {}\n", log_path.string());
        return kRuntime;
    }

    blimp::World world(cfg.world);
    blimp::replay::Recorder recorder(log, cfg.world);
    blimp::Gateway gateway(world, {runs_dir, &recorder});

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    fmt::print(stderr, "listening: frames on {}, console on {}\n", server->frame_port(), server->console_port());
    server->start();
    blimp::LoopOptions opts;
    opts.real_time = !a.fast;
    opts.duration_s = a.duration;
    const auto stats = blimp::run_loop(gateway, server.get(), opts, g_stop);
    server->stop();
    recorder.end(world);

    fmt::print(stderr, "stopped after {} steps ({:.2f} s sim, {:.2f} s wall)\n", stats.ticks,
               static_cast<double>(stats.ticks) * cfg.world.physics.dt, stats.wall_seconds);
    fmt::print("log {}\nhash {}\n", log_path.string(), blimp::hash_hex(world.state_hash()));
    return kOk;
}

int run_replay(const std::string& path, const std::string& expect) {
    std::optional<std::uint64_t> expected;
    if (!expect.empty()) {
        std::uint64_t v = 0;
        const auto* end = expect.data() + expect.size();
        const auto r = std::from_chars(expect.data(), end, v, 16);
        if (r.ec != std::errc{} || r.ptr != end) {
            fmt::print(stderr, "error: --expect-hash must be hexadecimal\n");
            return kInvalid;
        }
        expected = v;
    }
    const auto out = blimp::replay::run_file(path);
    using blimp::replay::Status;
    switch (out.status) {
    case Status::ok: break;
    case Status::header_mismatch:
        fmt::print(stderr, "error: {}: {}\n", describe(out.status), out.message);
        return kVersion;
    case Status::io_error:
    case Status::malformed:
    case Status::non_monotonic:
        fmt::print(stderr, "error: {}: {}\n", describe(out.status), out.message);
        return kInvalid;
    case Status::diverged:
    case Status::truncated:
        fmt::print(stderr, "error: {}: {}\n", describe(out.status), out.message);
        if (out.status == Status::diverged || !expected) return kRuntime;
        break;
    }
    fmt::print("hash {}\nticks {}\ninputs {}\ncheckpoints {}\n", blimp::hash_hex(out.final_hash), out.final_tick,
               out.inputs, out.checkpoints);
    if (expected && *expected != out.final_hash) {
        fmt::print(stderr, "error: final hash {} does not match expected {}\n", blimp::hash_hex(out.final_hash),
                   blimp::hash_hex(*expected));
        return kRuntime;
    }
    return kOk;
}

int run_validate_arena(const std::string& path) {
    const auto v = blimp::load_arena_file(path);
    if (!v.ok()) {
        for (const auto& e : v.errors) fmt::print("error: {}\n", e);
        return kInvalid;
    }
    const auto& arena = *v.arena;
    fmt::print("OK\n{}: {} hoops, {} obstacles, {} spawns, hash {}\n", arena.name, arena.hoops.size(),
               arena.obstacles.size(), arena.spawns.size(), blimp::hash_hex(blimp::arena_hash(arena)));
    return kOk;
}

int run_frame_dump(const std::string& hex) {
    const auto bytes = blimp::proto::parse_hex(hex);
    if (!bytes) {
        fmt::print(stderr, "error: not a hex string\n");
        return kInvalid;
    }
    const auto r = blimp::proto::decode_frame(*bytes);
    if (!r) {
        fmt::print(stderr, "error: {}\n", blimp::proto::describe(r.error));
        return kInvalid;
    }
    std::cout << blimp::proto::describe(*r.frame);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ground station for simulated classroom blimps"};
    app.require_subcommand(1);

    SimArgs sim;
    auto* sim_cmd = app.add_subcommand("sim", "Run the simulator with the frame and console servers");
    sim_cmd->add_option("--config", sim.config, "Config JSON file")->check(CLI::ExistingFile);
    sim_cmd->add_option("--seed", sim.seed, "World seed");
    sim_cmd->add_option("--drones", sim.drones, "Number of drones");
    sim_cmd->add_option("--frame-port", sim.frame_port, "TCP port for binary frames (0 picks one)");
    sim_cmd->add_option("--console-port", sim.console_port, "WebSocket port for the console (0 picks one)");
    sim_cmd->add_option("--duration", sim.duration, "Stop after this many simulated seconds");
    sim_cmd->add_option("--log", sim.log, "Replay log path (default: runs dir)");
    auto* fast = sim_cmd->add_flag("--fast", sim.fast, "Step as fast as possible");
    auto* rt = sim_cmd->add_flag("--real-time", sim.real_time, "Pace steps to wall-clock time (default)");
    fast->excludes(rt);

    std::string log_path;
    std::string expect;
    auto* replay_cmd = app.add_subcommand("replay", "Re-run a replay log and print its final state hash");
    replay_cmd->add_option("log", log_path, "Replay log")->required();
    replay_cmd->add_option("--expect-hash", expect, "Fail unless the final hash equals this value");

    std::string arena_path;
    auto* arena_cmd = app.add_subcommand("validate-arena", "Check an arena file");
    arena_cmd->add_option("file", arena_path, "Arena JSON")->required();

    std::string hex;
    auto* dump_cmd = app.add_subcommand("frame-dump", "Decode a frame given as hex");
    dump_cmd->add_option("hex", hex, "Frame bytes, spaces allowed")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInvalid;
    }

    try {
        if (*sim_cmd) return run_sim(sim);
        if (*replay_cmd) return run_replay(log_path, expect);
        if (*arena_cmd) return run_validate_arena(arena_path);
        if (*dump_cmd) return run_frame_dump(hex);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kRuntime;
    }
    return kInvalid;
}
