#include "blimp/sim_loop.hpp"

#include <chrono>
#include <cmath>
#include <thread>

namespace blimp {

LoopStats run_loop(Gateway& gateway, Server* server, const LoopOptions& options, const std::atomic<bool>& stop) {
    using clock = std::chrono::steady_clock;
    World& world = gateway.world();
    const double dt = world.config().physics.dt;
    const Tick start_tick = world.tick();
    std::optional<Tick> end_tick;
    if (options.duration_s) end_tick = start_tick + static_cast<Tick>(std::llround(*options.duration_s / dt));

    const auto wall_start = clock::now();
    while (!stop.load(std::memory_order_relaxed)) {
        if (end_tick && world.tick() >= *end_tick) break;
        if (server) apply_inbound(gateway, server->drain());
        gateway.step();
        auto out = gateway.take_outgoing();
        if (server) server->dispatch(std::move(out));

        if (options.real_time) {
            const auto due = wall_start + std::chrono::duration_cast<clock::duration>(
                                              std::chrono::duration<double>(static_cast<double>(world.tick() - start_tick) * dt));
            std::this_thread::sleep_until(due);
        }
    }

    LoopStats stats;
    stats.ticks = world.tick() - start_tick;
    stats.wall_seconds = std::chrono::duration<double>(clock::now() - wall_start).count();
    return stats;
}

}  // namespace blimp
