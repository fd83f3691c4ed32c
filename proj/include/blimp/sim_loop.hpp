#pragma once

#include <atomic>
#include <optional>

#include "blimp/gateway.hpp"
#include "blimp/server.hpp"

namespace blimp {

struct LoopOptions {
    bool real_time = true;               // false: step as fast as possible
    std::optional<double> duration_s;    // stop after this much sim time
};

struct LoopStats {
    Tick ticks = 0;
    double wall_seconds = 0.0;
};

/// Fixed-step driver. Each iteration drains transport events, steps the
/// world once and hands the produced messages back to the transports.
/// Returns when the duration elapses or `stop` becomes true.
LoopStats run_loop(Gateway& gateway, Server* server, const LoopOptions& options, const std::atomic<bool>& stop);

}  // namespace blimp
