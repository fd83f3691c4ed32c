#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <variant>
#include <vector>

#include "blimp/arena.hpp"
#include "blimp/dynamics.hpp"
#include "blimp/flocking.hpp"
#include "blimp/protocol.hpp"
#include "blimp/rng.hpp"
#include "blimp/runtime.hpp"

namespace blimp {

using SessionId = std::uint64_t;
inline constexpr SessionId kNoSession = 0;

/// Ground-station relay for drone-to-drone traffic. Loss applies to PEER
/// copies only; the command path never drops.
struct LinkModel {
    double latency_ms = 20.0;
    double loss_prob = 0.0;
    std::uint64_t rng_seed = 0;

    static LinkModel lossy_preset(std::uint64_t seed) { return {50.0, 0.1, seed}; }
};

struct SensorParams {
    double quantum = 0.01;
    double noise_sd = 0.0;
};

struct WorldConfig {
    std::uint64_t seed = 42;
    int drone_count = 3;
    PhysicsParams physics;
    HoldGains hold;
    LinkModel link;
    FlockParams flock;
    SensorParams sensor;
    Arena arena = default_arena();
    int telemetry_divisor = 5;  // telemetry every n-th step
};

/// Increment whenever a change alters simulated trajectories; replay logs
/// recorded under another model are refused.
inline constexpr int kModelVersion = 1;

// ---- inputs ------------------------------------------------------------------

namespace input {
struct Command {
    std::uint8_t drone = 0;
    TimedCommand cmd;
    SessionId reply_to = kNoSession;
};
struct Height {
    std::uint8_t drone = 0;
    std::uint16_t seq = 0;
    SessionId reply_to = kNoSession;
};
struct Peer {
    std::uint8_t src = 0;
    std::uint8_t dst = proto::kBroadcast;
    std::vector<std::uint8_t> app;
};
struct Flock {
    std::uint8_t drone = 0;
    bool on = false;
};
struct RaceArm {
    std::uint8_t drone = 0;
};
struct RaceAbort {
    std::uint8_t drone = 0;
};
}  // namespace input

using Input = std::variant<input::Command, input::Height, input::Peer, input::Flock, input::RaceArm, input::RaceAbort>;

// ---- outputs -----------------------------------------------------------------

namespace output {
struct CommandResult {
    SessionId session;
    std::uint8_t drone;
    std::uint16_t seq;
    CommandVerdict verdict;
};
struct HeightResult {
    SessionId session;
    std::uint8_t drone;
    std::uint16_t seq;
    double meters;
};
struct PeerDelivered {
    std::uint8_t src;
    std::uint8_t dst;
    std::vector<std::uint8_t> app;
};
struct Progress {
    std::uint8_t drone;
    int hoop;
    double t;
    std::optional<double> split;  // time since start, once the clock runs
};
struct RaceResult {
    std::uint8_t drone;
    std::optional<double> start_t;
    std::optional<double> finish_t;
    bool dnf;
};
struct Telemetry {
    std::uint8_t drone;
    proto::Telemetry snapshot;
};
}  // namespace output

using Output = std::variant<output::CommandResult, output::HeightResult, output::PeerDelivered, output::Progress,
                            output::RaceResult, output::Telemetry>;

struct RelayResult {
    bool unknown_destination = false;
    int delivered = 0;  // copies that survived the loss draw
};

enum class ApplyStatus : std::uint8_t { ok, unknown_drone, rejected };

struct Drone {
    std::uint8_t id = 0;
    DroneState state;
    DroneRuntime runtime;
    RngStream sensor_rng;
    bool flocking = false;
    std::map<std::uint8_t, PeerSnapshot> peers;  // latest snapshot per sender
    std::optional<CourseProgress> course;
    double last_height = 0.0;
};

/// Deterministic fixed-step world. Inputs applied at tick k take effect in
/// the step from k to k+1; scheduled deliveries run at the start of their
/// tick in the order they were scheduled.
class World {
public:
    explicit World(WorldConfig config);

    const WorldConfig& config() const { return config_; }
    Tick tick() const { return tick_; }
    double time() const { return static_cast<double>(tick_) * config_.physics.dt; }
    Tick latency_ticks() const { return latency_ticks_; }

    std::size_t drone_count() const { return drones_.size(); }
    bool has_drone(std::uint8_t id) const { return id < drones_.size(); }
    const Drone& drone(std::uint8_t id) const { return drones_.at(id); }
    Drone& drone_mut(std::uint8_t id) { return drones_.at(id); }

    ApplyStatus apply(const Input& in);

    /// Relays a PEER payload: each copy is independently dropped with the
    /// link's loss probability and otherwise delivered after the link latency.
    /// A broadcast goes to every drone except the sender.
    RelayResult relay_peer(std::uint8_t src, std::uint8_t dst, std::span<const std::uint8_t> app);

    /// Advances one physics step; returns what happened during it.
    std::vector<Output> step();

    std::uint64_t state_hash() const;

    /// Number of loss draws consumed so far from the relay stream.
    std::uint64_t relay_draws() const { return relay_draws_; }

private:
    struct Pending {
        Tick due;
        std::uint64_t order;
        std::variant<input::Command, input::Height, input::Peer> event;
    };
    struct PendingLater {
        bool operator()(const Pending& a, const Pending& b) const {
            return a.due != b.due ? a.due > b.due : a.order > b.order;
        }
    };

    void schedule(Tick due, std::variant<input::Command, input::Height, input::Peer> ev);
    void deliver(const Pending& p, std::vector<Output>& out);
    ChannelThrust flock_thrust(Drone& d, const ChannelThrust& base) const;
    proto::Telemetry snapshot(const Drone& d) const;

    WorldConfig config_;
    std::vector<Drone> drones_;
    Tick tick_ = 0;
    Tick latency_ticks_ = 0;
    RngStream link_rng_;
    std::uint64_t relay_draws_ = 0;
    std::uint64_t order_ = 0;
    std::priority_queue<Pending, std::vector<Pending>, PendingLater> pending_;
    std::vector<Output> deferred_;  // produced by apply(), reported by the next step()
};

/// Hex form used in logs and CLI output.
std::string hash_hex(std::uint64_t h);

}  // namespace blimp
