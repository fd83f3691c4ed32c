#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "blimp/dynamics.hpp"
#include "blimp/rng.hpp"

namespace blimp {

/// Simulation time in whole physics steps since start.
using Tick = std::int64_t;

enum class Opcode : std::uint8_t {
    up = 0x01,
    down = 0x02,
    forward = 0x03,
    backward = 0x04,
    turn_left = 0x05,
    turn_right = 0x06,
    off = 0x07,
};

enum class Channel : std::uint8_t { vertical = 0, yaw = 1, lateral = 2 };

inline constexpr std::uint32_t kMaxCommandMs = 60000;

std::optional<Opcode> opcode_from_byte(std::uint8_t b);
std::optional<Opcode> opcode_from_name(std::string_view name);
std::string_view opcode_name(Opcode op);
bool is_timed(Opcode op);
/// Channel an opcode drives. OFF has no channel of its own.
std::optional<Channel> channel_of(Opcode op);

struct TimedCommand {
    Opcode opcode = Opcode::off;
    std::uint32_t duration_ms = 0;  // ignored for OFF
    std::uint16_t seq = 0;
};

struct ActiveCommand {
    Opcode opcode;
    Tick activated_at;
    Tick expires_at;  // first tick at which the channel is idle again
    std::uint16_t seq;
};

struct ChannelState {
    Channel channel;
    std::optional<ActiveCommand> active;
};

struct HoldGains {
    double kp = 0.6;   // N/m
    double ki = 0.05;  // N/(m·s)
    double kd = 0.8;   // N·s/m
    double integral_limit = 0.05;  // N

    friend constexpr bool operator==(const HoldGains&, const HoldGains&) = default;
};

struct AltitudeHold {
    double target_z = 0.0;
    HoldGains gains;
    // Accumulated integral contribution ki·∫e dt, already in newtons.
    double integral = 0.0;
    bool engaged = true;
};

enum class CommandVerdict : std::uint8_t {
    accepted,
    bad_duration,
    unknown_opcode,
};

/// Per-drone executive: one slot per actuation channel, latest command wins,
/// altitude hold whenever the vertical slot is empty.
class DroneRuntime {
public:
    DroneRuntime(const PhysicsParams& params, double hold_z, HoldGains gains = {});

    CommandVerdict enqueue(const TimedCommand& cmd, Tick now, const DroneState& state);

    /// Expires finished commands and produces channel outputs for this step.
    /// Call exactly once per physics step, before integrating.
    ChannelThrust tick(const DroneState& state, Tick now);

    /// Re-targets the hold controller without touching the integrator.
    void hold_at(double z);

    const ChannelState& channel(Channel c) const { return channels_[static_cast<std::size_t>(c)]; }
    const std::array<ChannelState, 3>& channels() const { return channels_; }
    const AltitudeHold& hold() const { return hold_; }
    AltitudeHold& hold() { return hold_; }
    const PhysicsParams& params() const { return params_; }

private:
    double hold_output(const DroneState& state);

    PhysicsParams params_;
    std::array<ChannelState, 3> channels_;
    AltitudeHold hold_;
};

/// Downward range sensor: floor-quantized altitude, optional gaussian noise.
/// No random draw happens when noise_sd is zero.
double read_height(const DroneState& state, double quantum, double noise_sd, RngStream& rng);

/// Number of physics steps a command of `duration_ms` occupies (at least 1).
Tick duration_ticks(std::uint32_t duration_ms, double dt);

}  // namespace blimp
