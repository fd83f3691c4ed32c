#include "blimp/runtime.hpp"

#include <algorithm>
#include <cmath>

namespace blimp {

std::optional<Opcode> opcode_from_byte(std::uint8_t b) {
    if (b >= 0x01 && b <= 0x07) return static_cast<Opcode>(b);
    return std::nullopt;
}

namespace {

constexpr std::array<std::string_view, 7> kNames = {
    "up", "down", "forward", "backward", "turn_left", "turn_right", "off",
};

}  // namespace

std::optional<Opcode> opcode_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return static_cast<Opcode>(i + 1);
    }
    return std::nullopt;
}

std::string_view opcode_name(Opcode op) {
    const auto i = static_cast<std::size_t>(op);
    if (i < 1 || i > kNames.size()) return "unknown";
    return kNames[i - 1];
}

bool is_timed(Opcode op) { return op != Opcode::off; }

std::optional<Channel> channel_of(Opcode op) {
    switch (op) {
    case Opcode::up:
    case Opcode::down:
        return Channel::vertical;
    case Opcode::forward:
    case Opcode::backward:
        return Channel::lateral;
    case Opcode::turn_left:
    case Opcode::turn_right:
        return Channel::yaw;
    case Opcode::off:
        break;
    }
    return std::nullopt;
}

Tick duration_ticks(std::uint32_t duration_ms, double dt) {
    const auto n = static_cast<Tick>(std::llround(static_cast<double>(duration_ms) / 1000.0 / dt));
    return std::max<Tick>(n, 1);
}

DroneRuntime::DroneRuntime(const PhysicsParams& params, double hold_z, HoldGains gains)
    : params_(params),
      channels_{ChannelState{Channel::vertical, {}}, ChannelState{Channel::yaw, {}},
                ChannelState{Channel::lateral, {}}} {
    hold_.target_z = hold_z;
    hold_.gains = gains;
    hold_.engaged = true;
}

CommandVerdict DroneRuntime::enqueue(const TimedCommand& cmd, Tick now, const DroneState& state) {
    if (!opcode_from_byte(static_cast<std::uint8_t>(cmd.opcode))) return CommandVerdict::unknown_opcode;

    if (cmd.opcode == Opcode::off) {
        for (auto& ch : channels_) ch.active.reset();
        hold_at(state.position.z);
        return CommandVerdict::accepted;
    }

    if (cmd.duration_ms == 0 || cmd.duration_ms > kMaxCommandMs) return CommandVerdict::bad_duration;

    const Channel ch = *channel_of(cmd.opcode);
    channels_[static_cast<std::size_t>(ch)].active =
        ActiveCommand{cmd.opcode, now, now + duration_ticks(cmd.duration_ms, params_.dt), cmd.seq};
    if (ch == Channel::vertical) hold_.engaged = false;
    return CommandVerdict::accepted;
}

void DroneRuntime::hold_at(double z) {
    hold_.target_z = z;
    hold_.engaged = true;
}

double DroneRuntime::hold_output(const DroneState& s) {
    const auto& g = hold_.gains;
    const double max_out = params_.max_vertical_thrust;
    const double error = hold_.target_z - s.position.z;
    // Derivative on measurement: no kick when the target is re-captured.
    const double pd = g.kp * error - g.kd * s.velocity.z;

    const double candidate =
        std::clamp(hold_.integral + g.ki * error * params_.dt, -g.integral_limit, g.integral_limit);
    const double raw = pd + candidate;
    // Clamping anti-windup: freeze the integrator while saturated in the
    // direction the error would push it further.
    const bool saturated = (raw > max_out && error > 0.0) || (raw < 0.0 && error < 0.0);
    if (!saturated) hold_.integral = candidate;

    return std::clamp(pd + hold_.integral, 0.0, max_out);
}

ChannelThrust DroneRuntime::tick(const DroneState& state, Tick now) {
    for (auto& ch : channels_) {
        if (ch.active && now >= ch.active->expires_at) {
            ch.active.reset();
            if (ch.channel == Channel::vertical) hold_at(state.position.z);
        }
    }

    ChannelThrust out;
    if (const auto& v = channel(Channel::vertical).active) {
        out.vertical = v->opcode == Opcode::up ? params_.max_vertical_thrust : -params_.max_vertical_thrust;
    } else if (hold_.engaged) {
        out.vertical = hold_output(state);
    }
    if (const auto& y = channel(Channel::yaw).active) {
        // Clockwise seen from above is a negative rotation about +z.
        out.yaw = y->opcode == Opcode::turn_left ? params_.max_yaw_torque : -params_.max_yaw_torque;
    }
    if (const auto& l = channel(Channel::lateral).active) {
        out.lateral = l->opcode == Opcode::forward ? params_.max_lateral_thrust : -params_.max_lateral_thrust;
    }
    return out;
}

double read_height(const DroneState& state, double quantum, double noise_sd, RngStream& rng) {
    double z = state.position.z;
    if (noise_sd > 0.0) z += noise_sd * rng.gaussian();
    // The small bias keeps exact multiples like 1.23 from landing one quantum low.
    const double q = std::floor(z / quantum + 1e-9) * quantum;
    return std::max(q, 0.0);
}

}  // namespace blimp
