#include "blimp/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace blimp {

namespace {

bool state_is_finite(const DroneState& s) {
    return is_finite(s.position) && is_finite(s.velocity) && std::isfinite(s.heading) &&
           std::isfinite(s.yaw_rate) && std::isfinite(s.thrust.vertical) &&
           std::isfinite(s.thrust.yaw) && std::isfinite(s.thrust.lateral) &&
           std::isfinite(s.time);
}

}  // namespace

std::string validate_params(const PhysicsParams& p) {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(p.mass)) return "mass must be > 0";
    if (!std::isfinite(p.net_weight)) return "net_weight must be finite";
    if (!positive(p.c_lin)) return "c_lin must be > 0";
    if (!positive(p.c_yaw)) return "c_yaw must be > 0";
    if (!positive(p.inertia_z)) return "I_z must be > 0";
    if (!positive(p.max_vertical_thrust)) return "max_vertical_thrust must be > 0";
    if (!positive(p.max_lateral_thrust)) return "max_lateral_thrust must be > 0";
    if (!positive(p.max_yaw_torque)) return "max_yaw_torque must be > 0";
    if (!positive(p.dt)) return "dt must be > 0";
    if (p.max_vertical_thrust <= p.net_weight) return "max_vertical_thrust must exceed net_weight";
    return {};
}

double wrap_heading(double angle) {
    constexpr double two_pi = 2.0 * kPi;
    if (angle >= -kPi && angle < kPi) return angle;
    double r = std::fmod(angle + kPi, two_pi);
    if (r < 0.0) r += two_pi;
    // fmod of a value just below a multiple of 2pi can round up to 2pi itself
    if (r >= two_pi) r -= two_pi;
    return r - kPi;
}

ChannelThrust clamp_thrust(const ChannelThrust& t, const PhysicsParams& p) {
    return {
        std::clamp(t.vertical, -p.max_vertical_thrust, p.max_vertical_thrust),
        std::clamp(t.yaw, -p.max_yaw_torque, p.max_yaw_torque),
        std::clamp(t.lateral, -p.max_lateral_thrust, p.max_lateral_thrust),
    };
}

Vec3 net_force(const DroneState& s, const PhysicsParams& p) {
    const Vec3 thrust{s.thrust.lateral * std::cos(s.heading), s.thrust.lateral * std::sin(s.heading),
                      s.thrust.vertical};
    return thrust - Vec3{0.0, 0.0, p.net_weight} - s.velocity * p.c_lin;
}

DroneState step(const DroneState& s, const PhysicsParams& p) {
    if (!state_is_finite(s)) throw StateCorruption("non-finite drone state at t=" + std::to_string(s.time));

    DroneState next = s;
    const Vec3 accel = net_force(s, p) * (1.0 / p.mass);
    next.velocity = s.velocity + accel * p.dt;

    const double yaw_accel = (s.thrust.yaw - p.c_yaw * s.yaw_rate) / p.inertia_z;
    next.yaw_rate = s.yaw_rate + yaw_accel * p.dt;

    next.position = s.position + next.velocity * p.dt;
    next.heading = wrap_heading(s.heading + next.yaw_rate * p.dt);

    if (next.position.z <= 0.0) {
        next.position.z = 0.0;
        if (next.velocity.z < 0.0) next.velocity.z = 0.0;
    }
    next.time = s.time + p.dt;
    return next;
}

}  // namespace blimp
