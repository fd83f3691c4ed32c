#pragma once

#include <numbers>
#include <stdexcept>
#include <string>

#include "blimp/vec3.hpp"

namespace blimp {

/// Actuator outputs for the three motor groups. Vertical and lateral are
/// forces in newtons; yaw is a torque in N·m, positive counter-clockwise
/// viewed from above.
struct ChannelThrust {
    double vertical = 0.0;
    double yaw = 0.0;
    double lateral = 0.0;

    friend constexpr bool operator==(const ChannelThrust&, const ChannelThrust&) = default;
};

struct DroneState {
    Vec3 position;
    Vec3 velocity;
    double heading = 0.0;  // radians, [-pi, pi)
    double yaw_rate = 0.0;  // rad/s
    ChannelThrust thrust;
    double time = 0.0;  // seconds since sim start

    friend constexpr bool operator==(const DroneState&, const DroneState&) = default;
};

struct PhysicsParams {
    double mass = 0.12;
    double net_weight = 0.02;  // weight minus buoyant lift; positive sinks
    double c_lin = 0.05;
    double c_yaw = 0.004;
    double inertia_z = 0.002;
    double max_vertical_thrust = 0.08;
    double max_lateral_thrust = 0.06;
    double max_yaw_torque = 0.002;
    double dt = 0.01;

    friend constexpr bool operator==(const PhysicsParams&, const PhysicsParams&) = default;
};

/// Thrown when a state handed to the integrator holds NaN or infinity.
class StateCorruption : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Empty string when valid, otherwise a description of the first violated
/// parameter constraint.
std::string validate_params(const PhysicsParams& params);

/// Maps any finite angle onto [-pi, pi).
double wrap_heading(double angle);

/// Clamps each channel to its actuator limit.
ChannelThrust clamp_thrust(const ChannelThrust& thrust, const PhysicsParams& params);

/// Net force on the hull: lateral thrust along the heading, vertical thrust
/// along +z, net weight along -z and linear drag against the velocity.
Vec3 net_force(const DroneState& state, const PhysicsParams& params);

/// Advances one fixed step with semi-implicit Euler: velocities first, then
/// position and heading from the updated velocities. Ground contact at z = 0
/// is inelastic.
DroneState step(const DroneState& state, const PhysicsParams& params);

inline constexpr double kPi = std::numbers::pi;

}  // namespace blimp
