#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blimp/dynamics.hpp"

namespace blimp {

struct FlockParams {
    double k_coh = 0.4;
    double k_sep = 1.2;
    double k_ali = 0.6;
    double r_neigh = 3.0;  // m
    double r_sep = 1.0;    // m
    double safety_radius = 0.3;  // m
    double max_accel = 0.5;  // m/s^2
    double horizon = 3.0;    // s, closest-approach lookahead
    // Heading loop used when mapping a desired acceleration onto the yaw channel.
    double heading_gain = 0.004;     // N·m/rad
    double heading_damping = 0.004;  // N·m·s/rad

    friend constexpr bool operator==(const FlockParams&, const FlockParams&) = default;
};

/// Empty when valid, otherwise the first violated constraint.
std::string validate_flock_params(const FlockParams& p);

struct PeerSnapshot {
    std::uint8_t drone_id = 0;
    Vec3 position;
    Vec3 velocity;
    double stamped = 0.0;   // sim time the sender sampled its state
    double received = 0.0;  // sim time the snapshot arrived
};

inline constexpr double kSnapshotMaxAge = 1.0;
inline constexpr double kCoincident = 1e-6;

/// Snapshots no older than one second at `now`.
std::vector<PeerSnapshot> fresh_snapshots(std::span<const PeerSnapshot> snapshots, double now);

/// Fresh snapshots within the neighbour radius of `self`, excluding `self`.
std::vector<PeerSnapshot> neighbours_of(const PeerSnapshot& self, std::span<const PeerSnapshot> snapshots,
                                        const FlockParams& p, double now);

struct FlockTerms {
    Vec3 cohesion;
    Vec3 separation;
    Vec3 alignment;

    Vec3 sum() const { return cohesion + separation + alignment; }
};

/// Unclamped, weighted boids terms for the given neighbour set.
FlockTerms flock_terms(const PeerSnapshot& self, std::span<const PeerSnapshot> neighbours, const FlockParams& p);

/// Sum of the boids terms, magnitude-clamped to max_accel.
Vec3 flock_accel(const PeerSnapshot& self, std::span<const PeerSnapshot> neighbours, const FlockParams& p);

/// Closest-point-of-approach repulsion against every other drone, clamped to
/// max_accel.
Vec3 avoidance_accel(const PeerSnapshot& self, std::span<const PeerSnapshot> others, const FlockParams& p);

/// Maps a desired world-frame acceleration onto the three actuation channels:
/// vertical from the z component, lateral from the component along the
/// heading, yaw torque steering toward the acceleration's azimuth. Each
/// channel is clamped to its actuator limit.
ChannelThrust flock_to_channels(const Vec3& accel, const DroneState& state, const PhysicsParams& physics,
                                const FlockParams& p);

}  // namespace blimp
