#include "blimp/flocking.hpp"

#include <algorithm>
#include <cmath>

namespace blimp {

std::string validate_flock_params(const FlockParams& p) {
    if (!(p.r_neigh > 0.0) || !(p.r_sep > 0.0) || !(p.safety_radius > 0.0)) return "radii must be positive";
    if (p.r_sep > p.r_neigh) return "r_sep must not exceed r_neigh";
    if (p.k_coh < 0.0 || p.k_sep < 0.0 || p.k_ali < 0.0) return "weights must be non-negative";
    if (!(p.max_accel > 0.0)) return "max_accel must be positive";
    if (!(p.horizon >= 0.0)) return "horizon must be non-negative";
    if (p.heading_gain < 0.0 || p.heading_damping < 0.0) return "heading gains must be non-negative";
    return {};
}

std::vector<PeerSnapshot> fresh_snapshots(std::span<const PeerSnapshot> snapshots, double now) {
    std::vector<PeerSnapshot> out;
    for (const auto& s : snapshots) {
        if (now - s.stamped <= kSnapshotMaxAge) out.push_back(s);
    }
    return out;
}

std::vector<PeerSnapshot> neighbours_of(const PeerSnapshot& self, std::span<const PeerSnapshot> snapshots,
                                        const FlockParams& p, double now) {
    std::vector<PeerSnapshot> out;
    for (const auto& s : snapshots) {
        if (s.drone_id == self.drone_id || now - s.stamped > kSnapshotMaxAge) continue;
        if (norm(s.position - self.position) <= p.r_neigh) out.push_back(s);
    }
    return out;
}

FlockTerms flock_terms(const PeerSnapshot& self, std::span<const PeerSnapshot> neighbours, const FlockParams& p) {
    FlockTerms t;
    if (neighbours.empty()) return t;

    Vec3 centroid;
    Vec3 mean_v;
    for (const auto& n : neighbours) {
        centroid += n.position;
        mean_v += n.velocity;
        const Vec3 away = self.position - n.position;
        const double d = norm(away);
        if (d >= p.r_sep) continue;
        if (d < kCoincident) {
            const double push = p.k_sep / p.r_sep;
            t.separation += Vec3{self.drone_id < n.drone_id ? -push : push, 0.0, 0.0};
        } else {
            t.separation += away * (p.k_sep / (d * d));
        }
    }
    const double inv = 1.0 / static_cast<double>(neighbours.size());
    t.cohesion = (centroid * inv - self.position) * p.k_coh;
    t.alignment = (mean_v * inv - self.velocity) * p.k_ali;
    return t;
}

Vec3 flock_accel(const PeerSnapshot& self, std::span<const PeerSnapshot> neighbours, const FlockParams& p) {
    return clamp_norm(flock_terms(self, neighbours, p).sum(), p.max_accel);
}

namespace {

// Sideways axis shared by a head-on pair: +y of the lower-id drone's frame,
// whose x axis is its velocity (or the line toward the other drone at rest).
Vec3 head_on_axis(const PeerSnapshot& lower, const PeerSnapshot& higher) {
    Vec3 forward = lower.velocity;
    if (norm(forward) < 1e-9) forward = higher.position - lower.position;
    Vec3 side = cross(Vec3{0.0, 0.0, 1.0}, forward);
    const double n = norm(side);
    if (n < 1e-12) return {0.0, 1.0, 0.0};
    return side * (1.0 / n);
}

}  // namespace

Vec3 avoidance_accel(const PeerSnapshot& self, std::span<const PeerSnapshot> others, const FlockParams& p) {
    const double threshold = 2.0 * p.safety_radius;
    Vec3 total;
    for (const auto& o : others) {
        if (o.drone_id == self.drone_id) continue;
        const Vec3 dp = o.position - self.position;
        const Vec3 dv = o.velocity - self.velocity;
        const double vv = dot(dv, dv);
        const double t_star = vv > 1e-12 ? std::clamp(-dot(dp, dv) / vv, 0.0, p.horizon) : 0.0;
        const Vec3 gap = dp + dv * t_star;
        const double d_min = norm(gap);
        if (d_min >= threshold) continue;

        const double magnitude = p.max_accel * (1.0 - d_min / threshold);
        Vec3 dir;
        if (d_min > 1e-9) {
            dir = gap * (-1.0 / d_min);
        } else if (self.drone_id < o.drone_id) {
            dir = head_on_axis(self, o);
        } else {
            dir = -head_on_axis(o, self);
        }
        total += dir * magnitude;
    }
    return clamp_norm(total, p.max_accel);
}

ChannelThrust flock_to_channels(const Vec3& accel, const DroneState& state, const PhysicsParams& physics,
                                const FlockParams& p) {
    ChannelThrust out;
    out.vertical = physics.mass * accel.z;
    const Vec3 forward{std::cos(state.heading), std::sin(state.heading), 0.0};
    out.lateral = physics.mass * dot(accel, forward);

    out.yaw = -p.heading_damping * state.yaw_rate;
    if (std::hypot(accel.x, accel.y) > 1e-6) {
        const double error = wrap_heading(std::atan2(accel.y, accel.x) - state.heading);
        out.yaw += p.heading_gain * error;
    }
    return clamp_thrust(out, physics);
}

}  // namespace blimp
