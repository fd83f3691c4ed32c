#include "blimp/world.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "blimp/hash.hpp"

namespace blimp {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

World::World(WorldConfig config) : config_(std::move(config)), link_rng_(config_.link.rng_seed) {
    if (auto err = validate_params(config_.physics); !err.empty()) throw std::invalid_argument("physics: " + err);
    if (auto err = validate_flock_params(config_.flock); !err.empty()) throw std::invalid_argument("flock: " + err);
    if (config_.drone_count < 1 || config_.drone_count > 254) {
        throw std::invalid_argument("drone count must be within 1..254");
    }
    if (static_cast<std::size_t>(config_.drone_count) > config_.arena.spawns.size()) {
        throw std::invalid_argument(fmt::format("arena has {} spawns for {} drones", config_.arena.spawns.size(),
                                                config_.drone_count));
    }
    if (!(config_.link.loss_prob >= 0.0 && config_.link.loss_prob <= 1.0)) {
        throw std::invalid_argument("link loss_prob must be within [0, 1]");
    }
    if (!(config_.link.latency_ms >= 0.0)) throw std::invalid_argument("link latency must be non-negative");
    if (!(config_.sensor.quantum > 0.0) || config_.sensor.noise_sd < 0.0) {
        throw std::invalid_argument("sensor quantum must be positive and noise non-negative");
    }
    if (config_.telemetry_divisor < 1) throw std::invalid_argument("telemetry divisor must be positive");

    latency_ticks_ = static_cast<Tick>(std::llround(config_.link.latency_ms / 1000.0 / config_.physics.dt));

    drones_.reserve(static_cast<std::size_t>(config_.drone_count));
    for (int i = 0; i < config_.drone_count; ++i) {
        const Spawn& sp = config_.arena.spawns[static_cast<std::size_t>(i)];
        DroneState s;
        s.position = sp.position;
        s.heading = sp.heading;
        drones_.push_back(Drone{static_cast<std::uint8_t>(i), s, DroneRuntime(config_.physics, sp.position.z, config_.hold),
                                RngStream(mix_seed(config_.seed, static_cast<std::uint64_t>(i))), false, {}, {},
                                0.0});
    }
}

void World::schedule(Tick due, std::variant<input::Command, input::Height, input::Peer> ev) {
    pending_.push(Pending{due, order_++, std::move(ev)});
}

ApplyStatus World::apply(const Input& in) {
    return std::visit(
        Overloaded{
            [&](const input::Command& c) {
                if (!has_drone(c.drone)) return ApplyStatus::unknown_drone;
                schedule(tick_ + latency_ticks_, c);
                return ApplyStatus::ok;
            },
            [&](const input::Height& h) {
                if (!has_drone(h.drone)) return ApplyStatus::unknown_drone;
                schedule(tick_ + latency_ticks_, h);
                return ApplyStatus::ok;
            },
            [&](const input::Peer& p) {
                if (!has_drone(p.src) || p.app.size() > proto::kMaxPeerApp) return ApplyStatus::rejected;
                return relay_peer(p.src, p.dst, p.app).unknown_destination ? ApplyStatus::unknown_drone
                                                                           : ApplyStatus::ok;
            },
            [&](const input::Flock& f) {
                if (!has_drone(f.drone)) return ApplyStatus::unknown_drone;
                Drone& d = drones_[f.drone];
                d.flocking = f.on;
                if (!f.on) d.peers.clear();
                return ApplyStatus::ok;
            },
            [&](const input::RaceArm& r) {
                if (!has_drone(r.drone)) return ApplyStatus::unknown_drone;
                Drone& d = drones_[r.drone];
                if (d.course && !d.course->finished()) return ApplyStatus::rejected;
                d.course = arm_course(config_.arena, time());
                return ApplyStatus::ok;
            },
            [&](const input::RaceAbort& r) {
                if (!has_drone(r.drone)) return ApplyStatus::unknown_drone;
                Drone& d = drones_[r.drone];
                if (!d.course || d.course->finished()) return ApplyStatus::rejected;
                deferred_.emplace_back(output::RaceResult{d.id, d.course->start_t, std::nullopt, true});
                d.course.reset();
                return ApplyStatus::ok;
            },
        },
        in);
}

RelayResult World::relay_peer(std::uint8_t src, std::uint8_t dst, std::span<const std::uint8_t> app) {
    RelayResult r;
    if (!has_drone(src) || app.size() > proto::kMaxPeerApp) {
        r.unknown_destination = !has_drone(src);
        return r;
    }
    std::vector<std::uint8_t> targets;
    if (dst == proto::kBroadcast) {
        for (const auto& d : drones_) {
            if (d.id != src) targets.push_back(d.id);
        }
    } else if (has_drone(dst)) {
        targets.push_back(dst);
    } else {
        r.unknown_destination = true;
        return r;
    }
    const std::vector<std::uint8_t> payload(app.begin(), app.end());
    for (std::uint8_t t : targets) {
        ++relay_draws_;
        if (link_rng_.bernoulli(config_.link.loss_prob)) continue;
        schedule(tick_ + latency_ticks_, input::Peer{src, t, payload});
        ++r.delivered;
    }
    return r;
}

void World::deliver(const Pending& p, std::vector<Output>& out) {
    std::visit(Overloaded{
                   [&](const input::Command& c) {
                       Drone& d = drones_[c.drone];
                       const auto verdict = d.runtime.enqueue(c.cmd, tick_, d.state);
                       out.emplace_back(output::CommandResult{c.reply_to, c.drone, c.cmd.seq, verdict});
                   },
                   [&](const input::Height& h) {
                       Drone& d = drones_[h.drone];
                       const double m = read_height(d.state, config_.sensor.quantum, config_.sensor.noise_sd,
                                                    d.sensor_rng);
                       out.emplace_back(output::HeightResult{h.reply_to, h.drone, h.seq, m});
                   },
                   [&](const input::Peer& pe) {
                       Drone& d = drones_[pe.dst];
                       if (auto snap = proto::decode_snapshot(pe.app); snap && d.flocking) {
                           const auto& s = *snap.value;
                           PeerSnapshot ps{pe.src,
                                           {s.position[0], s.position[1], s.position[2]},
                                           {s.velocity[0], s.velocity[1], s.velocity[2]},
                                           static_cast<double>(s.stamp_ms) / 1000.0,
                                           time()};
                           auto it = d.peers.find(pe.src);
                           if (it == d.peers.end() || it->second.stamped < ps.stamped) d.peers[pe.src] = ps;
                       }
                       out.emplace_back(output::PeerDelivered{pe.src, pe.dst, pe.app});
                   },
               },
               p.event);
}

ChannelThrust World::flock_thrust(Drone& d, const ChannelThrust& base) const {
    const double now = time();
    const PeerSnapshot self{d.id, d.state.position, d.state.velocity, now, now};
    std::vector<PeerSnapshot> known;
    known.reserve(d.peers.size());
    for (const auto& [id, snap] : d.peers) known.push_back(snap);

    const auto fresh = fresh_snapshots(known, now);
    const auto neighbours = neighbours_of(self, fresh, config_.flock, now);
    const Vec3 avoid = avoidance_accel(self, fresh, config_.flock);
    // Avoidance has first claim on the acceleration budget.
    const double budget = std::max(0.0, config_.flock.max_accel - norm(avoid));
    const Vec3 accel = avoid + clamp_norm(flock_terms(self, neighbours, config_.flock).sum(), budget);

    ChannelThrust t = flock_to_channels(accel, d.state, config_.physics, config_.flock);
    t.vertical += base.vertical;
    return t;
}

proto::Telemetry World::snapshot(const Drone& d) const {
    proto::Telemetry t;
    t.tick = static_cast<std::uint32_t>(tick_);
    t.time = d.state.time;
    t.position = d.state.position;
    t.velocity = d.state.velocity;
    t.heading = d.state.heading;
    t.yaw_rate = d.state.yaw_rate;
    t.height = d.last_height;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& active = d.runtime.channels()[i].active;
        if (!active) continue;
        const double remaining = static_cast<double>(active->expires_at - tick_) * config_.physics.dt * 1000.0;
        t.channels[i] = {static_cast<std::uint8_t>(active->opcode), static_cast<std::uint32_t>(std::llround(remaining))};
    }
    t.hold_engaged = d.runtime.hold().engaged;
    t.hold_target = d.runtime.hold().target_z;
    t.flocking = d.flocking;
    t.next_hoop = d.course ? static_cast<std::uint8_t>(d.course->next_hoop) : 0;
    return t;
}

std::vector<Output> World::step() {
    std::vector<Output> out = std::move(deferred_);
    deferred_.clear();
    while (!pending_.empty() && pending_.top().due <= tick_) {
        const Pending p = pending_.top();
        pending_.pop();
        deliver(p, out);
    }

    const double t_next = static_cast<double>(tick_ + 1) * config_.physics.dt;
    for (auto& d : drones_) {
        const ChannelThrust base = d.runtime.tick(d.state, tick_);
        d.state.thrust = clamp_thrust(d.flocking ? flock_thrust(d, base) : base, config_.physics);

        const Vec3 before = d.state.position;
        d.state = resolve_collisions(blimp::step(d.state, config_.physics), config_.arena);
        // Tick-derived time avoids drift from repeated dt addition.
        d.state.time = t_next;

        if (d.course && !d.course->finished() &&
            update_progress(*d.course, config_.arena, before, d.state.position, t_next)) {
            const auto& c = *d.course;
            std::optional<double> split;
            if (c.start_t) split = t_next - *c.start_t;
            out.emplace_back(output::Progress{d.id, c.crossings.back().hoop, t_next, split});
            if (c.finished()) out.emplace_back(output::RaceResult{d.id, c.start_t, c.finish_t, false});
        }
    }
    ++tick_;

    if (tick_ % config_.telemetry_divisor == 0) {
        for (auto& d : drones_) {
            d.last_height = read_height(d.state, config_.sensor.quantum, config_.sensor.noise_sd, d.sensor_rng);
            out.emplace_back(output::Telemetry{d.id, snapshot(d)});
        }
        for (auto& d : drones_) {
            if (!d.flocking) continue;
            proto::SnapshotPayload s;
            s.position = {static_cast<float>(d.state.position.x), static_cast<float>(d.state.position.y),
                          static_cast<float>(d.state.position.z)};
            s.velocity = {static_cast<float>(d.state.velocity.x), static_cast<float>(d.state.velocity.y),
                          static_cast<float>(d.state.velocity.z)};
            s.stamp_ms = static_cast<std::uint32_t>(std::llround(time() * 1000.0));
            relay_peer(d.id, proto::kBroadcast, proto::encode_snapshot(s));
        }
    }
    return out;
}

std::uint64_t World::state_hash() const {
    Fnv1a h;
    h.i64(tick_);
    h.u64(relay_draws_);
    h.u64(order_);
    h.u64(pending_.size());
    for (const auto& d : drones_) {
        h.u8(d.id);
        const auto& s = d.state;
        for (double v : {s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z,
                         s.heading, s.yaw_rate, s.thrust.vertical, s.thrust.yaw, s.thrust.lateral, s.time}) {
            h.f64(v);
        }
        for (const auto& ch : d.runtime.channels()) {
            if (ch.active) {
                h.u8(static_cast<std::uint8_t>(ch.active->opcode));
                h.i64(ch.active->activated_at);
                h.i64(ch.active->expires_at);
            } else {
                h.u8(0);
            }
        }
        const auto& hold = d.runtime.hold();
        h.f64(hold.target_z);
        h.f64(hold.integral);
        h.u8(hold.engaged ? 1 : 0);
        h.u8(d.flocking ? 1 : 0);
        h.f64(d.last_height);
        h.u64(d.peers.size());
        for (const auto& [id, p] : d.peers) {
            h.u8(id);
            for (double v : {p.position.x, p.position.y, p.position.z, p.velocity.x, p.velocity.y, p.velocity.z,
                             p.stamped, p.received}) {
                h.f64(v);
            }
        }
        if (d.course) {
            h.u8(1);
            h.u64(d.course->next_hoop);
            h.f64(d.course->start_t.value_or(-1.0));
            h.f64(d.course->finish_t.value_or(-1.0));
        } else {
            h.u8(0);
        }
    }
    return h.digest();
}

}  // namespace blimp
